#include <thread>

#include <httplib.h>

#include "annot/error.hpp"
#include "annot/model_gateway.hpp"

namespace annot {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::kConfiguration, "endpoint URL needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorCode::kConfiguration, "unsupported URL scheme: " + scheme);
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

class RemoteBackend : public ChatBackend {
 public:
  RemoteBackend(RemoteConfig config, std::string api_key)
      : config_(std::move(config)), api_key_(std::move(api_key)), url_(split_url(config_.url)) {
    if (!config_.retry.sleep) {
      config_.retry.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
  }

  std::string complete(const std::vector<Turn>& history, const PromptDoc& prompt) override {
    const std::string body = request_body(history, prompt).dump();
    httplib::Client client(url_.base);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(std::chrono::seconds(60));
    const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

    std::string last_error;
    for (std::size_t attempt = 0;; ++attempt) {
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (res && res->status == 200) return extract_content(res->body);
      if (res) {
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status == 401 || res->status == 403) {
          fail(ErrorCode::kConfiguration, "remote backend rejected the credential (" + last_error + ")");
        }
        if (!transient_status(res->status)) {
          fail(ErrorCode::kUnavailable, "remote backend returned " + last_error);
        }
      } else {
        last_error = httplib::to_string(res.error());
      }
      if (attempt >= config_.retry.backoff.size()) break;
      config_.retry.sleep(config_.retry.backoff[attempt]);
    }
    fail(ErrorCode::kUnavailable, "remote backend unavailable after " +
                                      std::to_string(config_.retry.backoff.size() + 1) +
                                      " attempts: " + last_error);
  }

 private:
  json request_body(const std::vector<Turn>& history, const PromptDoc& prompt) const {
    json messages = json::array();
    if (!config_.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", config_.system_prompt}});
    for (const auto& t : history) {
      messages.push_back({{"role", "user"}, {"content", t.prompt}});
      messages.push_back({{"role", "assistant"}, {"content", t.reply}});
    }
    messages.push_back({{"role", "user"}, {"content", prompt.rendered}});
    json j = {{"model", config_.model}, {"messages", messages}};
    if (config_.max_tokens > 0) j["max_tokens"] = config_.max_tokens;
    return j;
  }

  static std::string extract_content(const std::string& body) {
    const auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::kUnavailable, "remote backend returned malformed JSON");
    // chat-completions shape
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
      const auto& m = j["choices"][0].value("message", json::object());
      if (m.contains("content") && m["content"].is_string()) return m["content"].get<std::string>();
    }
    // messages shape: content is a list of typed parts
    if (j.contains("content") && j["content"].is_array()) {
      std::string out;
      for (const auto& part : j["content"]) {
        if (part.value("type", "") == "text") out += part.value("text", "");
      }
      return out;
    }
    fail(ErrorCode::kUnavailable, "remote backend response has no message content");
  }

  RemoteConfig config_;
  std::string api_key_;
  SplitUrl url_;
};

}  // namespace

std::unique_ptr<ChatBackend> make_remote_backend(RemoteConfig config, std::string api_key) {
  return std::make_unique<RemoteBackend>(std::move(config), std::move(api_key));
}

}  // namespace annot
