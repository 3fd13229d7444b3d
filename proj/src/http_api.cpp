#include "annot/http_api.hpp"

#include <thread>

#include <httplib.h>

#include "annot/error.hpp"

namespace annot {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return 400;
    case ErrorCode::kConfiguration: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kBudgetExceeded: return 409;
    case ErrorCode::kUnprocessable: return 422;
    case ErrorCode::kUnavailable: return 502;
    case ErrorCode::kIo: return 500;
  }
  return 500;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kInvalidArgument, "request body is not valid JSON");
  return j;
}

using Handler = std::function<json(const httplib::Request&)>;

httplib::Server::Handler wrap(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, h(req));
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), {{"error", to_string(e.code())}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

struct ApiServer::Impl {
  ProjectService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ProjectService& s) : service(s) { install(); }

  ProjectDir dir(const httplib::Request& req) const { return service.dir_of(req.matches[1]); }

  void install() {
    server.Post("/projects", wrap([this](const auto& req) { return service.create_project(body_json(req)); }));
    server.Get(R"(/projects/([^/]+))", wrap([this](const auto& req) { return service.status(dir(req)); }));
    server.Post(R"(/projects/([^/]+)/dataset)",
                wrap([this](const auto& req) { return service.import_dataset(dir(req), req.body); }));
    server.Post(R"(/projects/([^/]+)/plan)",
                wrap([this](const auto& req) { return service.start(dir(req), body_json(req)); }));
    server.Post(R"(/projects/([^/]+)/pretrain)", wrap([this](const auto& req) { return service.pretrain(dir(req)); }));
    server.Post(R"(/projects/([^/]+)/batches)",
                wrap([this](const auto& req) { return service.advance_batch(dir(req)); }));
    server.Get(R"(/projects/([^/]+)/batches/current)",
               wrap([this](const auto& req) { return service.current_batch(dir(req)); }));
    server.Post(R"(/projects/([^/]+)/batches/([^/]+)/corrections)", wrap([this](const auto& req) {
                  return service.submit_corrections(dir(req), req.matches[2], body_json(req));
                }));
    server.Post(R"(/projects/([^/]+)/validate)",
                wrap([this](const auto& req) { return service.validate(dir(req), body_json(req)); }));
    server.Post(R"(/projects/([^/]+)/evaluate)", wrap([this](const auto& req) { return service.evaluate(dir(req)); }));
    server.Get(R"(/projects/([^/]+)/metrics)", wrap([this](const auto& req) { return service.metrics(dir(req)); }));
    server.Get(R"(/projects/([^/]+)/transcript)",
               wrap([this](const auto& req) { return service.transcript(dir(req)); }));
    server.Get(R"(/projects/([^/]+)/events)", wrap([this](const httplib::Request& req) {
                 std::uint64_t since = 0;
                 long timeout_ms = 0;
                 try {
                   if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
                   if (req.has_param("timeout")) timeout_ms = std::stol(req.get_param_value("timeout"));
                 } catch (const std::exception&) {
                   fail(ErrorCode::kInvalidArgument, "since and timeout must be integers");
                 }
                 timeout_ms = std::clamp(timeout_ms, 0L, 60'000L);
                 return service.events(dir(req), since, std::chrono::milliseconds(timeout_ms));
               }));
  }
};

ApiServer::ApiServer(ProjectService& service) : impl_(std::make_unique<Impl>(service)) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorCode::kUnavailable, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ApiServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) fail(ErrorCode::kUnavailable, "cannot listen on " + host + ":" + std::to_string(port));
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace annot
