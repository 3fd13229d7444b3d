#include "annot/event_log.hpp"

#include <fstream>

#include "annot/error.hpp"

namespace annot {

using nlohmann::json;

json Event::to_json() const { return {{"seq", seq}, {"type", type}, {"data", data}}; }

Event Event::from_json(const json& j) {
  return {j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(), j.value("data", json::object())};
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (!path_.empty() && std::filesystem::exists(path_)) events_ = read_file(path_);
}

Event EventLog::append(std::string type, json data) {
  std::lock_guard lock(mu_);
  Event e{events_.size() + 1, std::move(type), std::move(data)};
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << e.to_json().dump() << '\n';
    out.flush();
    if (!out) fail(ErrorCode::kIo, "cannot append to event log " + path_.string());
  }
  events_.push_back(e);
  cv_.notify_all();
  return e;
}

std::vector<Event> EventLog::all() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<Event> EventLog::since(std::uint64_t seq) const {
  std::lock_guard lock(mu_);
  if (seq >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(seq), events_.end()};
}

std::vector<Event> EventLog::wait_since(std::uint64_t seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return events_.size() > seq; });
  if (seq >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(seq), events_.end()};
}

std::uint64_t EventLog::last_seq() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

std::vector<Event> EventLog::read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open event log " + path.string());
  std::vector<Event> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Event::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorCode::kIo, path.string() + ":" + std::to_string(n) + ": corrupt event: " + e.what());
    }
    if (out.back().seq != out.size()) {
      fail(ErrorCode::kIo, path.string() + ":" + std::to_string(n) + ": event sequence gap");
    }
  }
  return out;
}

void EventLog::write_file(const std::filesystem::path& path, const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& e : events) out << e.to_json().dump() << '\n';
}

}  // namespace annot
