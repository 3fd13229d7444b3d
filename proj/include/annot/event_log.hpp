#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace annot {

struct Event {
  std::uint64_t seq = 0;  // 1-based position in the log
  std::string type;
  nlohmann::json data;

  nlohmann::json to_json() const;
  static Event from_json(const nlohmann::json& j);
};

/// Append-only JSONL event log. Every append is written and flushed before
/// it becomes visible to readers.
class EventLog {
 public:
  /// An empty path keeps the log in memory only.
  explicit EventLog(std::filesystem::path path = {});

  const std::filesystem::path& path() const { return path_; }

  Event append(std::string type, nlohmann::json data);
  std::vector<Event> all() const;
  std::vector<Event> since(std::uint64_t seq) const;
  /// Blocks until an event newer than `seq` exists or the timeout passes.
  std::vector<Event> wait_since(std::uint64_t seq, std::chrono::milliseconds timeout) const;
  std::uint64_t last_seq() const;

  static std::vector<Event> read_file(const std::filesystem::path& path);
  static void write_file(const std::filesystem::path& path, const std::vector<Event>& events);

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<Event> events_;
};

}  // namespace annot
