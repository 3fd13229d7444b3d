#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "annot/loop_engine.hpp"
#include "annot/service_config.hpp"

namespace annot {

/// "500,100,100+101,102" -> pretraining, supervised, validation rounds, evaluation.
SplitSpec parse_split_spec(const std::string& text);

/// Project-scoped operations shared by the CLI and the HTTP API. Every
/// result is a JSON document derived from stored state only.
class ProjectService {
 public:
  ProjectService(std::filesystem::path root, ServiceConfig config, OpenOptions options = {});

  const std::filesystem::path& root() const { return root_; }
  const ServiceConfig& config() const { return config_; }
  /// Throws kInvalidArgument on ids that are not plain names.
  ProjectDir dir_of(const std::string& project_id) const;

  /// {project_id, scheme?}. Throws kConflict when the project exists.
  nlohmann::json create_project(const nlohmann::json& body);
  nlohmann::json create_project(const ProjectDir& dir, const std::optional<LabelScheme>& scheme);
  /// JSONL text or {"records": [...]}; only before the project starts.
  nlohmann::json import_dataset(const ProjectDir& dir, const std::string& body);
  /// Splits the dataset and starts the loop. Body keys: split (object or
  /// "a,b,c+d,e" string), seed, plan (explicit ids), policy, backend,
  /// session_mode, script, task_brief, batch_min, batch_max, remote.
  nlohmann::json start(const ProjectDir& dir, const nlohmann::json& body);

  nlohmann::json pretrain(const ProjectDir& dir);
  nlohmann::json advance_batch(const ProjectDir& dir);
  nlohmann::json current_batch(const ProjectDir& dir);
  nlohmann::json submit_corrections(const ProjectDir& dir, const std::string& round_id, const nlohmann::json& body);
  nlohmann::json validate(const ProjectDir& dir, const nlohmann::json& body);
  nlohmann::json evaluate(const ProjectDir& dir);
  nlohmann::json metrics(const ProjectDir& dir);
  nlohmann::json status(const ProjectDir& dir);
  nlohmann::json transcript(const ProjectDir& dir);
  /// Loop events after `since` (prompt and reply bodies omitted), waiting up
  /// to `timeout` for one to arrive.
  nlohmann::json events(const ProjectDir& dir, std::uint64_t since, std::chrono::milliseconds timeout);

  std::shared_ptr<Project> project(const ProjectDir& dir);
  /// Releases a cached project (and its file lock).
  void close(const ProjectDir& dir);

 private:
  nlohmann::json round_view(const Project& p, const RoundState& r) const;

  std::filesystem::path root_;
  ServiceConfig config_;
  OpenOptions options_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Project>> open_;
};

}  // namespace annot
