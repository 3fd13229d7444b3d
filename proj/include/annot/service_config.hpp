#pragma once

#include <filesystem>
#include <string>

#include "annot/loop_engine.hpp"

namespace annot {

/// Defaults for new projects and for the HTTP server, read from an INI file:
///
///   [backend]  kind, endpoint, model, api_key_env, system_prompt, max_tokens, timeout_s
///   [batch]    min, max, few_shot, summary_examples
///   [policy]   target_accuracy, max_rounds
///   [session]  mode, context_budget
///   [project]  task_brief
///   [server]   host, port, root
struct ServiceConfig {
  ProjectSettings project;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path root = "projects";

  /// Throws kConfiguration on unreadable files and invalid values.
  static ServiceConfig load(const std::filesystem::path& path);
  static ServiceConfig parse(const std::string& ini_text);
};

}  // namespace annot
