#include "annot/service_config.hpp"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "annot/error.hpp"

namespace annot {

namespace pt = boost::property_tree;

namespace {

// Unlike ptree::get(path, default), a present but malformed value throws.
template <typename T>
T read(const pt::ptree& tree, const std::string& key, const T& current) {
  if (!tree.get_child_optional(key)) return current;
  return tree.get<T>(key);
}

}  // namespace

ServiceConfig ServiceConfig::parse(const std::string& ini_text) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::kConfiguration, std::string("config: ") + e.what());
  }

  ServiceConfig c;
  auto& p = c.project;
  try {
    if (auto kind = tree.get_optional<std::string>("backend.kind")) {
      auto b = parse_backend_kind(*kind);
      if (!b) fail(ErrorCode::kConfiguration, "config: backend.kind must be scripted or remote");
      p.backend = *b;
    }
    p.remote.url = read(tree, "backend.endpoint", p.remote.url);
    p.remote.model = read(tree, "backend.model", p.remote.model);
    p.remote.api_key_env = read(tree, "backend.api_key_env", p.remote.api_key_env);
    p.remote.system_prompt = read(tree, "backend.system_prompt", p.remote.system_prompt);
    p.remote.max_tokens = read(tree, "backend.max_tokens", p.remote.max_tokens);
    p.remote.timeout = std::chrono::seconds(read(tree, "backend.timeout_s", static_cast<long>(p.remote.timeout.count())));

    p.forge.batch_min = read(tree, "batch.min", p.forge.batch_min);
    p.forge.batch_max = read(tree, "batch.max", p.forge.batch_max);
    p.forge.few_shot = read(tree, "batch.few_shot", p.forge.few_shot);
    p.forge.summary_examples = read(tree, "batch.summary_examples", p.forge.summary_examples);

    p.policy.target_accuracy = read(tree, "policy.target_accuracy", p.policy.target_accuracy);
    p.policy.max_rounds = read(tree, "policy.max_rounds", p.policy.max_rounds);
    p.forge.target_accuracy = p.policy.target_accuracy;

    if (auto mode = tree.get_optional<std::string>("session.mode")) {
      auto m = parse_session_mode(*mode);
      if (!m) fail(ErrorCode::kConfiguration, "config: session.mode must be single or per_phase");
      p.session_mode = *m;
    }
    p.context_budget = read(tree, "session.context_budget", p.context_budget);
    p.task_brief = read(tree, "project.task_brief", p.task_brief);

    c.host = read(tree, "server.host", c.host);
    c.port = read(tree, "server.port", c.port);
    c.root = read(tree, "server.root", c.root.string());
  } catch (const pt::ptree_bad_data& e) {
    fail(ErrorCode::kConfiguration, std::string("config: bad value: ") + e.what());
  }
  if (p.forge.batch_max == 0 || p.forge.batch_min > p.forge.batch_max) {
    fail(ErrorCode::kConfiguration, "config: batch bounds must satisfy 0 < min <= max");
  }
  try {
    p.policy.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfiguration, std::string("config: ") + e.what());
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfiguration, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace annot
