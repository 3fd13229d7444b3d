#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace annot {

/// Plain-text template with `{{name}}` placeholders.
class Template {
 public:
  Template() = default;
  explicit Template(std::string text);

  /// Throws if a placeholder has no value.
  std::string render(const std::map<std::string, std::string>& values) const;
  const std::vector<std::string>& placeholders() const { return placeholders_; }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  std::vector<std::string> placeholders_;
};

/// Named instruction templates. Built-in defaults can be overridden per
/// project by `<dir>/<name>.txt`.
class TemplateSet {
 public:
  static constexpr const char* kVersion = "annot-templates/1";

  static TemplateSet defaults();
  /// Defaults with any `<name>.txt` found in `dir` replacing the built-in text.
  static TemplateSet load(const std::filesystem::path& dir);

  const Template& get(const std::string& name) const;
  void set(const std::string& name, std::string text);
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Template> templates_;
};

}  // namespace annot
