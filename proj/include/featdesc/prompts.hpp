#pragma once

#include <map>
#include <string>

namespace featdesc {

struct PromptTemplate {
  std::string name;
  std::string version;
  std::string text;
};

/// Versioned prompt templates. The builtin set ships inside the binary; a
/// directory of <name>.txt files overrides it so prompts can be swapped
/// without a code change. Versions are recorded in the run manifest.
class PromptLibrary {
 public:
  static PromptLibrary builtin();

  /// Builtin templates overlaid with any files found under `dir`.
  static PromptLibrary from_dir(const std::string& dir);

  const PromptTemplate& get(const std::string& name) const;
  std::map<std::string, std::string> versions() const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// Replace {{KEY}} placeholders. Unresolved placeholders are an error.
std::string render_prompt(const PromptTemplate& tpl,
                          const std::map<std::string, std::string>& values);

}  // namespace featdesc
