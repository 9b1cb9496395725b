#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace prism::cli {

/// Command-line options that override config values. Only options the user
/// actually passed produce overrides.
class Flags {
 public:
  template <typename T>
  CLI::Option* option(CLI::App& app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto slot = std::make_shared<T>();
    auto* opt = app.add_option(name, *slot, help);
    entries_.push_back({pointer, opt, [slot] { return nlohmann::json(*slot); }});
    return opt;
  }

  /// Boolean switch; `--x` sets true, `--no-x` sets false.
  CLI::Option* toggle(CLI::App& app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto slot = std::make_shared<bool>(false);
    auto* opt = app.add_flag("--" + name + ",!--no-" + name, *slot, help);
    entries_.push_back({pointer, opt, [slot] { return nlohmann::json(*slot); }});
    return opt;
  }

  std::vector<std::pair<std::string, nlohmann::json>> overrides() const {
    std::vector<std::pair<std::string, nlohmann::json>> out;
    for (const auto& e : entries_) {
      if (e.opt->count() > 0) out.emplace_back(e.pointer, e.value());
    }
    return out;
  }

 private:
  struct Entry {
    std::string pointer;
    CLI::Option* opt;
    std::function<nlohmann::json()> value;
  };
  std::vector<Entry> entries_;
};

struct Command {
  std::string name;
  std::string help;
  /// Config sections this command reads, with their defaults.
  nlohmann::json defaults;
  std::function<void(CLI::App&, Flags&)> add_flags;
  /// Returns the summary written to summary.json.
  std::function<nlohmann::json(const nlohmann::json& config, const std::filesystem::path& out_dir)> run;
};

std::vector<Command> commands();

/// Every section name any command reads.
std::vector<std::string> all_sections();

}  // namespace prism::cli
