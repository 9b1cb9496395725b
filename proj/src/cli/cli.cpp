#include "prism/cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <ostream>

#include "commands.hpp"
#include "prism/core/io.hpp"

namespace prism::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out_dir;
  CLI::Option* out_dir_opt = nullptr;
};

int report(std::ostream& err, ErrorKind kind, const std::string& message, const std::vector<std::string>& fields = {}) {
  err << error_json(kind, message, fields) << "\n";
  return exit_code(kind);
}

json run_command(const Command& cmd, const Common& common, const Flags& flags, std::ostream& out) {
  std::optional<json> file;
  if (!common.config.empty()) {
    try {
      file = read_json(common.config);
    } catch (const Error& e) {
      throw ConfigError("config", e.what());
    }
  }
  // The output directory is where the echo goes, not part of the echo.
  std::optional<std::string> out_dir;
  if (file && file->is_object() && file->contains("out_dir")) {
    if (!(*file)["out_dir"].is_string()) throw ConfigError("out_dir", "must be a string");
    out_dir = (*file)["out_dir"].get<std::string>();
    file->erase("out_dir");
  }
  if (common.out_dir_opt->count() > 0) out_dir = common.out_dir;
  if (!out_dir || out_dir->empty()) {
    throw ConfigError("out_dir", "required (--out-dir or \"out_dir\" in the config file)");
  }

  json defaults = cmd.defaults;
  defaults["seed"] = std::uint64_t{0};
  std::set<std::string> foreign;
  for (const auto& s : all_sections()) {
    if (!defaults.contains(s)) foreign.insert(s);
  }
  const auto cfg = resolve_config(defaults, file, flags.overrides(), foreign);
  const auto& seed = cfg["seed"];
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    throw ConfigError("seed", "must be a non-negative integer");
  }

  const fs::path dir = *out_dir;
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg);
  json summary = cmd.run(cfg, dir);
  summary["command"] = cmd.name;
  write_json(dir / "summary.json", summary);
  out << summary.dump(2) << "\n";
  return summary;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature analysis toolkit for detection models", "prism"};
  app.require_subcommand(1);
  const auto cmds = commands();
  std::vector<Common> commons(cmds.size());
  std::vector<Flags> flags(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--config", commons[i].config, "JSON config file");
    commons[i].out_dir_opt = sub->add_option("--out-dir", commons[i].out_dir, "Run directory for all outputs");
    flags[i].option<std::uint64_t>(*sub, "--seed", "/seed", "Random seed");
    cmds[i].add_flags(*sub, flags[i]);
    subs.push_back(sub);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, ErrorKind::config, e.what());
  }

  const auto it = std::find_if(subs.begin(), subs.end(), [](CLI::App* s) { return s->parsed(); });
  const auto i = static_cast<std::size_t>(it - subs.begin());
  try {
    run_command(cmds[i], commons[i], flags[i], out);
    return kExitOk;
  } catch (const ConfigError& e) {
    return report(err, ErrorKind::config, e.what(), e.fields());
  } catch (const Error& e) {
    return report(err, e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report(err, ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    err << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return kExitInternal;
  }
}

}  // namespace prism::cli
