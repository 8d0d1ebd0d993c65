#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "gridparse/error.hpp"
#include "gridparse/harness.hpp"

namespace {

std::string dashed(std::string s) {
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

struct Sub {
  const gridparse::CommandSchema* schema = nullptr;
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> flags;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridparse: grid automata that recognize formal languages"};
  app.require_subcommand(1);
  std::vector<Sub> subs;
  subs.reserve(gridparse::command_schemas().size());
  for (const auto& schema : gridparse::command_schemas()) {
    Sub& s = subs.emplace_back();
    s.schema = &schema;
    s.app = app.add_subcommand(schema.name, schema.help);
    s.app->add_option("--config", s.config_file, "key = value file; flags override it");
    for (const auto& k : schema.keys) {
      std::string names = "--" + k.key;
      if (dashed(k.key) != k.key) names += ",--" + dashed(k.key);
      std::string help = k.help;
      if (!k.default_value.empty()) help += " [default: " + k.default_value + "]";
      s.app->add_option(names, s.flags[k.key], help);
    }
  }
  CLI11_PARSE(app, argc, argv);

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    gridparse::RunConfig cfg(*s.schema);
    try {
      if (!s.config_file.empty()) cfg = gridparse::RunConfig::load(*s.schema, s.config_file);
      for (const auto& k : s.schema->keys) {
        if (s.app->count("--" + k.key) > 0) cfg.set(k.key, s.flags[k.key]);
      }
    } catch (const gridparse::Error& e) {
      std::cerr << R"({"error":{"kind":")" << gridparse::to_string(e.kind()) << R"(","message":)"
                << nlohmann::json(e.what()).dump() << "}}\n";
      return 2;
    }
    return gridparse::run_command(cfg);
  }
  return 1;
}
