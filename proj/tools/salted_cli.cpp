// salted: train, split, serve, infer, eval.
//
// Each subcommand reads defaults, then --config FILE, then --set KEY=VALUE
// overrides, then its named flags. Run `salted <cmd> --help` for flags and
// `salted <cmd> --print-config` for the full key list with defaults.

#include <csignal>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "salted/commands.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct Subcommand {
  CLI::App* app = nullptr;
  std::vector<salted::KeySpec> (*schema)() = nullptr;
  std::string config_file;
  std::vector<std::string> sets;
  bool print_only = false;
  // Config key -> named flag value; empty when the flag was not given.
  std::map<std::string, std::string> bound;
};

void add_common(Subcommand& sc) {
  sc.app->add_option("--config", sc.config_file, "config file (key = value, [sections])");
  sc.app->add_option("--set", sc.sets, "override KEY=VALUE (repeatable)");
  sc.app->add_flag("--print-config", sc.print_only, "print the resolved config and exit");
}

void bind(Subcommand& sc, const std::string& flag, const std::string& key, const std::string& help) {
  sc.app->add_option(flag, sc.bound[key], help + " (" + key + ")");
}

salted::RunConfig resolve(const Subcommand& sc) {
  salted::RunConfig cfg(sc.schema());
  if (!sc.config_file.empty()) cfg.merge_file(sc.config_file);
  for (const auto& s : sc.sets) cfg.set_override(s);
  for (const auto& [key, value] : sc.bound) {
    if (!value.empty()) cfg.set(key, value);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Salted classifiers with split client/server inference"};
  app.require_subcommand(1);

  Subcommand train, split, serve, infer, eval;
  train.app = app.add_subcommand("train", "train a model and write it with its report");
  train.schema = salted::train_schema;
  split.app = app.add_subcommand("split", "partition a model into early and later parts");
  split.schema = salted::split_schema;
  serve.app = app.add_subcommand("serve", "serve a later part until SIGINT/SIGTERM");
  serve.schema = salted::serve_schema;
  infer.app = app.add_subcommand("infer", "run one split inference against a server");
  infer.schema = salted::infer_schema;
  eval.app = app.add_subcommand("eval", "report decoded, per-salt and adversary accuracy");
  eval.schema = salted::eval_schema;
  for (Subcommand* sc : {&train, &split, &serve, &infer, &eval}) add_common(*sc);

  bind(train, "--seed", "seed", "seed");
  bind(train, "--preset", "preset", "preset");
  bind(train, "--salted", "model.salted", "salted training");
  bind(train, "--salts", "model.salts", "salt count");
  bind(train, "--epochs", "train.epochs", "epochs");
  bind(train, "--batch-size", "train.batch_size", "batch size");
  bind(train, "--lr", "train.learning_rate", "learning rate");
  bind(train, "--out", "output.model", "model path");
  bind(train, "--report", "output.report", "report stem");
  bind(train, "--train-csv", "data.train_csv", "training CSV");
  bind(train, "--test-csv", "data.test_csv", "test CSV");

  bind(split, "--seed", "seed", "seed");
  bind(split, "--model", "split.model", "full model");
  bind(split, "--cut", "split.cut", "cut layer index");
  bind(split, "--early", "split.early", "early part output");
  bind(split, "--later", "split.later", "later part output");
  bool verify = false;
  split.app->add_flag("--verify", verify, "check composition before writing (split.verify)");

  bind(serve, "--model", "serve.model", "later part");
  bind(serve, "--bind", "serve.bind", "host:port");
  bind(serve, "--timeout-ms", "serve.timeout_ms", "session timeout");
  bind(serve, "--max-payload", "serve.max_payload", "max payload bytes");
  bind(serve, "--port-file", "serve.port_file", "write bound port here");

  bind(infer, "--seed", "seed", "seed");
  bind(infer, "--preset", "preset", "fixture preset");
  bind(infer, "--early", "infer.early", "early part");
  bind(infer, "--server", "infer.server", "host:port");
  bind(infer, "--salt", "infer.salt", "salt");
  bind(infer, "--fixture", "infer.fixture", "test-split sample index");
  bind(infer, "--csv", "data.test_csv", "input CSV");
  bind(infer, "--row", "infer.csv_row", "1-based CSV data row");
  bind(infer, "--timeout-ms", "infer.timeout_ms", "timeout");

  bind(eval, "--seed", "seed", "seed");
  bind(eval, "--preset", "preset", "preset");
  bind(eval, "--model", "eval.model", "full model");
  bind(eval, "--early", "eval.early", "early part");
  bind(eval, "--later", "eval.later", "later part");
  bind(eval, "--policy", "eval.policy", "salt policy");
  bind(eval, "--salt", "eval.salt", "fixed salt");
  bind(eval, "--test-csv", "data.test_csv", "test CSV");
  bind(eval, "--report", "eval.report", "report stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : salted::kExitConfig;
  }

  Subcommand* chosen = nullptr;
  for (Subcommand* sc : {&train, &split, &serve, &infer, &eval}) {
    if (sc->app->parsed()) chosen = sc;
  }

  salted::Console io{std::cout, std::cerr};
  salted::RunConfig cfg({});
  try {
    cfg = resolve(*chosen);
    if (chosen == &split && verify) cfg.set("split.verify", "true");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return salted::kExitConfig;
  }
  if (chosen->print_only) {
    std::cout << cfg.resolved();
    return 0;
  }

  if (chosen == &train) return salted::cmd_train(cfg, io);
  if (chosen == &split) return salted::cmd_split(cfg, io);
  if (chosen == &infer) return salted::cmd_infer(cfg, io);
  if (chosen == &eval) return salted::cmd_eval(cfg, io);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);
  return salted::cmd_serve(cfg, io, g_stop);
}
