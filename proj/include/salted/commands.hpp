#pragma once

// Subcommands behind the `salted` tool. Each takes a resolved RunConfig,
// prints that config first, and returns a process exit code:
//
//   0  success
//   2  configuration error (bad key or value, invalid cut index)
//   3  data error (unreadable or malformed dataset)
//   4  training failure
//   5  runtime error (model files, networking, verification mismatch)

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "salted/config.hpp"
#include "salted/dataset.hpp"
#include "salted/error.hpp"
#include "salted/model_io.hpp"
#include "salted/network.hpp"
#include "salted/presets.hpp"
#include "salted/report.hpp"
#include "salted/rng.hpp"
#include "salted/runtime.hpp"
#include "salted/trainer.hpp"

namespace salted {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitTraining = 4,
  kExitRuntime = 5,
};

struct Console {
  std::ostream& out;
  std::ostream& err;
};

/// An error already classified by the stage that raised it.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(int exit_code, const std::string& what) : std::runtime_error(what), exit_code(exit_code) {}
  int exit_code;
};

namespace detail {

template <class F>
auto in_stage(int exit_code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(exit_code, e.what());
  }
}

inline int run_command(Console io, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const StageFailure& e) {
    io.err << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline void print_config(Console io, const std::string& command, const RunConfig& cfg) {
  io.out << "# resolved config (" << command << ")\n" << cfg.resolved() << "# end config\n";
}

inline std::vector<KeySpec> data_keys() {
  return {
      {"data.source", ValueType::String, "preset", "preset | csv"},
      {"data.train_csv", ValueType::String, "", "training CSV (source = csv)"},
      {"data.test_csv", ValueType::String, "", "test CSV (source = csv)"},
      {"data.layout", ValueType::String, "flat", "flat | grouped"},
      {"data.label_column", ValueType::String, "label", "label column name"},
      {"data.shape", ValueType::String, "", "per-sample shape such as 1x16x16; empty keeps the CSV shape"},
  };
}

inline Shape parse_shape(const std::string& text) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto x = text.find('x', pos);
    const std::string part = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    const auto v = parse_index(part);
    if (!v || *v == 0) throw Error(Errc::InvalidConfig, "data.shape: bad dimension '" + part + "'");
    shape.push_back(*v);
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return shape;
}

inline Dataset load_csv_dataset(const RunConfig& cfg, const std::string& key) {
  const std::string& path = cfg.str(key);
  if (path.empty()) throw Error(Errc::InvalidConfig, key + " is required when data.source = csv");
  CsvSchema schema;
  const std::string& layout = cfg.str("data.layout");
  if (layout == "flat") {
    schema.layout = CsvLayout::Flat;
  } else if (layout == "grouped") {
    schema.layout = CsvLayout::Grouped;
  } else {
    throw Error(Errc::InvalidConfig, "data.layout must be flat or grouped, got '" + layout + "'");
  }
  schema.label_column = cfg.str("data.label_column");
  Dataset d = load_csv(path, schema);
  if (!cfg.str("data.shape").empty()) {
    const Shape shape = parse_shape(cfg.str("data.shape"));
    if (shape_numel(shape) != d.sample_size()) {
      throw Error(Errc::InvalidShape, "data.shape " + shape_str(shape) + " does not fit " +
                                          std::to_string(d.sample_size()) + " features");
    }
    d.input_shape = shape;
  }
  return d;
}

inline void check_source(const RunConfig& cfg) {
  const std::string& source = cfg.str("data.source");
  if (source != "preset" && source != "csv") {
    throw Error(Errc::InvalidConfig, "data.source must be preset or csv, got '" + source + "'");
  }
}

/// Train/test data as configured. Preset data is a pure function of (preset, seed).
inline PresetData load_data(const RunConfig& cfg, const Preset& preset) {
  if (cfg.str("data.source") == "preset") return make_preset_data(preset, cfg.count("seed"));
  PresetData d{load_csv_dataset(cfg, "data.train_csv"), load_csv_dataset(cfg, "data.test_csv")};
  d.train.split = SplitTag::Train;
  if (d.train.input_shape != d.test.input_shape) {
    throw Error(Errc::InvalidShape, "train and test CSVs have different sample shapes");
  }
  const std::size_t k = std::max(d.train.classes, d.test.classes);
  d.train.classes = d.test.classes = k;
  validate(d.train);
  return d;
}

inline Dataset load_test_data(const RunConfig& cfg) {
  if (cfg.str("data.source") == "preset") {
    return make_preset_data(find_preset(cfg.str("preset")), cfg.count("seed")).test;
  }
  return load_csv_dataset(cfg, "data.test_csv");
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

// ------------------------------------------------------------------ train

inline std::vector<KeySpec> train_schema() {
  std::vector<KeySpec> keys = {
      {"seed", ValueType::Int, "7", "seed for data, initialization, shuffling and salts"},
      {"preset", ValueType::String, "blobs-mlp", "blobs-mlp | patterns-cnn"},
      {"model.salted", ValueType::Bool, "true", "false trains the standard baseline (S = 1)"},
      {"model.salts", ValueType::Int, "0", "S; 0 means S = K"},
      {"train.epochs", ValueType::Int, "0", "0 means the preset's budget"},
      {"train.batch_size", ValueType::Int, "100", "batch size"},
      {"train.learning_rate", ValueType::Real, "0.001", "Adam learning rate"},
      {"output.model", ValueType::String, "model.sdnn", "model file"},
      {"output.report", ValueType::String, "report", "report stem; writes <stem>.txt and <stem>.json"},
  };
  for (auto& k : detail::data_keys()) keys.push_back(std::move(k));
  return keys;
}

/// Fills keys whose defaults depend on other keys.
inline void resolve_train(RunConfig& cfg) {
  const Preset preset = find_preset(cfg.str("preset"));
  if (cfg.integer("train.epochs") == 0) cfg.set("train.epochs", std::to_string(preset.train.epochs));
}

inline SaltedNetwork build_network(const std::string& preset, const Dataset& train, std::uint32_t salts,
                                   std::uint64_t seed) {
  const auto k = static_cast<std::uint32_t>(train.classes);
  if (preset == "blobs-mlp") {
    if (train.input_shape.size() != 1) {
      throw Error(Errc::InvalidShape, "blobs-mlp needs flat inputs, got " + shape_str(train.input_shape));
    }
    return make_blobs_mlp(static_cast<std::uint32_t>(train.input_shape[0]), k, salts, seed);
  }
  if (train.input_shape.size() != 3 || train.input_shape[1] != 16 || train.input_shape[2] != 16) {
    throw Error(Errc::InvalidShape, "patterns-cnn needs C x 16 x 16 inputs, got " + shape_str(train.input_shape));
  }
  return make_patterns_cnn(static_cast<std::uint32_t>(train.input_shape[0]), k, salts, seed);
}

inline int cmd_train(RunConfig cfg, Console io) {
  return detail::run_command(io, [&] {
    TrainConfig tc;
    Preset preset;
    std::uint32_t salts = 0;
    detail::in_stage(kExitConfig, [&] {
      resolve_train(cfg);
      detail::check_source(cfg);
      preset = find_preset(cfg.str("preset"));
      tc.seed = cfg.count("seed");
      tc.salted = cfg.flag("model.salted");
      tc.epochs = cfg.count("train.epochs");
      tc.batch_size = cfg.count("train.batch_size");
      tc.learning_rate = cfg.real("train.learning_rate");
      salts = static_cast<std::uint32_t>(cfg.count("model.salts"));
      if (!tc.salted && salts > 1) throw Error(Errc::InvalidConfig, "model.salts must be 0 or 1 when model.salted = false");
    });
    detail::print_config(io, "train", cfg);

    const PresetData data = detail::in_stage(kExitData, [&] { return detail::load_data(cfg, preset); });
    SaltedNetwork net = detail::in_stage(kExitConfig, [&] {
      const auto k = static_cast<std::uint32_t>(data.train.classes);
      const std::uint32_t s = !tc.salted ? 1 : salts == 0 ? k : salts;
      return build_network(preset.name, data.train, s, tc.seed);
    });
    detail::in_stage(kExitConfig, [&] { validate(tc, data.train.size()); });

    const ParameterReport params = parameter_report(net);
    io.out << "parameters: total=" << params.total << " salt_branch=" << params.salt_branch
           << " fraction=" << detail::fixed(params.branch_fraction() * 100.0, 3) << "%\n";

    TrainReport report = detail::in_stage(kExitTraining, [&] { return train(net, data.train, tc); });
    attach_evaluation(report, net, data.test, tc.seed);

    save_model(net, cfg.str("output.model"));
    write_report(report, cfg.str("output.report"));
    io.out << "final_loss=" << report.epoch_loss.back() << " convergence_epoch=" << report.convergence_epoch
           << " test_accuracy=" << detail::fixed(report.test_accuracy)
           << " adversary_accuracy=" << detail::fixed(report.adversary_accuracy) << '\n';
    io.out << "wrote " << cfg.str("output.model") << ", " << cfg.str("output.report") << ".txt, "
           << cfg.str("output.report") << ".json\n";
  });
}

// ------------------------------------------------------------------ split

inline std::vector<KeySpec> split_schema() {
  return {
      {"seed", ValueType::Int, "7", "seed for the verification inputs"},
      {"split.model", ValueType::String, "model.sdnn", "full model file"},
      {"split.cut", ValueType::Int, "-1", "cut layer index; -1 keeps the model's"},
      {"split.early", ValueType::String, "early.sdnn", "client-side part"},
      {"split.later", ValueType::String, "later.sdnn", "server-side part"},
      {"split.verify", ValueType::Bool, "false", "check composition on random inputs before writing"},
      {"split.verify_count", ValueType::Int, "10", "number of (x, s) checks"},
      {"split.inject_fault", ValueType::Bool, "false", "test hook: perturb one later-part weight before verifying"},
  };
}

struct VerifyResult {
  std::size_t checks = 0;
  std::size_t mismatches = 0;
};

/// Compares later(early(x, s)) with the full forward, bitwise, on random
/// inputs x ~ N(0, 1) and uniform salts.
inline VerifyResult verify_partition(const SaltedNetwork& net, const ModelPart& early, const ModelPart& later,
                                     std::size_t count, std::uint64_t seed) {
  Rng rng = Rng(seed).split(Stream::Verify);
  const Shape in = validate(net);
  VerifyResult r;
  for (std::size_t i = 0; i < count; ++i) {
    Tensorf x(in);
    for (float& v : x.storage()) v = static_cast<float>(rng.normal());
    const auto s = static_cast<std::size_t>(rng.below(net.salts()));
    const Tensorf whole = forward_salted(net, x, s);
    const Tensorf split = forward_later(later, forward_early(early, x, s));
    ++r.checks;
    if (!whole.identical(split)) ++r.mismatches;
  }
  return r;
}

inline int cmd_split(RunConfig cfg, Console io) {
  return detail::run_command(io, [&] {
    detail::in_stage(kExitConfig, [&] {
      cfg.integer("split.cut");
      cfg.flag("split.verify");
      cfg.count("split.verify_count");
      cfg.count("seed");
    });
    detail::print_config(io, "split", cfg);
    const SaltedNetwork net = load_network(cfg.str("split.model"));
    const std::int64_t cut_key = cfg.integer("split.cut");
    auto [early, later] = detail::in_stage(kExitConfig, [&] {
      if (cut_key < -1) throw Error(Errc::InvalidConfig, "split.cut must be >= 0 or -1");
      return cut_key < 0 ? partition(net) : partition(net, static_cast<std::size_t>(cut_key));
    });
    if (cfg.flag("split.inject_fault")) {
      for (Layer& layer : later.layers) {
        if (!layer.params.empty()) {
          float& w = layer.params.front().storage().front();
          w = std::nextafter(w, w + 1.0f) + 0.5f;
          break;
        }
      }
    }
    io.out << "cut=" << early.cut_layer_index << " early_layers=" << early.layers.size()
           << " later_layers=" << later.layers.size() << '\n';
    if (cfg.flag("split.verify")) {
      const VerifyResult v = verify_partition(net, early, later, cfg.count("split.verify_count"), cfg.count("seed"));
      io.out << "verify: " << v.checks - v.mismatches << "/" << v.checks << " compositions identical\n";
      if (v.mismatches) throw StageFailure(kExitRuntime, "partition verification failed; nothing written");
    }
    save_model(early, cfg.str("split.early"));
    save_model(later, cfg.str("split.later"));
    io.out << "wrote " << cfg.str("split.early") << " (digest " << std::hex << content_digest(early) << "), "
           << cfg.str("split.later") << " (digest " << content_digest(later) << std::dec << ")\n";
  });
}

// ------------------------------------------------------------------ serve

inline std::vector<KeySpec> serve_schema() {
  return {
      {"seed", ValueType::Int, "0", "unused by serve; kept for uniform configs"},
      {"serve.model", ValueType::String, "later.sdnn", "later part file"},
      {"serve.bind", ValueType::String, "127.0.0.1:9400", "host:port; port 0 picks a free port"},
      {"serve.timeout_ms", ValueType::Int, "10000", "per-session idle timeout"},
      {"serve.max_payload", ValueType::Int, std::to_string(wire::kMaxPayload), "largest accepted payload in bytes"},
      {"serve.port_file", ValueType::String, "", "if set, the bound port is written here once listening"},
  };
}

/// Serves until `stop` becomes true.
inline int cmd_serve(RunConfig cfg, Console io, const std::atomic<bool>& stop) {
  return detail::run_command(io, [&] {
    ServerOptions opts;
    detail::in_stage(kExitConfig, [&] {
      opts.bind = parse_endpoint(cfg.str("serve.bind"));
      opts.timeout = std::chrono::milliseconds(cfg.count("serve.timeout_ms"));
      const std::uint64_t max = cfg.count("serve.max_payload");
      if (max == 0 || max > wire::kMaxPayload) {
        throw Error(Errc::InvalidConfig, "serve.max_payload must be in [1, " + std::to_string(wire::kMaxPayload) + "]");
      }
      opts.max_payload = static_cast<std::uint32_t>(max);
    });
    detail::print_config(io, "serve", cfg);
    opts.log = [&io](const std::string& line) { io.err << line << std::endl; };
    InferenceServer server(load_model(cfg.str("serve.model")), opts);
    server.start();
    io.out << "listening on " << opts.bind.host << ":" << server.port() << std::endl;
    if (!cfg.str("serve.port_file").empty()) {
      const std::filesystem::path path = cfg.str("serve.port_file");
      const std::filesystem::path tmp = std::filesystem::path(path).concat(".tmp");
      std::ofstream(tmp) << server.port() << '\n';
      std::filesystem::rename(tmp, path);
    }
    while (!stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    io.out << "stopped after " << server.sessions_served() << " sessions" << std::endl;
  });
}

// ------------------------------------------------------------------ infer

inline std::vector<KeySpec> infer_schema() {
  std::vector<KeySpec> keys = {
      {"seed", ValueType::Int, "7", "seed for fixture data and a random salt"},
      {"preset", ValueType::String, "blobs-mlp", "preset whose test split supplies fixtures"},
      {"infer.early", ValueType::String, "early.sdnn", "early part file"},
      {"infer.server", ValueType::String, "127.0.0.1:9400", "host:port"},
      {"infer.salt", ValueType::Int, "-1", "salt; -1 draws one from the seed"},
      {"infer.fixture", ValueType::Int, "-1", "index into the test split (data.source, seed)"},
      {"infer.csv_row", ValueType::Int, "-1", "1-based data row of data.test_csv"},
      {"infer.timeout_ms", ValueType::Int, "10000", "connect and read timeout"},
  };
  for (auto& k : detail::data_keys()) keys.push_back(std::move(k));
  return keys;
}

inline int cmd_infer(RunConfig cfg, Console io) {
  return detail::run_command(io, [&] {
    Endpoint server;
    std::int64_t fixture = -1, csv_row = -1, salt_key = -1;
    detail::in_stage(kExitConfig, [&] {
      server = parse_endpoint(cfg.str("infer.server"));
      fixture = cfg.integer("infer.fixture");
      csv_row = cfg.integer("infer.csv_row");
      salt_key = cfg.integer("infer.salt");
      cfg.count("infer.timeout_ms");
      cfg.count("seed");
      if ((fixture >= 0) == (csv_row >= 1)) {
        throw Error(Errc::InvalidConfig, "set exactly one of infer.fixture and infer.csv_row");
      }
      if (csv_row >= 1) cfg.set("data.source", "csv");
      detail::check_source(cfg);
    });
    const ModelPart early = load_model(cfg.str("infer.early"));
    if (early.kind != PartKind::Early) throw Error(Errc::InvalidNetwork, "infer.early is not an early part");

    std::size_t salt = 0;
    detail::in_stage(kExitConfig, [&] {
      if (salt_key < 0) {
        salt = static_cast<std::size_t>(Rng(cfg.count("seed")).split(Stream::Salt).below(early.mapping.salts));
        cfg.set("infer.salt", std::to_string(salt));
      } else {
        salt = static_cast<std::size_t>(salt_key);
        check_salt(early.mapping, salt);
      }
    });
    detail::print_config(io, "infer", cfg);

    std::size_t label = 0;
    const Tensorf x = detail::in_stage(kExitData, [&] {
      const Dataset test = detail::load_test_data(cfg);
      const std::size_t i = fixture >= 0 ? static_cast<std::size_t>(fixture) : static_cast<std::size_t>(csv_row - 1);
      if (i >= test.size()) {
        throw Error(Errc::InvalidConfig, "sample index " + std::to_string(i) + " outside a test set of " +
                                             std::to_string(test.size()));
      }
      label = test.labels[i];
      return test.sample(i);
    });

    InferenceClient client(server, {std::chrono::milliseconds(cfg.count("infer.timeout_ms"))});
    const SplitInference r = client_infer(early, x, salt, client);
    io.out << "decoded_class=" << r.decoded_class << " true_label=" << label << '\n';
    io.out << "decoded_probabilities=";
    for (std::size_t k = 0; k < r.decoded_probs.size(); ++k) io.out << (k ? "," : "") << r.decoded_probs[k];
    io.out << "\nlatency_ms=" << detail::fixed(r.latency_ms, 3) << '\n';
  });
}

// ------------------------------------------------------------------- eval

inline std::vector<KeySpec> eval_schema() {
  std::vector<KeySpec> keys = {
      {"seed", ValueType::Int, "7", "seed for preset data and salt draws"},
      {"preset", ValueType::String, "blobs-mlp", "preset whose test split is evaluated (data.source = preset)"},
      {"eval.model", ValueType::String, "", "full model file"},
      {"eval.early", ValueType::String, "", "early part (with eval.later, instead of eval.model)"},
      {"eval.later", ValueType::String, "", "later part"},
      {"eval.policy", ValueType::String, "exhaustive", "exhaustive | uniform | fixed"},
      {"eval.salt", ValueType::Int, "0", "salt for policy = fixed"},
      {"eval.report", ValueType::String, "", "optional report stem"},
  };
  for (auto& k : detail::data_keys()) keys.push_back(std::move(k));
  return keys;
}

inline int cmd_eval(RunConfig cfg, Console io) {
  return detail::run_command(io, [&] {
    SaltPolicy policy;
    detail::in_stage(kExitConfig, [&] {
      detail::check_source(cfg);
      const std::string& p = cfg.str("eval.policy");
      if (p == "exhaustive") {
        policy = SaltPolicy::exhaustive();
      } else if (p == "uniform") {
        policy = SaltPolicy::uniform(cfg.count("seed"));
      } else if (p == "fixed") {
        policy = SaltPolicy::fixed(cfg.count("eval.salt"));
      } else {
        throw Error(Errc::InvalidConfig, "eval.policy must be exhaustive, uniform or fixed, got '" + p + "'");
      }
      const bool whole = !cfg.str("eval.model").empty();
      const bool parts = !cfg.str("eval.early").empty() || !cfg.str("eval.later").empty();
      if (whole == parts || (parts && (cfg.str("eval.early").empty() || cfg.str("eval.later").empty()))) {
        throw Error(Errc::InvalidConfig, "set eval.model, or both eval.early and eval.later");
      }
    });
    detail::print_config(io, "eval", cfg);

    SaltedNetwork net;
    ModelPart early, later;
    const bool whole = !cfg.str("eval.model").empty();
    if (whole) {
      net = load_network(cfg.str("eval.model"));
    } else {
      early = load_model(cfg.str("eval.early"));
      later = load_model(cfg.str("eval.later"));
      net = join(early, later);
    }
    const BatchForward fn = whole ? forward_fn(net) : forward_fn(early, later);
    const Dataset test = detail::in_stage(kExitData, [&] {
      Dataset d = detail::load_test_data(cfg);
      if (d.classes > net.classes()) {
        throw Error(Errc::ClassCountMismatch, "dataset has labels up to " + std::to_string(d.classes - 1) +
                                                  ", model has K = " + std::to_string(net.classes()));
      }
      d.classes = net.classes();
      return d;
    });
    if (policy.kind == SaltPolicy::Kind::Fixed) {
      detail::in_stage(kExitConfig, [&] { check_salt(net.mapping, policy.salt); });
    }

    const EvalReport e = evaluate(fn, net.mapping, test, policy);
    const double adversary = salt_blind_adversary_accuracy(fn, net.mapping, test, cfg.count("seed"));
    io.out << "accuracy=" << detail::fixed(e.accuracy) << " evaluations=" << e.evaluations << '\n';
    for (std::size_t s = 0; s < e.per_salt_accuracy.size(); ++s) {
      io.out << "salt " << s << ": accuracy=";
      if (e.per_salt_count[s]) {
        io.out << detail::fixed(e.per_salt_accuracy[s]);
      } else {
        io.out << "n/a";
      }
      io.out << " n=" << e.per_salt_count[s] << '\n';
    }
    const double k = static_cast<double>(net.classes());
    const double sigma = std::sqrt((1.0 / k) * (1.0 - 1.0 / k) / static_cast<double>(test.size()));
    io.out << "adversary_accuracy=" << detail::fixed(adversary) << " chance=" << detail::fixed(1.0 / k)
           << " sigma=" << detail::fixed(sigma) << '\n';

    if (!cfg.str("eval.report").empty()) {
      TrainReport r;
      r.salted = net.salts() > 1;
      r.salts = net.salts();
      r.test_accuracy = e.accuracy;
      r.per_salt_accuracy = e.per_salt_accuracy;
      r.adversary_accuracy = adversary;
      write_report(r, cfg.str("eval.report"));
    }
  });
}

}  // namespace salted
