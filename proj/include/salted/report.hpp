#pragma once

// Training/evaluation reports in two encodings.
//
// Text (one `key=value` per line):
//   salted=true|false
//   salts=<S>
//   epochs=<E>
//   steps=<optimizer steps>
//   convergence_epoch=<1-based epoch>
//   test_accuracy=<decoded accuracy, 0..1>
//   per_salt_accuracy.<s>=<accuracy for salt s>     one line per salt
//   adversary_accuracy=<salt-blind argmax accuracy>
//   wall_seconds=<training time>
//   epoch_loss.<e>=<mean loss of epoch e, 1-based>  one line per epoch
//
// JSON object with the same fields; per_salt_accuracy and epoch_loss are
// arrays. NaN accuracies (salts never evaluated) are written as null.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "salted/error.hpp"
#include "salted/trainer.hpp"

namespace salted {

inline std::string to_key_value(const TrainReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "salted=" << (r.salted ? "true" : "false") << '\n';
  os << "salts=" << r.salts << '\n';
  os << "epochs=" << r.epochs << '\n';
  os << "steps=" << r.steps << '\n';
  os << "convergence_epoch=" << r.convergence_epoch << '\n';
  os << "test_accuracy=" << r.test_accuracy << '\n';
  for (std::size_t s = 0; s < r.per_salt_accuracy.size(); ++s) {
    os << "per_salt_accuracy." << s << '=' << r.per_salt_accuracy[s] << '\n';
  }
  os << "adversary_accuracy=" << r.adversary_accuracy << '\n';
  os << "wall_seconds=" << r.wall_seconds << '\n';
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    os << "epoch_loss." << e + 1 << '=' << r.epoch_loss[e] << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json per_salt = nlohmann::json::array();
  for (double a : r.per_salt_accuracy) {
    per_salt.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  }
  return {
      {"salted", r.salted},
      {"salts", r.salts},
      {"epochs", r.epochs},
      {"steps", r.steps},
      {"convergence_epoch", r.convergence_epoch},
      {"test_accuracy", r.test_accuracy},
      {"per_salt_accuracy", per_salt},
      {"adversary_accuracy", r.adversary_accuracy},
      {"wall_seconds", r.wall_seconds},
      {"epoch_loss", r.epoch_loss},
  };
}

inline TrainReport report_from_json(const nlohmann::json& j) {
  TrainReport r;
  r.salted = j.at("salted").get<bool>();
  r.salts = j.at("salts").get<std::size_t>();
  r.epochs = j.at("epochs").get<std::size_t>();
  r.steps = j.at("steps").get<std::size_t>();
  r.convergence_epoch = j.at("convergence_epoch").get<std::size_t>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  for (const auto& a : j.at("per_salt_accuracy")) {
    r.per_salt_accuracy.push_back(a.is_null() ? std::nan("") : a.get<double>());
  }
  r.adversary_accuracy = j.at("adversary_accuracy").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  return r;
}

/// Writes `<stem>.txt` and `<stem>.json`.
inline void write_report(const TrainReport& r, const std::filesystem::path& stem) {
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot open " + path.string());
    out << text;
    if (!out) throw Error(Errc::Io, "write failed: " + path.string());
  };
  write(std::filesystem::path(stem).concat(".txt"), to_key_value(r));
  write(std::filesystem::path(stem).concat(".json"), to_json(r).dump(2) + "\n");
}

}  // namespace salted
