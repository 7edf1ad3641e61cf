#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "salted/error.hpp"
#include "salted/rng.hpp"
#include "salted/tensor.hpp"

namespace salted {

enum class SplitTag { Train, Test };

/// Labelled samples stored contiguously: sample i occupies
/// features[i * sample_size() .. (i + 1) * sample_size()).
struct Dataset {
  Shape input_shape;
  std::size_t classes = 0;
  std::vector<float> features;
  std::vector<std::size_t> labels;
  SplitTag split = SplitTag::Train;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t sample_size() const { return shape_numel(input_shape); }

  std::span<const float> row(std::size_t i) const {
    return std::span(features).subspan(i * sample_size(), sample_size());
  }

  Tensorf sample(std::size_t i) const {
    auto r = row(i);
    return Tensorf(input_shape, std::vector<float>(r.begin(), r.end()));
  }

  /// Stacks the given samples into [B, ...input_shape].
  Tensorf batch(std::span<const std::size_t> indices) const {
    Tensorf out(batched(indices.size(), input_shape));
    const std::size_t n = sample_size();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      auto r = row(indices[b]);
      std::copy(r.begin(), r.end(), out.data() + b * n);
    }
    return out;
  }

  void push(std::span<const float> x, std::size_t label) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t y : labels) {
      if (y < classes) ++counts[y];
    }
    return counts;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws unless labels are in range, shapes conform, values are finite,
/// and (for training data) every class is present.
inline void validate(const Dataset& d) {
  if (d.classes < 2) throw Error(Errc::InvalidShape, "dataset needs at least 2 classes");
  if (d.input_shape.empty()) throw Error(Errc::InvalidShape, "dataset has no input shape");
  if (d.features.size() != d.size() * d.sample_size()) {
    throw Error(Errc::InvalidShape, "feature storage does not match " + std::to_string(d.size()) +
                                        " samples of " + shape_str(d.input_shape));
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] >= d.classes) {
      throw Error(Errc::LabelOutOfRange, "sample " + std::to_string(i) + " has label " +
                                             std::to_string(d.labels[i]));
    }
  }
  for (float v : d.features) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidShape, "non-finite feature value");
  }
  if (d.split == SplitTag::Train) {
    const auto counts = d.class_counts();
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] == 0) {
        throw Error(Errc::ClassTooSmall, "training data has no sample of class " + std::to_string(k));
      }
    }
  }
}

// ------------------------------------------------------------ generators

struct BlobsConfig {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  Shape input_shape = {2};
  double spread = 0.5;      // per-coordinate standard deviation
  double separation = 1.0;  // distance between cluster means
  std::uint64_t seed = 0;
};

/// Cluster centres. With at least as many features as classes the means
/// are mutually orthogonal at exactly `separation` apart; otherwise random
/// directions rescaled so the closest pair is `separation` apart.
inline std::vector<std::vector<double>> blob_means(const BlobsConfig& cfg) {
  const std::size_t dim = shape_numel(cfg.input_shape);
  Rng rng = Rng(cfg.seed).split(Stream::Data).split(1);
  std::vector<std::vector<double>> means(cfg.classes, std::vector<double>(dim));
  for (auto& m : means) {
    for (double& v : m) v = rng.normal();
  }
  if (dim >= cfg.classes) {
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      for (std::size_t j = 0; j < k; ++j) {
        double dot = 0;
        for (std::size_t i = 0; i < dim; ++i) dot += means[k][i] * means[j][i];
        for (std::size_t i = 0; i < dim; ++i) means[k][i] -= dot * means[j][i];
      }
      double norm = 0;
      for (double v : means[k]) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : means[k]) v /= norm;
    }
    for (auto& m : means) {
      for (double& v : m) v *= cfg.separation / std::numbers::sqrt2;
    }
    return means;
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < cfg.classes; ++a) {
    for (std::size_t b = a + 1; b < cfg.classes; ++b) {
      double d = 0;
      for (std::size_t i = 0; i < dim; ++i) d += (means[a][i] - means[b][i]) * (means[a][i] - means[b][i]);
      closest = std::min(closest, std::sqrt(d));
    }
  }
  for (auto& m : means) {
    for (double& v : m) v *= cfg.separation / closest;
  }
  return means;
}

/// Isotropic Gaussian clusters, samples interleaved by class.
inline Dataset generate_blobs(const BlobsConfig& cfg) {
  if (cfg.classes < 2) throw Error(Errc::InvalidShape, "blobs need K >= 2");
  if (!(cfg.spread > 0.0)) throw Error(Errc::InvalidShape, "blobs need spread > 0");
  if (cfg.input_shape.empty() || shape_numel(cfg.input_shape) == 0 || cfg.per_class == 0) {
    throw Error(Errc::InvalidShape, "blobs need a non-empty input shape and per-class count");
  }
  const auto means = blob_means(cfg);
  Rng rng = Rng(cfg.seed).split(Stream::Data).split(2);
  Dataset d;
  d.input_shape = cfg.input_shape;
  d.classes = cfg.classes;
  std::vector<float> x(shape_numel(cfg.input_shape));
  for (std::size_t i = 0; i < cfg.per_class; ++i) {
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      for (std::size_t j = 0; j < x.size(); ++j) {
        x[j] = static_cast<float>(means[k][j] + cfg.spread * rng.normal());
      }
      d.push(x, k);
    }
  }
  return d;
}

struct PatternsConfig {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

/// Class template: a sinusoidal grating whose orientation is pi * k / K,
/// two periods across the image, with a per-channel phase offset.
inline Tensorf pattern_template(const PatternsConfig& cfg, std::size_t cls) {
  Tensorf t({cfg.channels, cfg.height, cfg.width});
  const double theta = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(cfg.classes);
  const double freq = 2.0 * 2.0 * std::numbers::pi / static_cast<double>(std::max(cfg.height, cfg.width));
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    const double phase = static_cast<double>(c) * std::numbers::pi / 3.0 + 0.25;
    for (std::size_t i = 0; i < cfg.height; ++i) {
      for (std::size_t j = 0; j < cfg.width; ++j) {
        const double proj = static_cast<double>(i) * std::cos(theta) + static_cast<double>(j) * std::sin(theta);
        t[(c * cfg.height + i) * cfg.width + j] = static_cast<float>(std::sin(freq * proj + phase));
      }
    }
  }
  return t;
}

inline Dataset generate_patterns(const PatternsConfig& cfg) {
  if (cfg.height < 4 || cfg.width < 4) throw Error(Errc::InvalidShape, "patterns need H, W >= 4");
  if (cfg.classes < 2 || cfg.channels == 0 || cfg.per_class == 0) {
    throw Error(Errc::InvalidShape, "patterns need K >= 2, channels >= 1, per_class >= 1");
  }
  if (cfg.noise < 0.0) throw Error(Errc::InvalidShape, "noise must be non-negative");
  std::vector<Tensorf> templates;
  for (std::size_t k = 0; k < cfg.classes; ++k) templates.push_back(pattern_template(cfg, k));
  Rng rng = Rng(cfg.seed).split(Stream::Data).split(3);
  Dataset d;
  d.input_shape = {cfg.channels, cfg.height, cfg.width};
  d.classes = cfg.classes;
  std::vector<float> x(shape_numel(d.input_shape));
  for (std::size_t i = 0; i < cfg.per_class; ++i) {
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      for (std::size_t j = 0; j < x.size(); ++j) {
        x[j] = templates[k][j] + static_cast<float>(cfg.noise * rng.normal());
      }
      d.push(x, k);
    }
  }
  return d;
}

// -------------------------------------------------------------- splitting

/// Class-stratified split: each class sends round(fraction * n_k) samples
/// (at least one, at most n_k - 1) to the test side. Both sides keep the
/// original sample order.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "test fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);
  Rng rng = Rng(seed).split(Stream::Split);
  std::vector<bool> to_test(data.size(), false);
  for (std::size_t k = 0; k < data.classes; ++k) {
    auto& idx = by_class[k];
    if (idx.size() < 2) {
      throw Error(Errc::ClassTooSmall, "class " + std::to_string(k) + " has " +
                                           std::to_string(idx.size()) + " samples; need 2");
    }
    rng.shuffle(idx.begin(), idx.end());
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t j = 0; j < n_test; ++j) to_test[idx[j]] = true;
  }
  Dataset train{data.input_shape, data.classes, {}, {}, SplitTag::Train};
  Dataset test{data.input_shape, data.classes, {}, {}, SplitTag::Test};
  for (std::size_t i = 0; i < data.size(); ++i) (to_test[i] ? test : train).push(data.row(i), data.labels[i]);
  return {std::move(train), std::move(test)};
}

/// Per-feature standardisation fitted on one dataset and applied to others.
struct Standardizer {
  std::vector<float> mean;
  std::vector<float> scale;

  static Standardizer fit(const Dataset& train) {
    if (train.empty()) throw Error(Errc::EmptyDataset, "cannot fit on an empty dataset");
    const std::size_t f = train.sample_size();
    std::vector<double> sum(f, 0.0), sq(f, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto r = train.row(i);
      for (std::size_t j = 0; j < f; ++j) {
        sum[j] += r[j];
        sq[j] += static_cast<double>(r[j]) * r[j];
      }
    }
    Standardizer s;
    const auto n = static_cast<double>(train.size());
    for (std::size_t j = 0; j < f; ++j) {
      const double m = sum[j] / n;
      const double var = std::max(0.0, sq[j] / n - m * m);
      const double sd = std::sqrt(var);
      s.mean.push_back(static_cast<float>(m));
      s.scale.push_back(sd > 1e-6 ? static_cast<float>(1.0 / sd) : 1.0f);
    }
    return s;
  }

  Dataset apply(const Dataset& d) const {
    if (d.sample_size() != mean.size()) {
      throw Error(Errc::ShapeMismatch, "standardizer fitted on a different feature count");
    }
    Dataset out = d;
    const std::size_t f = mean.size();
    for (std::size_t i = 0; i < out.features.size(); ++i) {
      out.features[i] = (out.features[i] - mean[i % f]) * scale[i % f];
    }
    return out;
  }
};

// -------------------------------------------------------------------- CSV

enum class CsvLayout {
  Flat,     // columns f0..f{n-1}, input shape [n]
  Grouped,  // columns c<i>_t<j>, input shape [channels, length]
};

struct CsvSchema {
  CsvLayout layout = CsvLayout::Flat;
  std::string label_column = "label";
  std::size_t classes = 0;  // 0: one more than the largest label seen
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  if (s.empty()) return std::nullopt;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a CSV with a header row. Rows and columns in errors are 1-based.
inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, 1, "missing header row");
  const auto header = detail::split_commas(line);

  std::optional<std::size_t> label_col;
  // Position in the row-major sample of each feature column, by column.
  std::vector<std::optional<std::size_t>> slot(header.size());
  Shape shape;
  if (schema.layout == CsvLayout::Flat) {
    std::vector<std::size_t> feature_of_col(header.size(), SIZE_MAX);
    std::size_t n = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == schema.label_column) {
        label_col = c;
        continue;
      }
      auto idx = header[c].size() > 1 && header[c][0] == 'f' ? detail::parse_index(header[c].substr(1))
                                                              : std::nullopt;
      if (!idx) throw ParseError(1, c + 1, "unexpected column '" + std::string(header[c]) + "'");
      feature_of_col[c] = *idx;
      n = std::max(n, *idx + 1);
    }
    std::vector<bool> seen(n, false);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (feature_of_col[c] == SIZE_MAX) continue;
      if (seen[feature_of_col[c]]) throw ParseError(1, c + 1, "duplicate feature column");
      seen[feature_of_col[c]] = true;
      slot[c] = feature_of_col[c];
    }
    if (n == 0 || std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ParseError(1, 1, "feature columns must be f0..f" + std::to_string(n ? n - 1 : 0));
    }
    shape = {n};
  } else {
    std::vector<std::pair<std::size_t, std::size_t>> ct(header.size(), {SIZE_MAX, SIZE_MAX});
    std::size_t channels = 0, length = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == schema.label_column) {
        label_col = c;
        continue;
      }
      const std::string_view name = header[c];
      const std::size_t sep = name.find("_t");
      std::optional<std::size_t> ch, t;
      if (name.size() > 1 && name[0] == 'c' && sep != std::string_view::npos) {
        ch = detail::parse_index(name.substr(1, sep - 1));
        t = detail::parse_index(name.substr(sep + 2));
      }
      if (!ch || !t) throw ParseError(1, c + 1, "unexpected column '" + std::string(name) + "'");
      ct[c] = {*ch, *t};
      channels = std::max(channels, *ch + 1);
      length = std::max(length, *t + 1);
    }
    std::vector<bool> seen(channels * length, false);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (ct[c].first == SIZE_MAX) continue;
      const std::size_t pos = ct[c].first * length + ct[c].second;
      if (seen[pos]) throw ParseError(1, c + 1, "duplicate feature column");
      seen[pos] = true;
      slot[c] = pos;
    }
    if (seen.empty() || std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ParseError(1, 1, "grouped columns must cover every c<i>_t<j>");
    }
    shape = {channels, length};
  }
  if (!label_col) throw ParseError(1, 1, "no '" + schema.label_column + "' column");

  Dataset d;
  d.input_shape = shape;
  std::vector<float> x(shape_numel(shape));
  std::size_t row = 1;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw Error(Errc::RaggedRow, "row " + std::to_string(row) + " has " +
                                       std::to_string(cells.size()) + " cells, header has " +
                                       std::to_string(header.size()));
    }
    std::size_t label = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string_view cell = cells[c];
      if (c == *label_col) {
        auto v = detail::parse_index(cell);
        if (!v) throw ParseError(row, c + 1, "label '" + std::string(cell) + "' is not a class index");
        label = *v;
        continue;
      }
      float v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError(row, c + 1, "'" + std::string(cell) + "' is not a finite number");
      }
      x[*slot[c]] = v;
    }
    if (schema.classes && label >= schema.classes) {
      throw Error(Errc::LabelOutOfRange, "row " + std::to_string(row) + " label " +
                                             std::to_string(label) + " >= " +
                                             std::to_string(schema.classes));
    }
    max_label = std::max(max_label, label);
    d.push(x, label);
  }
  d.classes = schema.classes ? schema.classes : max_label + 1;
  d.split = SplitTag::Test;  // callers tag training data explicitly
  if (d.empty()) throw Error(Errc::EmptyDataset, path.string() + " has no data rows");
  return d;
}

/// Writes a dataset with shortest round-trip float formatting. Rank-1
/// inputs use the flat layout, rank-2 inputs the grouped one.
inline void save_csv(const Dataset& d, const std::filesystem::path& path) {
  if (d.input_shape.size() > 2) {
    throw Error(Errc::InvalidShape, "CSV export supports rank-1 or rank-2 inputs");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string());
  out << "label";
  if (d.input_shape.size() == 1) {
    for (std::size_t j = 0; j < d.input_shape[0]; ++j) out << ",f" << j;
  } else {
    for (std::size_t c = 0; c < d.input_shape[0]; ++c) {
      for (std::size_t t = 0; t < d.input_shape[1]; ++t) out << ",c" << c << "_t" << t;
    }
  }
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.labels[i];
    for (float v : d.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::Io, "write failed: " + path.string());
}

}  // namespace salted
