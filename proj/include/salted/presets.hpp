#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "salted/dataset.hpp"
#include "salted/error.hpp"
#include "salted/network.hpp"
#include "salted/trainer.hpp"

namespace salted {

/// Dense classifier with the salt concatenated (as 8 learned features) to the
/// input of the second FullyConnected layer.
///
///   0 FC(D->32)  1 ReLU  2 Concat(+8)  3 FC(40->32)  4 ReLU | cut
///   5 FC(32->32) 6 ReLU  7 FC(32->K)   8 SoftmaxOutput
inline SaltedNetwork make_blobs_mlp(std::uint32_t features, std::uint32_t classes,
                                    std::uint32_t salts, std::uint64_t seed) {
  constexpr std::uint32_t hidden = 32, salt_features = 8;
  SaltedNetwork net;
  net.mapping = {MappingId::Modulo, classes, salts};
  net.layers = {
      {LayerSpec::fully_connected(features, hidden), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::concat_channels(hidden, salt_features), {}},
      {LayerSpec::fully_connected(hidden + salt_features, hidden), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::fully_connected(hidden, hidden), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::fully_connected(hidden, classes), {}},
      {LayerSpec::softmax_output(classes), {}},
  };
  net.salt_branch = {LayerSpec::fully_connected(salts, salt_features), {}};
  net.salted_layer_index = 2;
  net.cut_layer_index = 4;
  initialize(net, seed);
  validate(net);
  return net;
}

/// Four-conv network; the salt enters at the second convolution through a
/// transposed convolution that grows the one-hot salt to 2 x 8 x 8.
///
///   0 Conv(C->8, s2)  1 ReLU  2 Concat(+2)  3 Conv(10->16)  4 ReLU
///   5 Conv(16->16, s2) 6 ReLU | cut
///   7 Conv(16->16) 8 ReLU 9 Flatten 10 FC(256->32) 11 ReLU 12 FC(32->K) 13 SoftmaxOutput
///
/// Input is C x 16 x 16.
inline SaltedNetwork make_patterns_cnn(std::uint32_t channels, std::uint32_t classes,
                                       std::uint32_t salts, std::uint64_t seed) {
  constexpr std::uint32_t side = 16, half = 8, quarter = 4, salt_channels = 2;
  SaltedNetwork net;
  net.mapping = {MappingId::Modulo, classes, salts};
  net.layers = {
      {LayerSpec::conv2d(channels, 8, 3, 2, 1, side, side), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::concat_channels(8, salt_channels), {}},
      {LayerSpec::conv2d(8 + salt_channels, 16, 3, 1, 1, half, half), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::conv2d(16, 16, 3, 2, 1, half, half), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::conv2d(16, 16, 3, 1, 1, quarter, quarter), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::flatten({16, quarter, quarter}), {}},
      {LayerSpec::fully_connected(16 * quarter * quarter, 32), {}},
      {LayerSpec::relu(), {}},
      {LayerSpec::fully_connected(32, classes), {}},
      {LayerSpec::softmax_output(classes), {}},
  };
  // Kernel 8 on a 1 x 1 input gives an 8 x 8 map: (1 - 1) * 1 - 0 + 8.
  net.salt_branch = {LayerSpec::conv_transpose2d(salts, salt_channels, half, 1, 0, 1, 1), {}};
  net.salted_layer_index = 2;
  net.cut_layer_index = 6;
  initialize(net, seed);
  validate(net);
  return net;
}

/// A named network + dataset + training recipe.
struct Preset {
  std::string name;
  std::uint32_t classes = 4;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  TrainConfig train;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"blobs-mlp", "patterns-cnn"};
  return names;
}

inline Preset find_preset(std::string_view name) {
  if (name == "blobs-mlp") {
    Preset p{"blobs-mlp", 4, 2000, 500, {}};
    p.train.epochs = 200;
    return p;
  }
  if (name == "patterns-cnn") {
    Preset p{"patterns-cnn", 4, 1600, 400, {}};
    p.train.epochs = 40;
    return p;
  }
  throw Error(Errc::InvalidConfig, "unknown preset '" + std::string(name) +
                                       "'; choose blobs-mlp or patterns-cnn");
}

/// Blobs: 8 features, unit mean separation, spread 0.2.
/// Patterns: 1 x 16 x 16 gratings, noise 1.0.
struct PresetData {
  Dataset train;
  Dataset test;
};

inline PresetData make_preset_data(const Preset& preset, std::uint64_t seed) {
  const std::size_t total = preset.train_size + preset.test_size;
  if (total % preset.classes != 0) {
    throw Error(Errc::InvalidConfig, "train_size + test_size must be a multiple of K");
  }
  const std::size_t per_class = total / preset.classes;
  Dataset all;
  if (preset.name == "blobs-mlp") {
    all = generate_blobs({preset.classes, per_class, {8}, 0.2, 1.0, seed});
  } else {
    all = generate_patterns({preset.classes, per_class, 1, 16, 16, 1.0, seed});
  }
  auto [train, test] = split_train_test(
      all, static_cast<double>(preset.test_size) / static_cast<double>(total), seed);
  return {std::move(train), std::move(test)};
}

/// Builds the preset network. Standard baselines (`salted` false) use S = 1.
inline SaltedNetwork make_preset_network(const Preset& preset, const Dataset& train, bool salted,
                                         std::uint64_t seed) {
  const std::uint32_t salts = salted ? preset.classes : 1;
  if (preset.name == "blobs-mlp") {
    return make_blobs_mlp(static_cast<std::uint32_t>(train.sample_size()), preset.classes, salts,
                          seed);
  }
  if (train.input_shape.size() != 3 || train.input_shape[1] != 16 || train.input_shape[2] != 16) {
    throw Error(Errc::InvalidShape, "patterns-cnn needs C x 16 x 16 inputs, got " +
                                        shape_str(train.input_shape));
  }
  return make_patterns_cnn(static_cast<std::uint32_t>(train.input_shape[0]), preset.classes, salts,
                           seed);
}

}  // namespace salted
