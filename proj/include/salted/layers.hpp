#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salted/autodiff.hpp"
#include "salted/error.hpp"
#include "salted/kernels.hpp"
#include "salted/rng.hpp"
#include "salted/tensor.hpp"

namespace salted {

/// Wire/file codes are the enumerator values.
enum class LayerKind : std::uint8_t {
  FullyConnected = 1,
  Conv2D = 2,
  TransposedConv2D = 3,
  ReLU = 4,
  Flatten = 5,
  ConcatChannels = 6,
  SoftmaxOutput = 7,
};

constexpr std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::TransposedConv2D: return "TransposedConv2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::ConcatChannels: return "ConcatChannels";
    case LayerKind::SoftmaxOutput: return "SoftmaxOutput";
  }
  return "Unknown";
}

inline LayerKind layer_kind_from_code(std::uint8_t code) {
  if (code < 1 || code > 7) {
    throw Error(Errc::UnknownLayerKind, "layer kind code " + std::to_string(code));
  }
  return static_cast<LayerKind>(code);
}

/// Declarative layer description. Hyperparameters per kind:
///
///   FullyConnected    [in, out]
///   Conv2D            [in_ch, out_ch, kernel, stride, padding, in_h, in_w]
///   TransposedConv2D  [in_ch, out_ch, kernel, stride, padding, in_h, in_w]
///   ReLU              []
///   Flatten           [input dims...]
///   ConcatChannels    [main_ch, extra_ch]
///   SoftmaxOutput     [classes]
///
/// Spatial layers record their input height and width so every layer knows
/// the exact input shape it accepts.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::vector<std::uint32_t> hyper;

  static LayerSpec fully_connected(std::uint32_t in, std::uint32_t out) {
    return {LayerKind::FullyConnected, {in, out}};
  }
  static LayerSpec conv2d(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t kernel,
                          std::uint32_t stride, std::uint32_t padding, std::uint32_t in_h,
                          std::uint32_t in_w) {
    return {LayerKind::Conv2D, {in_ch, out_ch, kernel, stride, padding, in_h, in_w}};
  }
  static LayerSpec conv_transpose2d(std::uint32_t in_ch, std::uint32_t out_ch,
                                    std::uint32_t kernel, std::uint32_t stride,
                                    std::uint32_t padding, std::uint32_t in_h,
                                    std::uint32_t in_w) {
    return {LayerKind::TransposedConv2D, {in_ch, out_ch, kernel, stride, padding, in_h, in_w}};
  }
  static LayerSpec relu() { return {LayerKind::ReLU, {}}; }
  static LayerSpec flatten(const Shape& input) {
    return {LayerKind::Flatten, std::vector<std::uint32_t>(input.begin(), input.end())};
  }
  static LayerSpec concat_channels(std::uint32_t main_ch, std::uint32_t extra_ch) {
    return {LayerKind::ConcatChannels, {main_ch, extra_ch}};
  }
  static LayerSpec softmax_output(std::uint32_t classes) {
    return {LayerKind::SoftmaxOutput, {classes}};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer description plus its parameter tensors.
struct Layer {
  LayerSpec spec;
  std::vector<Tensorf> params;

  friend bool operator==(const Layer&, const Layer&) = default;
};

namespace detail {

inline kernels::ConvGeometry geometry(const LayerSpec& spec) {
  return {spec.hyper[3], spec.hyper[4]};
}

[[noreturn]] inline void shape_error(const LayerSpec& spec, std::string_view where,
                                     const Shape& expected, const Shape& got) {
  throw Error(Errc::ShapeMismatch, std::string(where.empty() ? to_string(spec.kind) : where) +
                                       " expects input " + shape_str(expected) + ", got " +
                                       shape_str(got));
}

}  // namespace detail

/// Checks hyperparameter count and ranges.
inline void validate_spec(const LayerSpec& spec) {
  auto need = [&](std::size_t n) {
    if (spec.hyper.size() != n) {
      throw Error(Errc::InvalidNetwork, std::string(to_string(spec.kind)) + " needs " +
                                            std::to_string(n) + " hyperparameters, got " +
                                            std::to_string(spec.hyper.size()));
    }
  };
  auto positive = [&](std::size_t first, std::size_t last) {
    for (std::size_t i = first; i < last; ++i) {
      if (spec.hyper[i] == 0) {
        throw Error(Errc::InvalidNetwork, std::string(to_string(spec.kind)) + " hyperparameter " +
                                              std::to_string(i) + " must be positive");
      }
    }
  };
  switch (spec.kind) {
    case LayerKind::FullyConnected:
      need(2);
      positive(0, 2);
      return;
    case LayerKind::Conv2D: {
      need(7);
      positive(0, 4);
      positive(5, 7);
      const std::size_t k = spec.hyper[2], s = spec.hyper[3], p = spec.hyper[4];
      if (kernels::conv_out(spec.hyper[5], k, s, p) == 0 ||
          kernels::conv_out(spec.hyper[6], k, s, p) == 0) {
        throw Error(Errc::InvalidNetwork, "Conv2D kernel does not fit its padded input");
      }
      return;
    }
    case LayerKind::TransposedConv2D: {
      need(7);
      positive(0, 4);
      positive(5, 7);
      const std::size_t k = spec.hyper[2], s = spec.hyper[3], p = spec.hyper[4];
      if (kernels::conv_transpose_out(spec.hyper[5], k, s, p) == 0 ||
          kernels::conv_transpose_out(spec.hyper[6], k, s, p) == 0) {
        throw Error(Errc::InvalidNetwork, "TransposedConv2D output would be empty");
      }
      return;
    }
    case LayerKind::ReLU:
      need(0);
      return;
    case LayerKind::Flatten:
      if (spec.hyper.empty()) throw Error(Errc::InvalidNetwork, "Flatten needs its input dims");
      positive(0, spec.hyper.size());
      return;
    case LayerKind::ConcatChannels:
      need(2);
      positive(0, 2);
      return;
    case LayerKind::SoftmaxOutput:
      need(1);
      if (spec.hyper[0] < 2) throw Error(Errc::InvalidNetwork, "SoftmaxOutput needs >= 2 classes");
      return;
  }
  throw Error(Errc::UnknownLayerKind,
              "layer kind code " + std::to_string(static_cast<int>(spec.kind)));
}

/// Throws ShapeMismatch unless `input` (per-sample) is acceptable.
inline void check_input(const LayerSpec& spec, const Shape& input, std::string_view where = {}) {
  const auto& h = spec.hyper;
  switch (spec.kind) {
    case LayerKind::FullyConnected:
      if (input != Shape{h[0]}) detail::shape_error(spec, where, {h[0]}, input);
      return;
    case LayerKind::Conv2D:
    case LayerKind::TransposedConv2D:
      if (input != Shape{h[0], h[5], h[6]}) {
        detail::shape_error(spec, where, {h[0], h[5], h[6]}, input);
      }
      return;
    case LayerKind::ReLU:
      return;
    case LayerKind::Flatten: {
      const Shape expected(h.begin(), h.end());
      if (input != expected) detail::shape_error(spec, where, expected, input);
      return;
    }
    case LayerKind::ConcatChannels:
      if (input.empty() || input[0] != h[0]) {
        Shape expected = input.empty() ? Shape{h[0]} : input;
        expected[0] = h[0];
        detail::shape_error(spec, where, expected, input);
      }
      return;
    case LayerKind::SoftmaxOutput:
      if (input != Shape{h[0]}) detail::shape_error(spec, where, {h[0]}, input);
      return;
  }
  throw Error(Errc::UnknownLayerKind, "unknown layer kind");
}

/// Shape the ConcatChannels layer expects for its second (salt) operand.
inline Shape concat_extra_shape(const LayerSpec& spec, const Shape& input) {
  Shape extra = input;
  extra[0] = spec.hyper[1];
  return extra;
}

/// Per-sample output shape; validates the input first.
inline Shape infer_output_shape(const LayerSpec& spec, const Shape& input,
                                std::string_view where = {}) {
  check_input(spec, input, where);
  const auto& h = spec.hyper;
  switch (spec.kind) {
    case LayerKind::FullyConnected:
      return {h[1]};
    case LayerKind::Conv2D:
      return {h[1], kernels::conv_out(h[5], h[2], h[3], h[4]),
              kernels::conv_out(h[6], h[2], h[3], h[4])};
    case LayerKind::TransposedConv2D:
      return {h[1], kernels::conv_transpose_out(h[5], h[2], h[3], h[4]),
              kernels::conv_transpose_out(h[6], h[2], h[3], h[4])};
    case LayerKind::ReLU:
    case LayerKind::SoftmaxOutput:
      return input;
    case LayerKind::Flatten:
      return {shape_numel(input)};
    case LayerKind::ConcatChannels: {
      Shape out = input;
      out[0] += h[1];
      return out;
    }
  }
  throw Error(Errc::UnknownLayerKind, "unknown layer kind");
}

/// The input shape a layer pins down on its own, if any.
inline std::optional<Shape> fixed_input_shape(const LayerSpec& spec) {
  const auto& h = spec.hyper;
  switch (spec.kind) {
    case LayerKind::FullyConnected: return Shape{h[0]};
    case LayerKind::Conv2D:
    case LayerKind::TransposedConv2D: return Shape{h[0], h[5], h[6]};
    case LayerKind::Flatten: return Shape(h.begin(), h.end());
    case LayerKind::SoftmaxOutput: return Shape{h[0]};
    default: return std::nullopt;
  }
}

inline std::vector<Shape> param_shapes(const LayerSpec& spec) {
  const auto& h = spec.hyper;
  switch (spec.kind) {
    case LayerKind::FullyConnected: return {{h[1], h[0]}, {h[1]}};
    case LayerKind::Conv2D: return {{h[1], h[0], h[2], h[2]}, {h[1]}};
    case LayerKind::TransposedConv2D: return {{h[0], h[1], h[2], h[2]}, {h[1]}};
    default: return {};
  }
}

inline std::size_t param_count(const LayerSpec& spec) {
  std::size_t total = 0;
  for (const Shape& s : param_shapes(spec)) total += shape_numel(s);
  return total;
}

/// He-style uniform weights, bound sqrt(6 / fan_in); zero biases.
inline std::vector<Tensorf> init_params(const LayerSpec& spec, Rng& rng) {
  std::vector<Tensorf> params;
  const auto shapes = param_shapes(spec);
  if (shapes.empty()) return params;
  const auto& h = spec.hyper;
  std::size_t fan_in = 1;
  switch (spec.kind) {
    case LayerKind::FullyConnected: fan_in = h[0]; break;
    case LayerKind::Conv2D: fan_in = std::size_t{h[0]} * h[2] * h[2]; break;
    case LayerKind::TransposedConv2D: {
      // Input taps reaching one output pixel.
      const std::size_t taps = (h[2] + h[3] - 1) / h[3];
      fan_in = std::size_t{h[0]} * taps * taps;
      break;
    }
    default: break;
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensorf w(shapes[0]);
  for (float& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  params.push_back(std::move(w));
  params.emplace_back(shapes[1]);
  return params;
}

namespace detail {

template <typename T>
void check_params(const LayerSpec& spec, std::span<const Tensor<T>> params) {
  const auto shapes = param_shapes(spec);
  if (params.size() != shapes.size()) {
    throw Error(Errc::ShapeMismatch, std::string(to_string(spec.kind)) + " expects " +
                                         std::to_string(shapes.size()) + " parameter tensors, got " +
                                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].shape() != shapes[i]) {
      throw Error(Errc::ShapeMismatch, std::string(to_string(spec.kind)) + " parameter " +
                                           std::to_string(i) + " expects " + shape_str(shapes[i]) +
                                           ", got " + shape_str(params[i].shape()));
    }
  }
}

}  // namespace detail

/// Batched forward: `input` is [N, ...]. ConcatChannels takes its second
/// operand through `extra`.
template <typename T>
Tensor<T> forward_layer_batch(const LayerSpec& spec, std::span<const Tensor<T>> params,
                              const Tensor<T>& input, const Tensor<T>* extra = nullptr,
                              std::string_view where = {}) {
  if (input.rank() < 2) {
    throw Error(Errc::ShapeMismatch, "batched input needs a batch axis, got " +
                                         shape_str(input.shape()));
  }
  const Shape sample = sample_shape(input.shape());
  const Shape out = infer_output_shape(spec, sample, where);
  detail::check_params(spec, params);
  const std::size_t n = input.dim(0);
  switch (spec.kind) {
    case LayerKind::FullyConnected:
      return kernels::fc_forward(input, params[0], params[1]);
    case LayerKind::Conv2D:
      return kernels::conv2d_forward(input, params[0], params[1], detail::geometry(spec));
    case LayerKind::TransposedConv2D:
      return kernels::conv_transpose2d_forward(input, params[0], params[1],
                                               detail::geometry(spec));
    case LayerKind::ReLU:
      return kernels::relu_forward(input);
    case LayerKind::Flatten:
      return input.reshaped(batched(n, out));
    case LayerKind::ConcatChannels: {
      const Shape want = batched(n, concat_extra_shape(spec, sample));
      if (!extra || extra->shape() != want) {
        throw Error(Errc::ShapeMismatch,
                    std::string(where.empty() ? "ConcatChannels" : where) +
                        " expects second operand " + shape_str(want) + ", got " +
                        (extra ? shape_str(extra->shape()) : std::string("none")));
      }
      return kernels::concat_axis1(input, *extra);
    }
    case LayerKind::SoftmaxOutput:
      return kernels::softmax_rows(input);
  }
  throw Error(Errc::UnknownLayerKind, "unknown layer kind");
}

/// Single-sample forward: `input` has exactly the layer's per-sample shape.
template <typename T>
Tensor<T> forward_layer(const LayerSpec& spec, std::span<const Tensor<T>> params,
                        const Tensor<T>& input, const Tensor<T>* extra = nullptr) {
  const Tensor<T> x = input.reshaped(batched(1, input.shape()));
  std::optional<Tensor<T>> e;
  if (extra) e = extra->reshaped(batched(1, extra->shape()));
  Tensor<T> y = forward_layer_batch<T>(spec, params, x, e ? &*e : nullptr);
  return y.reshaped(sample_shape(y.shape()));
}

/// Records the layer on `graph`. `params` are graph variables aligned with
/// param_shapes(spec).
template <typename T>
typename Graph<T>::Var record_layer(Graph<T>& graph, const LayerSpec& spec,
                                    std::span<const typename Graph<T>::Var> params,
                                    typename Graph<T>::Var input,
                                    std::optional<typename Graph<T>::Var> extra = std::nullopt,
                                    std::string_view where = {}) {
  const Tensor<T>& x = graph.value(input);
  if (x.rank() < 2) {
    throw Error(Errc::ShapeMismatch, "batched input needs a batch axis");
  }
  const Shape sample = sample_shape(x.shape());
  const Shape out = infer_output_shape(spec, sample, where);
  if (params.size() != param_shapes(spec).size()) {
    throw Error(Errc::ShapeMismatch, std::string(to_string(spec.kind)) + " parameter count");
  }
  switch (spec.kind) {
    case LayerKind::FullyConnected:
      return graph.fully_connected(input, params[0], params[1]);
    case LayerKind::Conv2D:
      return graph.conv2d(input, params[0], params[1], detail::geometry(spec));
    case LayerKind::TransposedConv2D:
      return graph.conv_transpose2d(input, params[0], params[1], detail::geometry(spec));
    case LayerKind::ReLU:
      return graph.relu(input);
    case LayerKind::Flatten:
      return graph.reshape(input, batched(x.dim(0), out));
    case LayerKind::ConcatChannels: {
      const Shape want = batched(x.dim(0), concat_extra_shape(spec, sample));
      if (!extra || graph.value(*extra).shape() != want) {
        throw Error(Errc::ShapeMismatch, "ConcatChannels expects second operand " +
                                             shape_str(want));
      }
      return graph.concat(input, *extra);
    }
    case LayerKind::SoftmaxOutput:
      return graph.softmax(input);
  }
  throw Error(Errc::UnknownLayerKind, "unknown layer kind");
}

}  // namespace salted
