#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "salted/autodiff.hpp"
#include "salted/error.hpp"
#include "salted/layers.hpp"
#include "salted/mapping.hpp"
#include "salted/rng.hpp"
#include "salted/tensor.hpp"

namespace salted {

enum class PartKind : std::uint8_t {
  Full = 0,
  Early = 1,
  Later = 2,
};

constexpr std::string_view to_string(PartKind kind) noexcept {
  switch (kind) {
    case PartKind::Full: return "full";
    case PartKind::Early: return "early";
    case PartKind::Later: return "later";
  }
  return "unknown";
}

/// A classifier with a secondary salt input.
///
/// The main chain is `layers`. The layer at `salted_layer_index` is a
/// ConcatChannels layer: it appends the salt embedding along the first
/// per-sample axis (channels for conv activations, features for dense ones)
/// and feeds the result to the next layer. The embedding comes from
/// `salt_branch`, one layer applied to the one-hot salt: a TransposedConv2D
/// over an S x 1 x 1 map, or a FullyConnected over a length-S vector.
///
/// Layers [0, cut_layer_index] form the client-side early part; the rest run
/// on the server.
struct SaltedNetwork {
  std::vector<Layer> layers;
  Layer salt_branch;
  std::size_t salted_layer_index = 0;
  std::size_t cut_layer_index = 0;
  SaltMapping mapping;

  std::size_t classes() const { return mapping.classes; }
  std::size_t salts() const { return mapping.salts; }

  friend bool operator==(const SaltedNetwork&, const SaltedNetwork&) = default;
};

/// One half (or the whole) of a partitioned network. Layer indices in the
/// metadata always refer to the unpartitioned chain.
struct ModelPart {
  PartKind kind = PartKind::Full;
  std::vector<Layer> layers;
  std::optional<Layer> salt_branch;
  std::size_t salted_layer_index = 0;
  std::size_t cut_layer_index = 0;
  SaltMapping mapping;

  friend bool operator==(const ModelPart&, const ModelPart&) = default;
};

// ------------------------------------------------------------- shapes

/// Per-sample input shape of a chain: the first layer that fixes one,
/// provided only shape-preserving layers precede it.
inline std::optional<Shape> chain_input_shape(std::span<const Layer> layers) {
  for (const Layer& l : layers) {
    if (auto fixed = fixed_input_shape(l.spec)) return fixed;
    if (l.spec.kind != LayerKind::ReLU) return std::nullopt;
  }
  return std::nullopt;
}

/// One-hot salt in the layout the branch consumes: [S,1,1] or [S].
inline Shape salt_input_shape(const Layer& branch) {
  if (branch.spec.kind == LayerKind::TransposedConv2D) return {branch.spec.hyper[0], 1, 1};
  return {branch.spec.hyper[0]};
}

inline std::string layer_label(std::size_t index, const LayerSpec& spec) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(spec.kind)) + ")";
}

namespace detail {

inline void check_layer_params(const Layer& layer, const std::string& label) {
  const auto shapes = param_shapes(layer.spec);
  if (layer.params.size() != shapes.size()) {
    throw Error(Errc::InvalidNetwork, label + " has " + std::to_string(layer.params.size()) +
                                          " parameter tensors, expected " +
                                          std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (layer.params[i].shape() != shapes[i]) {
      throw Error(Errc::InvalidNetwork, label + " parameter " + std::to_string(i) + " has shape " +
                                            shape_str(layer.params[i].shape()) + ", expected " +
                                            shape_str(shapes[i]));
    }
  }
}

inline void check_branch(const Layer& branch, const SaltMapping& mapping) {
  validate_spec(branch.spec);
  const auto& h = branch.spec.hyper;
  if (branch.spec.kind == LayerKind::TransposedConv2D) {
    if (h[0] != mapping.salts || h[5] != 1 || h[6] != 1) {
      throw Error(Errc::InvalidNetwork, "TransposedConv2D salt branch must read an S x 1 x 1 "
                                        "one-hot map (S = " +
                                            std::to_string(mapping.salts) + ")");
    }
  } else if (branch.spec.kind == LayerKind::FullyConnected) {
    if (h[0] != mapping.salts) {
      throw Error(Errc::InvalidNetwork, "FullyConnected salt branch must read a length-S one-hot");
    }
  } else {
    throw Error(Errc::InvalidNetwork, "salt branch must be TransposedConv2D or FullyConnected");
  }
  check_layer_params(branch, "salt branch");
}

}  // namespace detail

/// Throws InvalidNetwork / SaltAfterCut / ShapeMismatch when any structural
/// invariant fails; returns the per-sample input shape.
inline Shape validate(const SaltedNetwork& net) {
  if (net.layers.empty()) throw Error(Errc::InvalidNetwork, "network has no layers");
  if (net.mapping.classes < 2) throw Error(Errc::InvalidNetwork, "need at least 2 classes");
  if (net.mapping.salts < 1) throw Error(Errc::InvalidNetwork, "need at least 1 salt");
  const std::size_t n = net.layers.size();
  if (net.salted_layer_index >= n) {
    throw Error(Errc::InvalidNetwork, "salted layer index " +
                                          std::to_string(net.salted_layer_index) +
                                          " out of range [0, " + std::to_string(n) + ")");
  }
  if (net.cut_layer_index >= n) {
    throw Error(Errc::InvalidNetwork, "cut layer index " + std::to_string(net.cut_layer_index) +
                                          " out of range [0, " + std::to_string(n) + ")");
  }
  if (net.salted_layer_index > net.cut_layer_index) {
    throw Error(Errc::SaltAfterCut,
                "salted layer " + std::to_string(net.salted_layer_index) +
                    " lies after cut layer " + std::to_string(net.cut_layer_index) +
                    "; valid cuts are [" + std::to_string(net.salted_layer_index) + ", " +
                    std::to_string(n - 1) + "]");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Layer& l = net.layers[i];
    validate_spec(l.spec);
    detail::check_layer_params(l, layer_label(i, l.spec));
    const bool is_concat = l.spec.kind == LayerKind::ConcatChannels;
    if (is_concat != (i == net.salted_layer_index)) {
      throw Error(Errc::InvalidNetwork, is_concat ? layer_label(i, l.spec) +
                                                        " is a ConcatChannels layer but not the "
                                                        "salted layer"
                                                  : "salted layer " + std::to_string(i) +
                                                        " must be ConcatChannels");
    }
  }
  const LayerSpec& last = net.layers.back().spec;
  if (last.kind != LayerKind::SoftmaxOutput || last.hyper[0] != net.mapping.classes) {
    throw Error(Errc::InvalidNetwork,
                "final layer must be SoftmaxOutput over K = " + std::to_string(net.mapping.classes));
  }
  detail::check_branch(net.salt_branch, net.mapping);

  const auto input = chain_input_shape(net.layers);
  if (!input) throw Error(Errc::InvalidNetwork, "cannot determine the network input shape");
  Shape shape = *input;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = net.layers[i].spec;
    if (i == net.salted_layer_index) {
      const Shape want = concat_extra_shape(spec, shape);
      const Shape got = infer_output_shape(net.salt_branch.spec, salt_input_shape(net.salt_branch));
      if (got != want) {
        throw Error(Errc::InvalidNetwork, "salt branch emits " + shape_str(got) + " but " +
                                              layer_label(i, spec) + " concatenates " +
                                              shape_str(want));
      }
    }
    shape = infer_output_shape(spec, shape, layer_label(i, spec));
  }
  return *input;
}

inline Shape input_shape(const SaltedNetwork& net) { return validate(net); }

/// Allocates freshly initialised parameters for every layer and the branch.
inline void initialize(SaltedNetwork& net, std::uint64_t seed) {
  Rng rng = Rng(seed).split(Stream::Init);
  for (Layer& l : net.layers) l.params = init_params(l.spec, rng);
  net.salt_branch.params = init_params(net.salt_branch.spec, rng);
}

/// Parameters in the canonical order: chain layers first, then the branch.
inline std::vector<Tensorf*> parameters(SaltedNetwork& net) {
  std::vector<Tensorf*> out;
  for (Layer& l : net.layers) {
    for (Tensorf& p : l.params) out.push_back(&p);
  }
  for (Tensorf& p : net.salt_branch.params) out.push_back(&p);
  return out;
}

struct ParameterReport {
  std::size_t total = 0;        // chain + branch
  std::size_t salt_branch = 0;  // branch only
  double branch_fraction() const {
    return total ? static_cast<double>(salt_branch) / static_cast<double>(total) : 0.0;
  }
};

inline ParameterReport parameter_report(const SaltedNetwork& net) {
  ParameterReport r;
  for (const Layer& l : net.layers) r.total += param_count(l.spec);
  r.salt_branch = param_count(net.salt_branch.spec);
  r.total += r.salt_branch;
  return r;
}

// ---------------------------------------------------------- salt embedding

inline void check_salt(const SaltMapping& mapping, std::size_t salt) {
  if (salt >= mapping.salts) {
    throw Error(Errc::SaltOutOfRange, "salt " + std::to_string(salt) + " not in [0, " +
                                          std::to_string(mapping.salts) + ")");
  }
}

/// Batched one-hot salts in the branch's input layout.
inline Tensorf salt_one_hot(const Layer& branch, const SaltMapping& mapping,
                            std::span<const std::size_t> salts) {
  const Shape sample = salt_input_shape(branch);
  Tensorf x(batched(salts.size(), sample));
  const std::size_t stride = shape_numel(sample);
  for (std::size_t i = 0; i < salts.size(); ++i) {
    check_salt(mapping, salts[i]);
    x[i * stride + salts[i]] = 1.0f;
  }
  return x;
}

inline Tensorf embed_salt_batch(const Layer& branch, const SaltMapping& mapping,
                                std::span<const std::size_t> salts) {
  const Tensorf onehot = salt_one_hot(branch, mapping, salts);
  return forward_layer_batch<float>(branch.spec, branch.params, onehot, nullptr, "salt branch");
}

/// Embedding of salt `s`, shaped like the salted layer's second operand.
inline Tensorf embed_salt(const SaltedNetwork& net, std::size_t salt) {
  check_salt(net.mapping, salt);
  const std::size_t s[] = {salt};
  const Tensorf e = embed_salt_batch(net.salt_branch, net.mapping, s);
  return e.reshaped(sample_shape(e.shape()));
}

// ----------------------------------------------------------------- forward

namespace detail {

/// Runs layers[first..] of a chain whose indices start at `offset` in the
/// unpartitioned network.
inline Tensorf run_chain(std::span<const Layer> layers, std::size_t offset, Tensorf h,
                         const Tensorf* embedding) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.spec.kind == LayerKind::ConcatChannels && !embedding) {
      throw Error(Errc::InvalidNetwork, "salted layer reached without a salt embedding");
    }
    h = forward_layer_batch<float>(l.spec, l.params, h,
                                   l.spec.kind == LayerKind::ConcatChannels ? embedding : nullptr,
                                   layer_label(offset + i, l.spec));
  }
  return h;
}

inline void check_batch(const Tensorf& x, std::size_t salts) {
  if (x.rank() < 2 || x.dim(0) != salts) {
    throw Error(Errc::ShapeMismatch, "batch " + shape_str(x.shape()) + " with " +
                                         std::to_string(salts) + " salts");
  }
}

}  // namespace detail

/// Batched forward: x is [N, ...input], one salt per row. Returns [N, K]
/// salted probabilities.
inline Tensorf forward_salted_batch(const SaltedNetwork& net, const Tensorf& x,
                                    std::span<const std::size_t> salts) {
  detail::check_batch(x, salts.size());
  const Tensorf e = embed_salt_batch(net.salt_branch, net.mapping, salts);
  return detail::run_chain(net.layers, 0, x, &e);
}

/// Y^s = theta(x, s) for one sample.
inline Tensorf forward_salted(const SaltedNetwork& net, const Tensorf& x, std::size_t salt) {
  check_salt(net.mapping, salt);
  const std::size_t s[] = {salt};
  Tensorf y = forward_salted_batch(net, x.reshaped(batched(1, x.shape())), s);
  return y.reshaped({net.mapping.classes});
}

// ---------------------------------------------------------- training graph

struct RecordedForward {
  std::vector<Graph<float>::Var> params;  // aligned with parameters(net)
  Graph<float>::Var logits;
};

/// Records the forward pass up to (excluding) the final SoftmaxOutput, so
/// the caller can attach a fused softmax cross-entropy loss.
inline RecordedForward record_forward(Graph<float>& graph, const SaltedNetwork& net,
                                      const Tensorf& x, std::span<const std::size_t> salts) {
  detail::check_batch(x, salts.size());
  RecordedForward rec;
  std::vector<std::vector<Graph<float>::Var>> layer_vars(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    for (const Tensorf& p : net.layers[i].params) {
      layer_vars[i].push_back(graph.parameter(p));
      rec.params.push_back(layer_vars[i].back());
    }
  }
  std::vector<Graph<float>::Var> branch_vars;
  for (const Tensorf& p : net.salt_branch.params) {
    branch_vars.push_back(graph.parameter(p));
    rec.params.push_back(branch_vars.back());
  }

  const auto onehot = graph.input(salt_one_hot(net.salt_branch, net.mapping, salts));
  const auto embedding =
      record_layer<float>(graph, net.salt_branch.spec, branch_vars, onehot, std::nullopt,
                          "salt branch");
  auto h = graph.input(x);
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i].spec;
    h = record_layer<float>(graph, spec, layer_vars[i], h,
                            spec.kind == LayerKind::ConcatChannels
                                ? std::optional<Graph<float>::Var>(embedding)
                                : std::nullopt,
                            layer_label(i, spec));
  }
  rec.logits = h;
  return rec;
}

// -------------------------------------------------------------- partition

inline ModelPart to_part(const SaltedNetwork& net) {
  validate(net);
  return ModelPart{PartKind::Full, net.layers, net.salt_branch, net.salted_layer_index,
                   net.cut_layer_index, net.mapping};
}

inline SaltedNetwork to_network(const ModelPart& part) {
  if (part.kind != PartKind::Full || !part.salt_branch) {
    throw Error(Errc::InvalidNetwork, std::string("expected a full model, got ") +
                                          std::string(to_string(part.kind)) + " part");
  }
  SaltedNetwork net{part.layers, *part.salt_branch, part.salted_layer_index,
                    part.cut_layer_index, part.mapping};
  validate(net);
  return net;
}

/// Splits at `cut` (inclusive in the early part).
inline std::pair<ModelPart, ModelPart> partition(const SaltedNetwork& net, std::size_t cut) {
  SaltedNetwork moved = net;
  moved.cut_layer_index = cut;
  validate(moved);
  ModelPart early{PartKind::Early,
                  std::vector<Layer>(net.layers.begin(), net.layers.begin() + cut + 1),
                  net.salt_branch,
                  net.salted_layer_index,
                  cut,
                  net.mapping};
  ModelPart later{PartKind::Later,
                  std::vector<Layer>(net.layers.begin() + cut + 1, net.layers.end()),
                  std::nullopt,
                  net.salted_layer_index,
                  cut,
                  net.mapping};
  return {std::move(early), std::move(later)};
}

inline std::pair<ModelPart, ModelPart> partition(const SaltedNetwork& net) {
  return partition(net, net.cut_layer_index);
}

/// Reassembles a network from its halves.
inline SaltedNetwork join(const ModelPart& early, const ModelPart& later) {
  if (early.kind != PartKind::Early || later.kind != PartKind::Later || !early.salt_branch) {
    throw Error(Errc::InvalidNetwork, "join needs an early part and a later part");
  }
  if (early.mapping != later.mapping || early.cut_layer_index != later.cut_layer_index ||
      early.salted_layer_index != later.salted_layer_index) {
    throw Error(Errc::InvalidNetwork, "parts come from different partitions");
  }
  SaltedNetwork net;
  net.layers = early.layers;
  net.layers.insert(net.layers.end(), later.layers.begin(), later.layers.end());
  net.salt_branch = *early.salt_branch;
  net.salted_layer_index = early.salted_layer_index;
  net.cut_layer_index = early.cut_layer_index;
  net.mapping = early.mapping;
  validate(net);
  return net;
}

/// Checks a part's own structure (what a client or server can verify alone).
inline void validate(const ModelPart& part) {
  if (part.kind == PartKind::Full) {
    to_network(part);
    return;
  }
  if (part.mapping.classes < 2 || part.mapping.salts < 1) {
    throw Error(Errc::InvalidNetwork, "bad class or salt count");
  }
  const std::size_t offset = part.kind == PartKind::Early ? 0 : part.cut_layer_index + 1;
  if (part.kind == PartKind::Early) {
    if (!part.salt_branch) throw Error(Errc::InvalidNetwork, "early part lacks the salt branch");
    if (part.layers.size() != part.cut_layer_index + 1) {
      throw Error(Errc::InvalidNetwork, "early part must hold layers 0.." +
                                            std::to_string(part.cut_layer_index));
    }
    if (part.salted_layer_index > part.cut_layer_index) {
      throw Error(Errc::SaltAfterCut, "salted layer lies after the cut");
    }
    detail::check_branch(*part.salt_branch, part.mapping);
  } else if (part.salt_branch) {
    throw Error(Errc::InvalidNetwork, "later part must not carry the salt branch");
  }
  for (std::size_t i = 0; i < part.layers.size(); ++i) {
    const Layer& l = part.layers[i];
    validate_spec(l.spec);
    detail::check_layer_params(l, layer_label(offset + i, l.spec));
    const bool is_concat = l.spec.kind == LayerKind::ConcatChannels;
    if (is_concat != (offset + i == part.salted_layer_index)) {
      throw Error(Errc::InvalidNetwork, "ConcatChannels must sit exactly at the salted layer");
    }
  }
  if (part.kind == PartKind::Later && !part.layers.empty()) {
    const LayerSpec& last = part.layers.back().spec;
    if (last.kind != LayerKind::SoftmaxOutput || last.hyper[0] != part.mapping.classes) {
      throw Error(Errc::InvalidNetwork, "later part must end in SoftmaxOutput over K");
    }
  }
}

/// Z = theta1(x, s), batched.
inline Tensorf forward_early_batch(const ModelPart& early, const Tensorf& x,
                                   std::span<const std::size_t> salts) {
  if (early.kind != PartKind::Early || !early.salt_branch) {
    throw Error(Errc::InvalidNetwork, "forward_early needs an early part");
  }
  detail::check_batch(x, salts.size());
  const Tensorf e = embed_salt_batch(*early.salt_branch, early.mapping, salts);
  return detail::run_chain(early.layers, 0, x, &e);
}

inline Tensorf forward_early(const ModelPart& early, const Tensorf& x, std::size_t salt) {
  check_salt(early.mapping, salt);
  const std::size_t s[] = {salt};
  const Tensorf z = forward_early_batch(early, x.reshaped(batched(1, x.shape())), s);
  return z.reshaped(sample_shape(z.shape()));
}

/// Y^s = theta2(Z), batched; Z is [N, ...].
inline Tensorf forward_later_batch(const ModelPart& later, const Tensorf& z) {
  if (later.kind != PartKind::Later) {
    throw Error(Errc::InvalidNetwork, "forward_later needs a later part");
  }
  return detail::run_chain(later.layers, later.cut_layer_index + 1, z, nullptr);
}

inline Tensorf forward_later(const ModelPart& later, const Tensorf& z) {
  const Tensorf y = forward_later_batch(later, z.reshaped(batched(1, z.shape())));
  return y.reshaped(sample_shape(y.shape()));
}

/// Per-sample shape the later part accepts, when its first layers pin one.
inline std::optional<Shape> later_input_shape(const ModelPart& later) {
  return chain_input_shape(later.layers);
}

}  // namespace salted
