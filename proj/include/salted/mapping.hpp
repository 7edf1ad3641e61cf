#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "salted/error.hpp"
#include "salted/tensor.hpp"

namespace salted {

enum class MappingId : std::uint8_t {
  Modulo = 0,
};

/// Salt-indexed family of class permutations. Classes and salts are 0-based,
/// so salt 0 is the identity.
struct SaltMapping {
  MappingId id = MappingId::Modulo;
  std::uint32_t classes = 2;  // K
  std::uint32_t salts = 2;    // S

  void check(std::size_t salt, std::size_t cls) const {
    if (salt >= salts) {
      throw Error(Errc::SaltOutOfRange,
                  "salt " + std::to_string(salt) + " not in [0, " + std::to_string(salts) + ")");
    }
    if (cls >= classes) {
      throw Error(Errc::ClassOutOfRange,
                  "class " + std::to_string(cls) + " not in [0, " + std::to_string(classes) + ")");
    }
  }

  /// Position of true class `cls` in the salted output: (cls + salt) mod K.
  std::size_t map_label(std::size_t salt, std::size_t cls) const {
    check(salt, cls);
    return (cls + salt) % classes;
  }

  /// True class of salted position `salted_cls`: (salted_cls - salt) mod K.
  std::size_t unmap_label(std::size_t salt, std::size_t salted_cls) const {
    check(salt, salted_cls);
    const std::size_t shift = salt % classes;
    return (salted_cls + classes - shift) % classes;
  }

  /// out[map_label(s, y)] = probs[y].
  template <typename T>
  Tensor<T> permute_output(std::size_t salt, const Tensor<T>& probs) const {
    check_length(probs);
    Tensor<T> out(probs.shape());
    for (std::size_t y = 0; y < classes; ++y) out[map_label(salt, y)] = probs[y];
    return out;
  }

  /// out[y] = salted[map_label(s, y)]; inverse of permute_output.
  template <typename T>
  Tensor<T> unpermute_output(std::size_t salt, const Tensor<T>& salted) const {
    check_length(salted);
    Tensor<T> out(salted.shape());
    for (std::size_t y = 0; y < classes; ++y) out[y] = salted[map_label(salt, y)];
    return out;
  }

  friend bool operator==(const SaltMapping&, const SaltMapping&) = default;

 private:
  template <typename T>
  void check_length(const Tensor<T>& v) const {
    if (v.rank() != 1 || v.size() != classes) {
      throw Error(Errc::LengthMismatch, "expected a length-" + std::to_string(classes) +
                                            " vector, got " + shape_str(v.shape()));
    }
  }
};

}  // namespace salted
