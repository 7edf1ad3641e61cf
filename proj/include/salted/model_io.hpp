#pragma once

// Model file layout (all integers little-endian, reals IEEE-754 binary32):
//
//   "SDNN"                     magic, 4 bytes
//   u16  version               = 1
//   u8   part_kind             0 full, 1 early, 2 later
//   u32  K, u32 S
//   u8   mapping_id            0 modulo
//   u32  salted_layer_index, u32 cut_layer_index
//   u32  layer_count
//   layer_count x {
//     u8 kind, u8 hyper_count, u32 hyper[hyper_count],
//     u8 tensor_count, tensor_count x { u8 rank, u32 dims[rank], f32 values[prod(dims)] }
//   }
//   u64  FNV-1a-64 of every byte after the magic and before this field
//
// Full and early parts append the salt branch as one extra layer record
// after the chain, counted in layer_count.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "salted/bytes.hpp"
#include "salted/error.hpp"
#include "salted/network.hpp"

namespace salted {

inline constexpr char kModelMagic[4] = {'S', 'D', 'N', 'N'};
inline constexpr std::uint16_t kModelVersion = 1;

namespace detail {

inline void write_layer(ByteWriter& w, const Layer& layer) {
  w.u8(static_cast<std::uint8_t>(layer.spec.kind));
  w.u8(static_cast<std::uint8_t>(layer.spec.hyper.size()));
  for (std::uint32_t h : layer.spec.hyper) w.u32(h);
  w.u8(static_cast<std::uint8_t>(layer.params.size()));
  for (const Tensorf& t : layer.params) {
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
  }
}

inline Layer read_layer(ByteReader& r) {
  Layer layer;
  layer.spec.kind = layer_kind_from_code(r.u8());
  const std::uint8_t hyper_count = r.u8();
  for (std::uint8_t i = 0; i < hyper_count; ++i) layer.spec.hyper.push_back(r.u32());
  const std::uint8_t tensors = r.u8();
  for (std::uint8_t i = 0; i < tensors; ++i) {
    const std::uint8_t rank = r.u8();
    Shape shape;
    std::size_t count = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      if (shape.back() == 0) throw Error(Errc::InvalidNetwork, "zero-sized tensor dimension");
      count *= shape.back();
      if (count * 4 > r.remaining()) throw Error(Errc::TruncatedFile, "tensor payload exceeds file");
    }
    std::vector<float> values(count);
    for (float& v : values) v = r.f32();
    layer.params.emplace_back(std::move(shape), std::move(values));
  }
  return layer;
}

inline ModelPart parse_body(ByteReader& r) {
  ModelPart part;
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw Error(Errc::InvalidNetwork, "part kind " + std::to_string(kind));
  part.kind = static_cast<PartKind>(kind);
  part.mapping.classes = r.u32();
  part.mapping.salts = r.u32();
  const std::uint8_t mapping_id = r.u8();
  if (mapping_id != static_cast<std::uint8_t>(MappingId::Modulo)) {
    throw Error(Errc::InvalidNetwork, "mapping id " + std::to_string(mapping_id));
  }
  part.mapping.id = MappingId::Modulo;
  part.salted_layer_index = r.u32();
  part.cut_layer_index = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(read_layer(r));
  if (part.kind != PartKind::Later) {
    if (layers.empty()) throw Error(Errc::InvalidNetwork, "missing salt branch record");
    part.salt_branch = std::move(layers.back());
    layers.pop_back();
  }
  part.layers = std::move(layers);
  return part;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const ModelPart& part) {
  ByteWriter w;
  w.raw(std::string_view(kModelMagic, 4));
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(part.kind));
  w.u32(part.mapping.classes);
  w.u32(part.mapping.salts);
  w.u8(static_cast<std::uint8_t>(part.mapping.id));
  w.u32(static_cast<std::uint32_t>(part.salted_layer_index));
  w.u32(static_cast<std::uint32_t>(part.cut_layer_index));
  w.u32(static_cast<std::uint32_t>(part.layers.size() + (part.salt_branch ? 1 : 0)));
  for (const Layer& l : part.layers) detail::write_layer(w, l);
  if (part.salt_branch) detail::write_layer(w, *part.salt_branch);
  const auto& bytes = w.bytes();
  w.u64(fnv1a64(std::span(bytes).subspan(4)));
  return w.take();
}

inline std::vector<std::uint8_t> serialize(const SaltedNetwork& net) { return serialize(to_part(net)); }

/// Digest stored in the trailer of the serialized part.
inline std::uint64_t content_digest(const ModelPart& part) {
  const auto bytes = serialize(part);
  ByteReader r(std::span<const std::uint8_t>(bytes).subspan(bytes.size() - 8));
  return r.u64();
}

inline ModelPart deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw Error(Errc::BadMagic, "not a model file");
  }
  ByteReader header(bytes.subspan(4));
  const std::uint16_t version = header.u16();
  if (version != kModelVersion) {
    throw Error(Errc::VersionUnsupported, "model format version " + std::to_string(version));
  }
  constexpr std::size_t kMinSize = 4 + 2 + 1 + 4 + 4 + 1 + 4 + 4 + 4 + 8;
  if (bytes.size() < kMinSize) throw Error(Errc::TruncatedFile, "file too short");

  const auto body = bytes.subspan(4, bytes.size() - 12);
  ByteReader trailer(bytes.subspan(bytes.size() - 8));
  const std::uint64_t stored = trailer.u64();
  if (fnv1a64(body) != stored) {
    // Distinguish a cut-off file from corrupted content.
    ByteReader probe(bytes.subspan(6));
    try {
      detail::parse_body(probe);
    } catch (const Error& e) {
      if (e.code() == Errc::TruncatedFile) throw;
    }
    throw Error(Errc::DigestMismatch, "stored digest does not match content");
  }

  ByteReader r(body.subspan(2));
  ModelPart part = detail::parse_body(r);
  if (r.remaining() != 0) throw Error(Errc::InvalidNetwork, "trailing bytes after last layer");
  validate(part);
  return part;
}

inline void save_model(const ModelPart& part, const std::filesystem::path& path) {
  const auto bytes = serialize(part);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "write failed: " + path.string());
}

inline void save_model(const SaltedNetwork& net, const std::filesystem::path& path) {
  save_model(to_part(net), path);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline ModelPart load_model(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

inline SaltedNetwork load_network(const std::filesystem::path& path) {
  return to_network(load_model(path));
}

}  // namespace salted
