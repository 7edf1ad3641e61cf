#pragma once

// Frame: "SALT" | u8 version=1 | u8 msg_type | u32 payload_len (LE) | payload
//
//   INFER_REQUEST  (1)  payload = tensor Z
//   INFER_RESPONSE (2)  payload = tensor Y^s
//   ERROR          (3)  payload = u16 code (LE) | UTF-8 message
//
// Tensor: u8 rank | u32 dims[rank] (LE) | f32 values (LE, row-major).
// A rank-0 tensor carries exactly one value.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salted/bytes.hpp"
#include "salted/error.hpp"
#include "salted/tensor.hpp"

namespace salted::wire {

inline constexpr char kMagic[4] = {'S', 'A', 'L', 'T'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MessageType : std::uint8_t {
  InferRequest = 1,
  InferResponse = 2,
  Error = 3,
};

/// Codes carried in ERROR frames.
enum class ErrorCode : std::uint16_t {
  ShapeMismatch = 1,
  DecodeFailure = 2,
  Internal = 3,
};

struct WireMessage {
  MessageType type = MessageType::InferRequest;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

struct FrameHeader {
  MessageType type;
  std::uint32_t payload_len;
};

inline std::vector<std::uint8_t> encode_message(const WireMessage& msg) {
  if (msg.payload.size() > kMaxPayload) {
    throw Error(Errc::PayloadTooLarge, std::to_string(msg.payload.size()) + " byte payload");
  }
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.u32(static_cast<std::uint32_t>(msg.payload.size()));
  w.raw(msg.payload);
  return w.take();
}

/// Validates a 10-byte header: magic, then version, then type, then size.
inline FrameHeader decode_header(std::span<const std::uint8_t> header,
                                 std::uint32_t max_payload = kMaxPayload) {
  if (header.size() < kHeaderSize) {
    throw Error(Errc::LengthMismatch, "frame shorter than its 10-byte header");
  }
  if (std::memcmp(header.data(), kMagic, 4) != 0) throw Error(Errc::BadMagic, "frame magic");
  ByteReader r(header.subspan(4, kHeaderSize - 4), Errc::LengthMismatch);
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw Error(Errc::UnsupportedVersion, "protocol version " + std::to_string(version));
  }
  const std::uint8_t type = r.u8();
  if (type < 1 || type > 3) throw Error(Errc::UnknownType, "message type " + std::to_string(type));
  const std::uint32_t len = r.u32();
  if (len > max_payload) {
    throw Error(Errc::PayloadTooLarge, "payload of " + std::to_string(len) + " bytes exceeds " +
                                           std::to_string(max_payload));
  }
  return {static_cast<MessageType>(type), len};
}

/// Decodes one complete frame; `frame` must be exactly header + payload.
inline WireMessage decode_message(std::span<const std::uint8_t> frame,
                                  std::uint32_t max_payload = kMaxPayload) {
  const FrameHeader h = decode_header(frame, max_payload);
  if (frame.size() - kHeaderSize != h.payload_len) {
    throw Error(Errc::LengthMismatch, "payload_len " + std::to_string(h.payload_len) +
                                          " but body has " +
                                          std::to_string(frame.size() - kHeaderSize) + " bytes");
  }
  const auto body = frame.subspan(kHeaderSize);
  return {h.type, std::vector<std::uint8_t>(body.begin(), body.end())};
}

inline std::vector<std::uint8_t> encode_tensor(const Tensorf& t) {
  if (t.rank() > 255) throw Error(Errc::ProtocolViolation, "rank exceeds 255");
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
  return w.take();
}

/// Decodes a tensor body; the value count must match the dims exactly.
inline Tensorf decode_tensor(std::span<const std::uint8_t> body) {
  ByteReader r(body, Errc::LengthMismatch);
  const std::uint8_t rank = r.u8();
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw Error(Errc::ProtocolViolation, "zero-sized dimension");
    shape.push_back(d);
    count *= d;
    if (count > body.size()) throw Error(Errc::LengthMismatch, "dims exceed payload");
  }
  if (r.remaining() != count * 4) {
    throw Error(Errc::LengthMismatch, "tensor " + shape_str(shape) + " needs " +
                                          std::to_string(count * 4) + " value bytes, got " +
                                          std::to_string(r.remaining()));
  }
  std::vector<float> values(count);
  for (float& v : values) v = r.f32();
  return Tensorf(std::move(shape), std::move(values));
}

inline WireMessage make_request(const Tensorf& z) { return {MessageType::InferRequest, encode_tensor(z)}; }
inline WireMessage make_response(const Tensorf& y) { return {MessageType::InferResponse, encode_tensor(y)}; }

inline WireMessage make_error(ErrorCode code, std::string_view text) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(code));
  w.raw(text);
  return {MessageType::Error, w.take()};
}

struct ErrorPayload {
  std::uint16_t code = 0;
  std::string text;
};

inline ErrorPayload decode_error(std::span<const std::uint8_t> body) {
  ByteReader r(body, Errc::LengthMismatch);
  ErrorPayload e;
  e.code = r.u16();
  const auto rest = r.raw(r.remaining());
  e.text.assign(rest.begin(), rest.end());
  return e;
}

}  // namespace salted::wire
