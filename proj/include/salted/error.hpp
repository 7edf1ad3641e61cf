#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace salted {

enum class Errc {
  ShapeMismatch,
  UnknownLayerKind,
  NoRecordedGraph,
  LengthMismatch,
  NotOneHot,
  AlignmentMismatch,
  SaltOutOfRange,
  ClassOutOfRange,
  SaltAfterCut,
  InvalidNetwork,
  BadMagic,
  VersionUnsupported,
  DigestMismatch,
  TruncatedFile,
  Io,
  ClassCountMismatch,
  EmptyDataset,
  InvalidConfig,
  InvalidShape,
  ParseError,
  LabelOutOfRange,
  RaggedRow,
  ClassTooSmall,
  UnsupportedVersion,
  UnknownType,
  PayloadTooLarge,
  ConnectFailed,
  ServerError,
  Timeout,
  ProtocolViolation,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UnknownLayerKind: return "UnknownLayerKind";
    case Errc::NoRecordedGraph: return "NoRecordedGraph";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NotOneHot: return "NotOneHot";
    case Errc::AlignmentMismatch: return "AlignmentMismatch";
    case Errc::SaltOutOfRange: return "SaltOutOfRange";
    case Errc::ClassOutOfRange: return "ClassOutOfRange";
    case Errc::SaltAfterCut: return "SaltAfterCut";
    case Errc::InvalidNetwork: return "InvalidNetwork";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::DigestMismatch: return "DigestMismatch";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::Io: return "Io";
    case Errc::ClassCountMismatch: return "ClassCountMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidShape: return "InvalidShape";
    case Errc::ParseError: return "ParseError";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::RaggedRow: return "RaggedRow";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::UnknownType: return "UnknownType";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::ConnectFailed: return "ConnectFailed";
    case Errc::ServerError: return "ServerError";
    case Errc::Timeout: return "Timeout";
    case Errc::ProtocolViolation: return "ProtocolViolation";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` is the
/// stable, testable part and `what()` carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  Errc code() const noexcept { return code_; }
  /// what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

/// Raised by the CSV reader; row is the 1-based line number in the file.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::size_t column, const std::string& message)
      : Error(Errc::ParseError, "row " + std::to_string(row) + ", column " +
                                    std::to_string(column) + ": " + message),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

/// ERROR frame received from the inference server.
class ServerError : public Error {
 public:
  ServerError(std::uint16_t code, const std::string& text)
      : Error(Errc::ServerError, "code " + std::to_string(code) + ": " + text),
        server_code_(code),
        text_(text) {}

  std::uint16_t server_code() const noexcept { return server_code_; }
  const std::string& text() const noexcept { return text_; }

 private:
  std::uint16_t server_code_;
  std::string text_;
};

}  // namespace salted
