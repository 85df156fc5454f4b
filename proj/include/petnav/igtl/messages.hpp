/*=========================================================================
 *
 *  Copyright PETNav contributors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         https://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#pragma once

// OpenIGTLink-compatible framing: 58-byte big-endian header followed by
// a type-specific body, guarded by CRC-64/ECMA-182.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "petnav/transforms.hpp"

namespace petnav::igtl
{

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t   kHeaderSize = 58;
inline constexpr std::size_t   kTypeNameSize = 12;
inline constexpr std::size_t   kDeviceNameSize = 20;
inline constexpr std::size_t   kTransformBodySize = 48;
inline constexpr std::size_t   kStatusFixedSize = 30;
inline constexpr std::size_t   kStatusErrorNameSize = 20;
inline constexpr std::uint16_t kProtocolVersion = 2;
inline constexpr std::uint64_t kMaxBodySize = 1u << 20;

/** CRC-64/ECMA-182: poly 0x42F0E1EBA9EA3693, init 0, no reflection, xorout 0. */
std::uint64_t crc64(std::span<const std::uint8_t> data) noexcept;
std::uint64_t crc64_update(std::uint64_t crc, std::span<const std::uint8_t> data) noexcept;

class ProtocolError : public std::runtime_error
{
public:
  enum class Kind
  {
    ShortRead,
    CrcMismatch,
    VersionMismatch,
    BodyTooLarge,
    BadBody,
    BadName
  };

  ProtocolError(Kind kind, const std::string & what)
    : std::runtime_error(what)
    , m_Kind(kind)
  {}

  Kind
  kind() const noexcept
  {
    return m_Kind;
  }

private:
  Kind m_Kind;
};

/** 64-bit fixed-point time: upper 32 bits seconds, lower 32 bits fraction. */
struct Timestamp
{
  std::uint32_t seconds = 0;
  std::uint32_t fraction = 0;

  static Timestamp from_seconds(double t);
  double           to_seconds() const noexcept;
  std::uint64_t    packed() const noexcept { return (std::uint64_t(seconds) << 32) | fraction; }
  static Timestamp unpack(std::uint64_t v) noexcept { return { std::uint32_t(v >> 32), std::uint32_t(v) }; }

  friend bool operator==(const Timestamp &, const Timestamp &) = default;
};

struct MessageHeader
{
  std::uint16_t version = kProtocolVersion;
  std::string   type_name;
  std::string   device_name;
  Timestamp     timestamp;
  std::uint64_t body_size = 0;
  std::uint64_t body_crc = 0;

  friend bool operator==(const MessageHeader &, const MessageHeader &) = default;
};

/** Rotation columns and position, as carried on the wire (float32). */
struct TransformMessage
{
  MessageHeader             header;
  std::array<float, 12>     matrix{}; // R11 R21 R31 R12 R22 R32 R13 R23 R33 Tx Ty Tz

  RigidTransform to_rigid() const noexcept;
  Mat3           rotation() const noexcept;
  Vec3           position() const noexcept;

  /** Throws BadBody unless the rotation is orthonormal to tol. */
  void validate(double tol = 1e-3) const;

  friend bool operator==(const TransformMessage &, const TransformMessage &) = default;
};

struct StatusMessage
{
  MessageHeader header;
  std::uint16_t code = 1; // 1 = OK
  std::int64_t  subcode = 0;
  std::string   error_name;
  std::string   message;

  friend bool operator==(const StatusMessage &, const StatusMessage &) = default;
};

/** Any message whose type is neither TRANSFORM nor STATUS; body is kept verbatim. */
struct UnknownMessage
{
  MessageHeader header;
  Bytes         body;

  friend bool operator==(const UnknownMessage &, const UnknownMessage &) = default;
};

using Message = std::variant<TransformMessage, StatusMessage, UnknownMessage>;

/** Status codes used by the session layer. */
enum StatusCode : std::uint16_t
{
  kStatusOk = 1,
  kStatusUnknownError = 2,
  kStatusNotReady = 10
};

Bytes encode_header(const MessageHeader & h);
/** Parses the fixed 58-byte header (no body checks). */
MessageHeader decode_header(std::span<const std::uint8_t> bytes);

Bytes encode_transform(const std::string & device, double timestamp_seconds, const RigidTransform & t);
Bytes encode(const TransformMessage & m);
Bytes encode_status(const std::string & device, double timestamp_seconds, std::uint16_t code, std::int64_t subcode,
                    const std::string & error_name, const std::string & message);
Bytes encode(const StatusMessage & m);
Bytes encode(const UnknownMessage & m);

/**
 * Decodes one complete message. Validates version, body length, body
 * size limit and CRC; unknown types come back as UnknownMessage.
 */
Message decode_message(std::span<const std::uint8_t> bytes);

/** Decodes a header plus separately read body. */
Message decode_message(const MessageHeader & header, std::span<const std::uint8_t> body);

/** Header field checks that must pass before the body is read. */
void validate_header(const MessageHeader & h);

/**
 * Incremental decoder for a byte stream: feed arbitrary chunks, pull out
 * whole messages. Any protocol error poisons the stream.
 */
class StreamDecoder
{
public:
  void feed(std::span<const std::uint8_t> chunk);

  /** Next complete message, or nullopt if more bytes are needed. Throws ProtocolError. */
  std::optional<Message> next();

  std::size_t
  buffered() const noexcept
  {
    return m_Buffer.size() - m_Offset;
  }

private:
  Bytes       m_Buffer;
  std::size_t m_Offset = 0;
};

} // namespace petnav::igtl
