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
#include "petnav/igtl/messages.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace petnav::igtl
{

namespace
{

constexpr std::uint64_t kPoly = 0x42F0E1EBA9EA3693ULL;

constexpr std::array<std::uint64_t, 256>
make_table()
{
  std::array<std::uint64_t, 256> t{};
  for (std::uint64_t i = 0; i < 256; ++i)
  {
    std::uint64_t c = i << 56;
    for (int k = 0; k < 8; ++k)
      c = (c & (1ULL << 63)) ? (c << 1) ^ kPoly : (c << 1);
    t[i] = c;
  }
  return t;
}

constexpr auto kTable = make_table();

void
put_u16(Bytes & out, std::uint16_t v)
{
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void
put_u32(Bytes & out, std::uint32_t v)
{
  for (int s = 24; s >= 0; s -= 8)
    out.push_back(std::uint8_t(v >> s));
}

void
put_u64(Bytes & out, std::uint64_t v)
{
  for (int s = 56; s >= 0; s -= 8)
    out.push_back(std::uint8_t(v >> s));
}

void
put_name(Bytes & out, const std::string & s, std::size_t width)
{
  for (std::size_t i = 0; i < width; ++i)
    out.push_back(i < s.size() ? std::uint8_t(s[i]) : 0);
}

std::uint16_t
get_u16(const std::uint8_t * p)
{
  return std::uint16_t((p[0] << 8) | p[1]);
}

std::uint32_t
get_u32(const std::uint8_t * p)
{
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

std::uint64_t
get_u64(const std::uint8_t * p)
{
  return (std::uint64_t(get_u32(p)) << 32) | get_u32(p + 4);
}

std::string
get_name(const std::uint8_t * p, std::size_t width)
{
  std::size_t n = 0;
  while (n < width && p[n] != 0)
    ++n;
  return std::string(reinterpret_cast<const char *>(p), n);
}

void
check_name(const std::string & s, std::size_t width, const char * what)
{
  if (s.size() > width)
    throw ProtocolError(ProtocolError::Kind::BadName, std::string(what) + " longer than " + std::to_string(width) +
                                                          " bytes: '" + s + "'");
  for (char c : s)
    if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) > 0x7E)
      throw ProtocolError(ProtocolError::Kind::BadName, std::string(what) + " must be printable ASCII");
}

MessageHeader
make_header(const std::string & type, const std::string & device, double t, const Bytes & body)
{
  MessageHeader h;
  h.type_name = type;
  h.device_name = device;
  h.timestamp = Timestamp::from_seconds(t);
  h.body_size = body.size();
  h.body_crc = crc64(body);
  return h;
}

Bytes
frame(MessageHeader h, const Bytes & body)
{
  h.body_size = body.size();
  h.body_crc = crc64(body);
  Bytes out = encode_header(h);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Bytes
transform_body(const std::array<float, 12> & m)
{
  Bytes body;
  body.reserve(kTransformBodySize);
  for (float f : m)
    put_u32(body, std::bit_cast<std::uint32_t>(f));
  return body;
}

Bytes
status_body(const StatusMessage & m)
{
  check_name(m.error_name, kStatusErrorNameSize, "status error name");
  Bytes body;
  body.reserve(kStatusFixedSize + m.message.size());
  put_u16(body, m.code);
  put_u64(body, static_cast<std::uint64_t>(m.subcode));
  put_name(body, m.error_name, kStatusErrorNameSize);
  body.insert(body.end(), m.message.begin(), m.message.end());
  return body;
}

} // namespace

std::uint64_t
crc64_update(std::uint64_t crc, std::span<const std::uint8_t> data) noexcept
{
  for (std::uint8_t b : data)
    crc = kTable[((crc >> 56) ^ b) & 0xFF] ^ (crc << 8);
  return crc;
}

std::uint64_t
crc64(std::span<const std::uint8_t> data) noexcept
{
  return crc64_update(0, data);
}

Timestamp
Timestamp::from_seconds(double t)
{
  if (!std::isfinite(t) || t < 0.0 || t >= 4294967296.0)
    throw ProtocolError(ProtocolError::Kind::BadBody, "timestamp out of range");
  const double whole = std::floor(t);
  double       frac = std::round((t - whole) * 4294967296.0);
  auto         sec = static_cast<std::uint64_t>(whole);
  if (frac >= 4294967296.0)
  {
    frac = 0.0;
    ++sec;
  }
  return { static_cast<std::uint32_t>(sec), static_cast<std::uint32_t>(frac) };
}

double
Timestamp::to_seconds() const noexcept
{
  return double(seconds) + double(fraction) / 4294967296.0;
}

Mat3
TransformMessage::rotation() const noexcept
{
  Mat3 r;
  for (int c = 0; c < 3; ++c)
    for (int row = 0; row < 3; ++row)
      r(row, c) = matrix[3 * c + row];
  return r;
}

Vec3
TransformMessage::position() const noexcept
{
  return { matrix[9], matrix[10], matrix[11] };
}

RigidTransform
TransformMessage::to_rigid() const noexcept
{
  return { rotation(), position() };
}

void
TransformMessage::validate(double tol) const
{
  for (float f : matrix)
    if (!std::isfinite(f))
      throw ProtocolError(ProtocolError::Kind::BadBody, "transform has non-finite entries");
  const Mat3   r = rotation();
  const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > tol || r.determinant() < 0.0)
    throw ProtocolError(ProtocolError::Kind::BadBody, "transform rotation is not orthonormal");
}

Bytes
encode_header(const MessageHeader & h)
{
  check_name(h.type_name, kTypeNameSize, "type name");
  check_name(h.device_name, kDeviceNameSize, "device name");
  Bytes out;
  out.reserve(kHeaderSize);
  put_u16(out, h.version);
  put_name(out, h.type_name, kTypeNameSize);
  put_name(out, h.device_name, kDeviceNameSize);
  put_u64(out, h.timestamp.packed());
  put_u64(out, h.body_size);
  put_u64(out, h.body_crc);
  return out;
}

MessageHeader
decode_header(std::span<const std::uint8_t> bytes)
{
  if (bytes.size() < kHeaderSize)
    throw ProtocolError(ProtocolError::Kind::ShortRead,
                        "short read: header needs 58 bytes, got " + std::to_string(bytes.size()));
  const std::uint8_t * p = bytes.data();
  MessageHeader        h;
  h.version = get_u16(p);
  h.type_name = get_name(p + 2, kTypeNameSize);
  h.device_name = get_name(p + 14, kDeviceNameSize);
  h.timestamp = Timestamp::unpack(get_u64(p + 34));
  h.body_size = get_u64(p + 42);
  h.body_crc = get_u64(p + 50);
  return h;
}

void
validate_header(const MessageHeader & h)
{
  if (h.version != kProtocolVersion)
    throw ProtocolError(ProtocolError::Kind::VersionMismatch,
                        "unsupported protocol version " + std::to_string(h.version));
  if (h.body_size > kMaxBodySize)
    throw ProtocolError(ProtocolError::Kind::BodyTooLarge, "body size " + std::to_string(h.body_size) + " exceeds 1 MiB");
}

Bytes
encode_transform(const std::string & device, double timestamp_seconds, const RigidTransform & t)
{
  TransformMessage m;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r)
      m.matrix[3 * c + r] = static_cast<float>(t.rotation(r, c));
  for (int i = 0; i < 3; ++i)
    m.matrix[9 + i] = static_cast<float>(t.translation[i]);
  const Bytes body = transform_body(m.matrix);
  m.header = make_header("TRANSFORM", device, timestamp_seconds, body);
  return frame(m.header, body);
}

Bytes
encode(const TransformMessage & m)
{
  MessageHeader h = m.header;
  h.type_name = "TRANSFORM";
  return frame(h, transform_body(m.matrix));
}

Bytes
encode_status(const std::string & device, double timestamp_seconds, std::uint16_t code, std::int64_t subcode,
              const std::string & error_name, const std::string & message)
{
  StatusMessage m;
  m.code = code;
  m.subcode = subcode;
  m.error_name = error_name;
  m.message = message;
  m.header.device_name = device;
  m.header.timestamp = Timestamp::from_seconds(timestamp_seconds);
  return encode(m);
}

Bytes
encode(const StatusMessage & m)
{
  MessageHeader h = m.header;
  h.type_name = "STATUS";
  return frame(h, status_body(m));
}

Bytes
encode(const UnknownMessage & m)
{
  return frame(m.header, m.body);
}

Message
decode_message(const MessageHeader & header, std::span<const std::uint8_t> body)
{
  validate_header(header);
  if (body.size() != header.body_size)
    throw ProtocolError(ProtocolError::Kind::ShortRead, "short read: body needs " + std::to_string(header.body_size) +
                                                            " bytes, got " + std::to_string(body.size()));
  if (crc64(body) != header.body_crc)
    throw ProtocolError(ProtocolError::Kind::CrcMismatch, "body CRC mismatch");

  if (header.type_name == "TRANSFORM")
  {
    if (body.size() != kTransformBodySize)
      throw ProtocolError(ProtocolError::Kind::BadBody, "TRANSFORM body must be 48 bytes");
    TransformMessage m;
    m.header = header;
    for (std::size_t i = 0; i < 12; ++i)
      m.matrix[i] = std::bit_cast<float>(get_u32(body.data() + 4 * i));
    return m;
  }
  if (header.type_name == "STATUS")
  {
    if (body.size() < kStatusFixedSize)
      throw ProtocolError(ProtocolError::Kind::BadBody, "STATUS body shorter than 30 bytes");
    StatusMessage m;
    m.header = header;
    m.code = get_u16(body.data());
    m.subcode = static_cast<std::int64_t>(get_u64(body.data() + 2));
    m.error_name = get_name(body.data() + 10, kStatusErrorNameSize);
    m.message.assign(reinterpret_cast<const char *>(body.data()) + kStatusFixedSize, body.size() - kStatusFixedSize);
    return m;
  }
  UnknownMessage m;
  m.header = header;
  m.body.assign(body.begin(), body.end());
  return m;
}

Message
decode_message(std::span<const std::uint8_t> bytes)
{
  const MessageHeader h = decode_header(bytes);
  validate_header(h);
  if (bytes.size() - kHeaderSize < h.body_size)
    throw ProtocolError(ProtocolError::Kind::ShortRead, "short read: body needs " + std::to_string(h.body_size) +
                                                            " bytes, got " + std::to_string(bytes.size() - kHeaderSize));
  return decode_message(h, bytes.subspan(kHeaderSize, h.body_size));
}

void
StreamDecoder::feed(std::span<const std::uint8_t> chunk)
{
  if (m_Offset > 0 && m_Offset * 2 > m_Buffer.size())
  {
    m_Buffer.erase(m_Buffer.begin(), m_Buffer.begin() + static_cast<std::ptrdiff_t>(m_Offset));
    m_Offset = 0;
  }
  m_Buffer.insert(m_Buffer.end(), chunk.begin(), chunk.end());
}

std::optional<Message>
StreamDecoder::next()
{
  const std::span<const std::uint8_t> avail(m_Buffer.data() + m_Offset, m_Buffer.size() - m_Offset);
  if (avail.size() < kHeaderSize)
    return std::nullopt;
  const MessageHeader h = decode_header(avail);
  validate_header(h);
  if (avail.size() - kHeaderSize < h.body_size)
    return std::nullopt;
  Message m = decode_message(h, avail.subspan(kHeaderSize, h.body_size));
  m_Offset += kHeaderSize + h.body_size;
  return m;
}

} // namespace petnav::igtl
