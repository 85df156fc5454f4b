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
#include "petnav/nrrd_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace petnav
{

namespace
{

static_assert(std::endian::native == std::endian::little, "payload codec assumes a little-endian host");

std::string
trim(const std::string & s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string
lower(std::string s)
{
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string
format_double(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double
parse_double(const std::string & tok, const char * field)
{
  char *       end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
    throw NrrdError(NrrdError::Kind::Parse, std::string("bad number '") + tok + "' in field '" + field + "'");
  return v;
}

std::vector<double>
parse_numbers(const std::string & value, const char * field)
{
  std::istringstream  in(value);
  std::vector<double> out;
  std::string         tok;
  while (in >> tok)
    out.push_back(parse_double(tok, field));
  return out;
}

// "(a,b,c) (d,e,f) (g,h,i)" -> 3 vectors; "none" entries are rejected.
std::vector<Vec3>
parse_vectors(const std::string & value, const char * field)
{
  std::vector<Vec3> out;
  std::size_t       pos = 0;
  while (true)
  {
    const auto open = value.find('(', pos);
    if (open == std::string::npos)
      break;
    const auto close = value.find(')', open);
    if (close == std::string::npos)
      throw NrrdError(NrrdError::Kind::Parse, std::string("unbalanced parentheses in '") + field + "'");
    std::string inner = value.substr(open + 1, close - open - 1);
    std::replace(inner.begin(), inner.end(), ',', ' ');
    const auto nums = parse_numbers(inner, field);
    if (nums.size() != 3)
      throw NrrdError(NrrdError::Kind::Parse, std::string("expected 3 components in '") + field + "'");
    out.emplace_back(nums[0], nums[1], nums[2]);
    pos = close + 1;
  }
  return out;
}

std::string
format_vector(const Vec3 & v)
{
  return "(" + format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]) + ")";
}

ScalarType
parse_type(const std::string & t)
{
  const std::string s = lower(t);
  if (s == "short" || s == "short int" || s == "signed short" || s == "signed short int" || s == "int16" ||
      s == "int16_t")
    return ScalarType::Int16;
  if (s == "float")
    return ScalarType::Float32;
  throw NrrdError(NrrdError::Kind::UnsupportedEncoding, "unsupported scalar type '" + t + "'");
}

} // namespace

NrrdHeader
parse_nrrd_header(const std::string & bytes)
{
  std::size_t pos = 0;
  auto        next_line = [&](std::string & line) -> bool {
    if (pos >= bytes.size())
      return false;
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos)
    {
      line = bytes.substr(pos);
      pos = bytes.size();
    }
    else
    {
      line = bytes.substr(pos, nl - pos);
      pos = nl + 1;
    }
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    return true;
  };

  std::string line;
  if (!next_line(line) || line.rfind("NRRD000", 0) != 0)
    throw NrrdError(NrrdError::Kind::Parse, "missing NRRD magic");

  std::map<std::string, std::string> fields;
  std::map<std::string, std::string> keyvalues;
  bool                               sawBlank = false;
  while (next_line(line))
  {
    if (line.empty())
    {
      sawBlank = true;
      break;
    }
    if (line[0] == '#')
      continue;
    const auto kv = line.find(":=");
    if (kv != std::string::npos)
    {
      keyvalues[line.substr(0, kv)] = line.substr(kv + 2);
      continue;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos)
      throw NrrdError(NrrdError::Kind::Parse, "malformed header line '" + line + "'");
    fields[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 2));
  }
  if (!sawBlank)
    throw NrrdError(NrrdError::Kind::Parse, "header not terminated by a blank line");

  auto require = [&](const char * key) -> const std::string & {
    const auto it = fields.find(key);
    if (it == fields.end())
      throw NrrdError(NrrdError::Kind::Parse, std::string("missing required field '") + key + "'");
    return it->second;
  };

  if (fields.count("data file"))
    throw NrrdError(NrrdError::Kind::UnsupportedEncoding, "detached data files are not supported");

  const ScalarType type = parse_type(require("type"));
  if (trim(require("dimension")) != "3")
    throw NrrdError(NrrdError::Kind::Parse, "only 3-dimensional volumes are supported");

  const auto sizes = parse_numbers(require("sizes"), "sizes");
  if (sizes.size() != 3)
    throw NrrdError(NrrdError::Kind::Parse, "sizes must list 3 values");
  Volume::Dims dims{};
  for (int d = 0; d < 3; ++d)
  {
    if (!(sizes[d] >= 1.0) || sizes[d] != std::floor(sizes[d]))
      throw NrrdError(NrrdError::Kind::Parse, "sizes must be positive integers");
    dims[d] = static_cast<std::size_t>(sizes[d]);
  }

  const std::string encoding = lower(require("encoding"));
  if (encoding != "raw")
    throw NrrdError(NrrdError::Kind::UnsupportedEncoding, "unsupported encoding '" + encoding + "'");
  if (type == ScalarType::Int16 || type == ScalarType::Float32)
  {
    const auto endianIt = fields.find("endian");
    if (endianIt != fields.end() && lower(endianIt->second) != "little")
      throw NrrdError(NrrdError::Kind::UnsupportedEncoding, "only little-endian payloads are supported");
  }

  Vec3 spacing = Vec3::Ones();
  Mat3 direction = Mat3::Identity();
  if (fields.count("space directions"))
  {
    const auto cols = parse_vectors(fields["space directions"], "space directions");
    if (cols.size() != 3)
      throw NrrdError(NrrdError::Kind::Parse, "space directions must list 3 vectors");
    for (int d = 0; d < 3; ++d)
    {
      spacing[d] = cols[d].norm();
      if (!(spacing[d] > 0.0))
        throw NrrdError(NrrdError::Kind::Parse, "zero-length space direction");
      direction.col(d) = cols[d] / spacing[d];
    }
    // Exact copies written by save_volume; used when consistent with the columns.
    const auto sIt = keyvalues.find("petnav_spacing");
    const auto dIt = keyvalues.find("petnav_direction");
    if (sIt != keyvalues.end() && dIt != keyvalues.end())
    {
      const auto s = parse_numbers(sIt->second, "petnav_spacing");
      const auto m = parse_numbers(dIt->second, "petnav_direction");
      if (s.size() == 3 && m.size() == 9)
      {
        Vec3 exactSpacing(s[0], s[1], s[2]);
        Mat3 exactDirection;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            exactDirection(r, c) = m[3 * r + c];
        const Mat3 exactCols = exactDirection * exactSpacing.asDiagonal();
        Mat3       parsedCols;
        for (int d = 0; d < 3; ++d)
          parsedCols.col(d) = cols[d];
        if ((exactCols - parsedCols).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, parsedCols.cwiseAbs().maxCoeff()))
        {
          spacing = exactSpacing;
          direction = exactDirection;
        }
      }
    }
  }
  else if (fields.count("spacings"))
  {
    const auto s = parse_numbers(fields["spacings"], "spacings");
    if (s.size() != 3)
      throw NrrdError(NrrdError::Kind::Parse, "spacings must list 3 values");
    spacing = Vec3(s[0], s[1], s[2]);
  }

  Vec3 origin = Vec3::Zero();
  if (fields.count("space origin"))
  {
    const auto o = parse_vectors(fields["space origin"], "space origin");
    if (o.size() != 1)
      throw NrrdError(NrrdError::Kind::Parse, "space origin must be a single vector");
    origin = o[0];
  }

  Modality modality = Modality::CT;
  if (const auto it = keyvalues.find("modality"); it != keyvalues.end())
  {
    try
    {
      modality = modality_from_string(trim(it->second));
    }
    catch (const VolumeError & e)
    {
      throw NrrdError(NrrdError::Kind::Parse, e.what());
    }
  }

  NrrdHeader header;
  header.dims = dims;
  header.spacing = spacing;
  header.origin = origin;
  header.direction = direction;
  header.scalar_type = type;
  header.modality = modality;
  header.payload_offset = pos;
  return header;
}

Volume
parse_nrrd(const std::string & bytes)
{
  const NrrdHeader  h = parse_nrrd_header(bytes);
  const std::size_t count = h.dims[0] * h.dims[1] * h.dims[2];
  const std::size_t elemSize = h.scalar_type == ScalarType::Int16 ? 2 : 4;
  const std::size_t payload = bytes.size() - h.payload_offset;
  if (payload != count * elemSize)
  {
    std::ostringstream msg;
    msg << "payload holds " << payload << " bytes but header declares " << count << " voxels of " << elemSize
        << " bytes";
    throw NrrdError(NrrdError::Kind::DimensionMismatch, msg.str());
  }

  std::vector<double> data(count);
  const char *        src = bytes.data() + h.payload_offset;
  for (std::size_t n = 0; n < count; ++n)
  {
    if (h.scalar_type == ScalarType::Int16)
    {
      std::int16_t v;
      std::memcpy(&v, src + 2 * n, 2);
      data[n] = v;
    }
    else
    {
      float v;
      std::memcpy(&v, src + 4 * n, 4);
      data[n] = v;
    }
  }

  try
  {
    return Volume(h.dims, h.spacing, h.origin, h.direction, std::move(data), h.modality, h.scalar_type);
  }
  catch (const VolumeError & e)
  {
    throw NrrdError(NrrdError::Kind::Parse, e.what());
  }
}

NrrdHeader
read_nrrd_header(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw NrrdError(NrrdError::Kind::Io, "cannot open '" + path.string() + "'");
  std::string head;
  std::string line;
  while (std::getline(in, line))
  {
    head += line;
    head += '\n';
    if (line.empty() || line == "\r")
      break;
  }
  return parse_nrrd_header(head);
}

Volume
load_volume(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw NrrdError(NrrdError::Kind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_nrrd(ss.str());
}

std::string
serialize_nrrd(const Volume & vol)
{
  std::ostringstream hdr;
  hdr << "NRRD0004\n";
  hdr << "# written by petnav\n";
  hdr << "type: " << (vol.scalar_type() == ScalarType::Int16 ? "short" : "float") << "\n";
  hdr << "dimension: 3\n";
  hdr << "space: 3D-right-handed\n";
  hdr << "sizes: " << vol.dims()[0] << " " << vol.dims()[1] << " " << vol.dims()[2] << "\n";
  const Mat3 cols = vol.direction() * vol.spacing().asDiagonal();
  hdr << "space directions: " << format_vector(cols.col(0)) << " " << format_vector(cols.col(1)) << " "
      << format_vector(cols.col(2)) << "\n";
  hdr << "kinds: domain domain domain\n";
  hdr << "endian: little\n";
  hdr << "encoding: raw\n";
  hdr << "space origin: " << format_vector(vol.origin()) << "\n";
  hdr << "modality:=" << to_string(vol.modality()) << "\n";
  hdr << "petnav_spacing:=" << format_double(vol.spacing()[0]) << " " << format_double(vol.spacing()[1]) << " "
      << format_double(vol.spacing()[2]) << "\n";
  hdr << "petnav_direction:=";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      hdr << (r + c ? " " : "") << format_double(vol.direction()(r, c));
  hdr << "\n\n";

  std::string out = hdr.str();
  const auto  headerSize = out.size();
  const auto & data = vol.data();
  if (vol.scalar_type() == ScalarType::Int16)
  {
    out.resize(headerSize + 2 * data.size());
    for (std::size_t n = 0; n < data.size(); ++n)
    {
      const double       clamped = std::clamp(std::round(data[n]), -32768.0, 32767.0);
      const std::int16_t v = static_cast<std::int16_t>(clamped);
      std::memcpy(out.data() + headerSize + 2 * n, &v, 2);
    }
  }
  else
  {
    out.resize(headerSize + 4 * data.size());
    for (std::size_t n = 0; n < data.size(); ++n)
    {
      const float v = static_cast<float>(data[n]);
      std::memcpy(out.data() + headerSize + 4 * n, &v, 4);
    }
  }
  return out;
}

void
save_volume(const Volume & vol, const std::filesystem::path & path)
{
  const std::string bytes = serialize_nrrd(vol);
  std::ofstream     out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw NrrdError(NrrdError::Kind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw NrrdError(NrrdError::Kind::Io, "write failed for '" + path.string() + "'");
}

} // namespace petnav
