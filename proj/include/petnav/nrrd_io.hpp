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

#include <filesystem>
#include <string>

#include "petnav/volume.hpp"

namespace petnav
{

/**
 * Errors raised by the NRRD reader/writer. The kind lets callers tell a
 * malformed header apart from a payload that does not match it.
 */
class NrrdError : public VolumeError
{
public:
  enum class Kind
  {
    Io,
    Parse,
    DimensionMismatch,
    UnsupportedEncoding
  };

  NrrdError(Kind kind, const std::string & what)
    : VolumeError(what)
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

/** Geometry and layout parsed from an NRRD header, before the payload. */
struct NrrdHeader
{
  Volume::Dims dims{};
  Vec3         spacing = Vec3::Ones();
  Vec3         origin = Vec3::Zero();
  Mat3         direction = Mat3::Identity();
  ScalarType   scalar_type = ScalarType::Float32;
  Modality     modality = Modality::CT;
  std::size_t  payload_offset = 0;
};

NrrdHeader parse_nrrd_header(const std::string & bytes);

/** Reads only the header of a file (for quick metadata queries). */
NrrdHeader read_nrrd_header(const std::filesystem::path & path);

/**
 * Reads the NRRD subset written by save_volume: NRRD0004 magic, 3D,
 * type short/int16 or float, raw little-endian payload, attached data.
 * "space directions" carries direction * diag(spacing); missing
 * directions default to identity with unit spacing unless "spacings" is
 * given. The optional key/value "modality:=" tag restores the modality.
 */
Volume load_volume(const std::filesystem::path & path);

/** Parses an in-memory NRRD document. */
Volume parse_nrrd(const std::string & bytes);

void        save_volume(const Volume & vol, const std::filesystem::path & path);
std::string serialize_nrrd(const Volume & vol);

} // namespace petnav
