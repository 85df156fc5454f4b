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
#include "petnav/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace petnav
{

const char *
to_string(Modality m)
{
  switch (m)
  {
    case Modality::CT:
      return "CT";
    case Modality::PET:
      return "PET";
    case Modality::InterventionalCT:
      return "INTERVENTIONAL_CT";
  }
  return "CT";
}

Modality
modality_from_string(const std::string & s)
{
  if (s == "CT")
    return Modality::CT;
  if (s == "PET")
    return Modality::PET;
  if (s == "INTERVENTIONAL_CT")
    return Modality::InterventionalCT;
  throw VolumeError("unknown modality '" + s + "'");
}

Volume::Volume(Dims                dims,
               Vec3                spacing,
               Vec3                origin,
               Mat3                direction,
               std::vector<double> data,
               Modality            modality,
               ScalarType          scalar_type)
  : m_Dims(dims)
  , m_Spacing(std::move(spacing))
  , m_Origin(std::move(origin))
  , m_Direction(std::move(direction))
  , m_Data(std::move(data))
  , m_Modality(modality)
  , m_ScalarType(scalar_type)
{
  for (std::size_t d = 0; d < 3; ++d)
  {
    if (m_Dims[d] == 0)
      throw VolumeError("volume dimensions must be positive");
    if (!(m_Spacing[d] > 0.0) || !std::isfinite(m_Spacing[d]))
      throw VolumeError("volume spacing must be positive");
  }
  if (!m_Origin.allFinite())
    throw VolumeError("volume origin must be finite");
  if (m_Data.size() != m_Dims[0] * m_Dims[1] * m_Dims[2])
  {
    std::ostringstream msg;
    msg << "volume data length " << m_Data.size() << " does not match dims " << m_Dims[0] << "x" << m_Dims[1] << "x"
        << m_Dims[2];
    throw VolumeError(msg.str());
  }
  const double orthoError = (m_Direction.transpose() * m_Direction - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(orthoError <= 1e-9))
    throw VolumeError("volume direction matrix is not orthonormal");

  m_IndexToWorld = m_Direction * m_Spacing.asDiagonal();
  m_WorldToIndex = m_Spacing.cwiseInverse().asDiagonal() * m_Direction.transpose();
}

Vec3
Volume::index_to_world(const Vec3 & index) const noexcept
{
  return m_Origin + m_IndexToWorld * index;
}

Vec3
Volume::world_to_index(const Vec3 & p) const noexcept
{
  return m_WorldToIndex * (p - m_Origin);
}

bool
Volume::contains_index(const Vec3 & index) const noexcept
{
  for (int d = 0; d < 3; ++d)
  {
    if (!(index[d] >= 0.0) || !(index[d] <= static_cast<double>(m_Dims[d] - 1)))
      return false;
  }
  return true;
}

std::optional<double>
Volume::sample_index(const Vec3 & index) const noexcept
{
  if (!contains_index(index))
    return std::nullopt;

  std::array<std::size_t, 3> lo{};
  std::array<double, 3>      frac{};
  for (int d = 0; d < 3; ++d)
  {
    const double fl = std::floor(index[d]);
    lo[d] = static_cast<std::size_t>(fl);
    frac[d] = index[d] - fl;
    // Upper face: fold onto the last cell so the +1 neighbour stays in range.
    if (lo[d] + 1 >= m_Dims[d])
    {
      if (m_Dims[d] == 1)
      {
        frac[d] = 0.0;
        lo[d] = 0;
      }
      else
      {
        lo[d] = m_Dims[d] - 2;
        frac[d] = 1.0;
      }
    }
  }

  const std::size_t sx = 1;
  const std::size_t sy = m_Dims[0];
  const std::size_t sz = m_Dims[0] * m_Dims[1];
  const std::size_t dx = m_Dims[0] > 1 ? sx : 0;
  const std::size_t dy = m_Dims[1] > 1 ? sy : 0;
  const std::size_t dz = m_Dims[2] > 1 ? sz : 0;
  const double *    p = m_Data.data() + linear_index(lo[0], lo[1], lo[2]);

  const double fx = frac[0], fy = frac[1], fz = frac[2];
  const double c00 = p[0] + fx * (p[dx] - p[0]);
  const double c10 = p[dy] + fx * (p[dy + dx] - p[dy]);
  const double c01 = p[dz] + fx * (p[dz + dx] - p[dz]);
  const double c11 = p[dz + dy] + fx * (p[dz + dy + dx] - p[dz + dy]);
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return c0 + fz * (c1 - c0);
}

std::optional<double>
Volume::sample_trilinear(const Vec3 & p) const noexcept
{
  Vec3 index = world_to_index(p);
  // Snap round-off so voxel-center queries hit stored values exactly.
  for (int d = 0; d < 3; ++d)
  {
    const double r = std::round(index[d]);
    if (std::abs(index[d] - r) < 1e-9)
      index[d] = r;
  }
  return sample_index(index);
}

std::pair<double, double>
Volume::intensity_range() const noexcept
{
  const auto [lo, hi] = std::minmax_element(m_Data.begin(), m_Data.end());
  return { *lo, *hi };
}

Volume
Volume::with_modality(Modality m) const
{
  return Volume(m_Dims, m_Spacing, m_Origin, m_Direction, m_Data, m, m_ScalarType);
}

WindowLevel::WindowLevel(double w, double l)
  : window(w)
  , level(l)
{
  if (!(w > 0.0) || !std::isfinite(w) || !std::isfinite(l))
    throw VolumeError("window must be positive");
}

SliceAxis
slice_axis_from_string(const std::string & s)
{
  if (s == "axial")
    return SliceAxis::Axial;
  if (s == "coronal")
    return SliceAxis::Coronal;
  if (s == "sagittal")
    return SliceAxis::Sagittal;
  throw VolumeError("unknown slice axis '" + s + "'");
}

namespace
{

// (fixed axis, horizontal axis, vertical axis) in index space.
std::array<int, 3>
slice_layout(SliceAxis axis)
{
  switch (axis)
  {
    case SliceAxis::Axial:
      return { 2, 0, 1 };
    case SliceAxis::Coronal:
      return { 1, 0, 2 };
    case SliceAxis::Sagittal:
      return { 0, 1, 2 };
  }
  return { 2, 0, 1 };
}

void
check_slice_index(const Volume & vol, SliceAxis axis, std::size_t index)
{
  const int fixed = slice_layout(axis)[0];
  if (index >= vol.dims()[fixed])
  {
    std::ostringstream msg;
    msg << "slice index " << index << " out of range [0," << vol.dims()[fixed] << ")";
    throw VolumeError(msg.str());
  }
}

} // namespace

Image2D
raw_slice(const Volume & vol, SliceAxis axis, std::size_t index)
{
  check_slice_index(vol, axis, index);
  const auto [fixed, hx, vy] = slice_layout(axis);
  Image2D out;
  out.width = vol.dims()[hx];
  out.height = vol.dims()[vy];
  out.pixels.resize(out.width * out.height);
  std::array<std::size_t, 3> ijk{};
  ijk[fixed] = index;
  for (std::size_t y = 0; y < out.height; ++y)
  {
    ijk[vy] = y;
    for (std::size_t x = 0; x < out.width; ++x)
    {
      ijk[hx] = x;
      out.pixels[y * out.width + x] = vol.at(ijk[0], ijk[1], ijk[2]);
    }
  }
  return out;
}

std::vector<Vec3>
slice_world_points(const Volume & vol, SliceAxis axis, std::size_t index)
{
  check_slice_index(vol, axis, index);
  const auto [fixed, hx, vy] = slice_layout(axis);
  std::vector<Vec3> pts;
  pts.reserve(vol.dims()[hx] * vol.dims()[vy]);
  Vec3 ijk = Vec3::Zero();
  ijk[fixed] = static_cast<double>(index);
  for (std::size_t y = 0; y < vol.dims()[vy]; ++y)
  {
    ijk[vy] = static_cast<double>(y);
    for (std::size_t x = 0; x < vol.dims()[hx]; ++x)
    {
      ijk[hx] = static_cast<double>(x);
      pts.push_back(vol.index_to_world(ijk));
    }
  }
  return pts;
}

Image2D
apply_window(const Image2D & raw, const WindowLevel & wl)
{
  Image2D out = raw;
  const double lo = wl.level - wl.window / 2.0;
  for (double & v : out.pixels)
    v = std::clamp((v - lo) / wl.window, 0.0, 1.0);
  return out;
}

Image2D
extract_slice(const Volume & vol, SliceAxis axis, std::size_t index, const WindowLevel & wl)
{
  return apply_window(raw_slice(vol, axis, index), wl);
}

std::array<double, 3>
apply_colormap(Colormap map, double v) noexcept
{
  v = std::clamp(v, 0.0, 1.0);
  switch (map)
  {
    case Colormap::Gray:
      return { v, v, v };
    case Colormap::Hot:
      return { std::clamp(3.0 * v, 0.0, 1.0), std::clamp(3.0 * v - 1.0, 0.0, 1.0), std::clamp(3.0 * v - 2.0, 0.0, 1.0) };
  }
  return { v, v, v };
}

RgbImage
blend_overlay(const Image2D & base, const Image2D & overlay, double opacity, Colormap overlay_map)
{
  if (base.width != overlay.width || base.height != overlay.height)
    throw VolumeError("blend_overlay: base and overlay shapes differ");
  if (!(opacity >= 0.0 && opacity <= 1.0))
    throw VolumeError("blend_overlay: opacity must lie in [0,1]");

  RgbImage out;
  out.width = base.width;
  out.height = base.height;
  out.pixels.resize(base.pixels.size());
  for (std::size_t n = 0; n < base.pixels.size(); ++n)
  {
    const auto g = apply_colormap(Colormap::Gray, base.pixels[n]);
    const auto o = apply_colormap(overlay_map, overlay.pixels[n]);
    for (int c = 0; c < 3; ++c)
      out.pixels[n][c] = (1.0 - opacity) * g[c] + opacity * o[c];
  }
  return out;
}

} // namespace petnav
