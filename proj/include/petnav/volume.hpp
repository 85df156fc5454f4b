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

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace petnav
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Modality
{
  CT,
  PET,
  InterventionalCT
};

/** On-disk voxel type. Values are always held as double in memory. */
enum class ScalarType
{
  Int16,
  Float32
};

const char * to_string(Modality m);
Modality     modality_from_string(const std::string & s);

class VolumeError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/**
 * Regular 3D scalar grid.
 *
 * Node-centered: origin is the world position of the center of voxel
 * (0,0,0). A voxel index i maps to origin + direction * (spacing .* i).
 * Data is stored x fastest, then y, then z. Immutable after construction.
 */
class Volume
{
public:
  using Dims = std::array<std::size_t, 3>;

  Volume(Dims                dims,
         Vec3                spacing,
         Vec3                origin,
         Mat3                direction,
         std::vector<double> data,
         Modality            modality = Modality::CT,
         ScalarType          scalar_type = ScalarType::Float32);

  const Dims &
  dims() const noexcept
  {
    return m_Dims;
  }
  const Vec3 &
  spacing() const noexcept
  {
    return m_Spacing;
  }
  const Vec3 &
  origin() const noexcept
  {
    return m_Origin;
  }
  const Mat3 &
  direction() const noexcept
  {
    return m_Direction;
  }
  const std::vector<double> &
  data() const noexcept
  {
    return m_Data;
  }
  Modality
  modality() const noexcept
  {
    return m_Modality;
  }
  ScalarType
  scalar_type() const noexcept
  {
    return m_ScalarType;
  }

  std::size_t
  voxel_count() const noexcept
  {
    return m_Data.size();
  }

  std::size_t
  linear_index(std::size_t i, std::size_t j, std::size_t k) const noexcept
  {
    return i + m_Dims[0] * (j + m_Dims[1] * k);
  }

  double
  at(std::size_t i, std::size_t j, std::size_t k) const noexcept
  {
    return m_Data[linear_index(i, j, k)];
  }

  Vec3 index_to_world(const Vec3 & index) const noexcept;
  Vec3 world_to_index(const Vec3 & p) const noexcept;

  /** Trilinear interpolation; nullopt when p falls outside the voxel-center hull. */
  std::optional<double> sample_trilinear(const Vec3 & p) const noexcept;

  /** Same as sample_trilinear, but takes a continuous index directly. */
  std::optional<double> sample_index(const Vec3 & index) const noexcept;

  bool contains_index(const Vec3 & index) const noexcept;

  /** Min/max over all voxels. */
  std::pair<double, double> intensity_range() const noexcept;

  /** Same geometry, new modality tag. */
  Volume with_modality(Modality m) const;

private:
  Dims                m_Dims;
  Vec3                m_Spacing;
  Vec3                m_Origin;
  Mat3                m_Direction;
  Mat3                m_IndexToWorld;
  Mat3                m_WorldToIndex;
  std::vector<double> m_Data;
  Modality            m_Modality;
  ScalarType          m_ScalarType;
};

struct WindowLevel
{
  double window = 400.0;
  double level = 40.0;

  WindowLevel() = default;
  WindowLevel(double w, double l);
};

enum class SliceAxis
{
  Axial,    // fixed k
  Coronal,  // fixed j
  Sagittal  // fixed i
};

SliceAxis slice_axis_from_string(const std::string & s);

/** Row-major 2D image of reals. */
struct Image2D
{
  std::size_t         width = 0;
  std::size_t         height = 0;
  std::vector<double> pixels;

  double
  at(std::size_t x, std::size_t y) const
  {
    return pixels[y * width + x];
  }
};

struct RgbImage
{
  std::size_t                        width = 0;
  std::size_t                        height = 0;
  std::vector<std::array<double, 3>> pixels;
};

enum class Colormap
{
  Gray,
  Hot
};

std::array<double, 3> apply_colormap(Colormap map, double v) noexcept;

/** Raw voxel values of one slice, no normalization. */
Image2D raw_slice(const Volume & vol, SliceAxis axis, std::size_t index);

/** World positions of the voxel centers of one slice, in the same order as raw_slice. */
std::vector<Vec3> slice_world_points(const Volume & vol, SliceAxis axis, std::size_t index);

/** Windowed slice; every pixel lies in [0,1]. */
Image2D extract_slice(const Volume & vol, SliceAxis axis, std::size_t index, const WindowLevel & wl);

Image2D apply_window(const Image2D & raw, const WindowLevel & wl);

/** out = (1 - opacity) * gray(base) + opacity * overlay_map(overlay) */
RgbImage blend_overlay(const Image2D & base, const Image2D & overlay, double opacity, Colormap overlay_map = Colormap::Hot);

} // namespace petnav
