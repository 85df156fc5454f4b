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

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "petnav/transforms.hpp"
#include "petnav/volume.hpp"

namespace petnav
{

/**
 * How a sample pair lands in the joint histogram. Bin centers are spread
 * evenly from the volume minimum (bin 0) to its maximum (last bin).
 * Nearest drops each pair into the closest cell; Linear splits it
 * bilinearly across the four surrounding cells (fractional counts).
 */
enum class BinAccumulation
{
  Nearest,
  Linear
};

struct RegistrationConfig
{
  int             bins = 32;
  int             sample_stride = 1; // fixed-image voxels per sample along each axis
  BinAccumulation accumulation = BinAccumulation::Nearest;
  double          min_overlap_fraction = 0.25;

  // rigid stage
  int    pyramid_levels = 3;
  int    max_sweeps_per_level = 12;
  double translation_bracket_mm = 8.0;   // coarsest level search half-width
  double rotation_bracket_rad = 0.08;    // coarsest level search half-width
  double translation_tolerance_mm = 0.02; // finest level
  double rotation_tolerance_rad = 2e-4;   // finest level

  // deformable stage
  double grid_spacing_voxels = 8.0; // control spacing, in fixed-image voxels
  int    bspline_sample_stride = 2;
  int    bspline_iterations = 40;
  double bspline_initial_step_mm = 1.0;
  double bspline_min_step_mm = 0.02;
  double bspline_fd_step_mm = 0.25;

  /** Throws std::invalid_argument on non-positive settings. */
  void validate() const;
};

class RegistrationError : public std::runtime_error
{
public:
  enum class Kind
  {
    EmptyOverlap,
    InsufficientOverlap,
    InvalidConfig
  };

  RegistrationError(Kind kind, const std::string & what)
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

/** bins x bins table; row = fixed bin, column = moving bin. */
struct JointHistogram
{
  int                       bins = 0;
  std::vector<double>       counts;
  std::pair<double, double> fixed_range{ 0.0, 0.0 };
  std::pair<double, double> moving_range{ 0.0, 0.0 };
  double                    n_samples = 0.0;  // accepted sample mass
  std::size_t               n_drawn = 0;      // fixed samples visited
  std::size_t               n_outside = 0;    // mapped outside the moving grid

  JointHistogram() = default;
  JointHistogram(int nbins, std::pair<double, double> frange, std::pair<double, double> mrange);

  double &
  at(int f, int m)
  {
    return counts[static_cast<std::size_t>(f) * bins + m];
  }
  double
  at(int f, int m) const
  {
    return counts[static_cast<std::size_t>(f) * bins + m];
  }

  JointHistogram transposed() const;
  std::vector<double> fixed_marginal() const;
  std::vector<double> moving_marginal() const;
};

/** Maps fixed-world points into moving-world points. */
struct SpatialMapping
{
  RigidTransform                  rigid;
  std::optional<BSplineGrid>      grid;

  /** nullopt when the grid is present and the point falls outside its support. */
  std::optional<Vec3> map(const Vec3 & p) const;
};

JointHistogram joint_histogram(const Volume &             fixed,
                               const Volume &             moving,
                               const SpatialMapping &     t,
                               const RegistrationConfig & cfg);

JointHistogram joint_histogram(const Volume &             fixed,
                               const Volume &             moving,
                               const RigidTransform &     t,
                               const RegistrationConfig & cfg);

/** sum p(f,m) log2(p(f,m) / (p(f) p(m))) over nonzero cells, in bits. */
double mutual_information(const JointHistogram & h);

/** Shannon entropy in bits of a nonnegative weight vector (normalized internally). */
double entropy_bits(const std::vector<double> & weights);

struct RegistrationReport
{
  RigidTransform             final_transform; // fixed world -> moving world
  std::optional<BSplineGrid> grid;
  double                     initial_mi = 0.0;
  double                     final_mi = 0.0;
  int                        iterations = 0;
  bool                       converged = false;
  std::vector<double>        mi_trace; // running best, nondecreasing

  SpatialMapping
  mapping() const
  {
    return { final_transform, grid };
  }
};

/**
 * Rigid MI maximization. Six parameters: ZYX Euler angles about the
 * fixed-image center and a translation, applied on top of init.
 * Coordinate-wise golden-section search on a 2x pyramid, coarse to fine.
 */
RegistrationReport register_rigid_mi(const Volume &             fixed,
                                     const Volume &             moving,
                                     const RigidTransform &     init,
                                     const RegistrationConfig & cfg = {});

/**
 * Free-form refinement on top of a fixed rigid pre-alignment: gradient
 * ascent on control-point displacements with central-difference
 * gradients, starting from a zero grid.
 */
RegistrationReport register_bspline_mi(const Volume &             fixed,
                                       const Volume &             moving,
                                       const RigidTransform &     rigid_init,
                                       const RegistrationConfig & cfg = {});

/** 2x2x2 block-average with doubled spacing; node-centered origin shifts half a voxel. */
Volume downsample2(const Volume & vol);

/** Moving resampled onto the fixed grid; voxels mapping outside get outside_value. */
Volume resample_to(const Volume & fixed, const Volume & moving, const SpatialMapping & t, double outside_value);

/** Mean squared difference over voxels where both images are defined. */
double mean_squared_difference(const Volume & fixed, const Volume & moving, const SpatialMapping & t);

} // namespace petnav
