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
#include <stdexcept>
#include <vector>

#include "petnav/volume.hpp"

namespace petnav
{

class TransformError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/** p -> rotation * p + translation. Rotation is proper orthonormal. */
struct RigidTransform
{
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform
  identity()
  {
    return {};
  }

  /** Throws unless R^T R = I and det R = +1 to tol. */
  void validate(double tol = 1e-9) const;

  Vec3
  apply(const Vec3 & p) const noexcept
  {
    return rotation * p + translation;
  }

  RigidTransform inverse() const noexcept;

  /** Homogeneous 4x4 form, handy for printing. */
  Eigen::Matrix4d matrix() const noexcept;

  /** Row-major rotation followed by translation: 12 numbers. */
  std::array<double, 12> to_array() const noexcept;
  static RigidTransform  from_array(const std::array<double, 12> & a);
};

Vec3           rigid_apply(const RigidTransform & t, const Vec3 & p) noexcept;
RigidTransform rigid_compose(const RigidTransform & a, const RigidTransform & b) noexcept; // a after b
RigidTransform rigid_invert(const RigidTransform & t) noexcept;

/** R = Rz(rz) * Ry(ry) * Rx(rx), angles in radians. */
Mat3 euler_zyx(double rx, double ry, double rz);

/** Rotation about a unit axis by angle (radians). */
Mat3 axis_angle(const Vec3 & axis, double angle);

/** Angle of the relative rotation a^T b, radians. */
double rotation_angle_between(const Mat3 & a, const Mat3 & b);

/** Nearest proper rotation in the Frobenius sense. */
Mat3 orthonormalize(const Mat3 & m);

/** Cubic B-spline blending weights B0..B3 for u in [0,1). */
std::array<double, 4> bspline_basis(double u);

/**
 * Axis-aligned lattice of control-point displacements for a cubic
 * free-form deformation. Control point (i,j,k) sits at
 * grid_origin + grid_spacing .* (i,j,k); displacements are stored x
 * fastest.
 */
class BSplineGrid
{
public:
  using Dims = std::array<std::size_t, 3>;

  BSplineGrid(Dims dims, Vec3 origin, Vec3 spacing);
  BSplineGrid(Dims dims, Vec3 origin, Vec3 spacing, std::vector<Vec3> displacements);

  /**
   * Grid over the world bounding box of a volume with one control point
   * of margin beyond each face, so the 4x4x4 support exists everywhere
   * inside the volume.
   */
  static BSplineGrid covering(const Volume & vol, const Vec3 & grid_spacing);

  const Dims &
  dims() const noexcept
  {
    return m_Dims;
  }
  const Vec3 &
  origin() const noexcept
  {
    return m_Origin;
  }
  const Vec3 &
  spacing() const noexcept
  {
    return m_Spacing;
  }
  const std::vector<Vec3> &
  displacements() const noexcept
  {
    return m_Displacements;
  }
  std::vector<Vec3> &
  displacements() noexcept
  {
    return m_Displacements;
  }

  std::size_t
  control_count() const noexcept
  {
    return m_Displacements.size();
  }

  std::size_t
  linear_index(std::size_t i, std::size_t j, std::size_t k) const noexcept
  {
    return i + m_Dims[0] * (j + m_Dims[1] * k);
  }

  Vec3
  control_point_position(std::size_t i, std::size_t j, std::size_t k) const noexcept
  {
    return m_Origin + m_Spacing.cwiseProduct(Vec3(double(i), double(j), double(k)));
  }

  /** True when the full 4x4x4 neighbourhood of p exists. */
  bool in_support(const Vec3 & p) const noexcept;

  /**
   * First control index of the support and the cubic weights per axis;
   * false outside the support.
   */
  bool support(const Vec3 & p, std::array<std::size_t, 3> & first, std::array<std::array<double, 4>, 3> & weights)
    const noexcept;

  double max_displacement_norm() const noexcept;

private:
  Dims              m_Dims;
  Vec3              m_Origin;
  Vec3              m_Spacing;
  std::vector<Vec3> m_Displacements;
};

/** Tensor-product sum over the 64 supporting control points; throws outside support. */
Vec3 bspline_displacement(const BSplineGrid & g, const Vec3 & p);

/** rigid first, then the displacement field evaluated at the rigidly mapped point. */
Vec3 deformable_apply(const RigidTransform & rigid, const BSplineGrid & g, const Vec3 & p);

} // namespace petnav
