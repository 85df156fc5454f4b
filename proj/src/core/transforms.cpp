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
#include "petnav/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace petnav
{

void
RigidTransform::validate(double tol) const
{
  if (!rotation.allFinite() || !translation.allFinite())
    throw TransformError("rigid transform has non-finite entries");
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tol)
    throw TransformError("rigid rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tol)
    throw TransformError("rigid rotation is not proper (det != +1)");
}

RigidTransform
RigidTransform::inverse() const noexcept
{
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Eigen::Matrix4d
RigidTransform::matrix() const noexcept
{
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

std::array<double, 12>
RigidTransform::to_array() const noexcept
{
  std::array<double, 12> a{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      a[3 * r + c] = rotation(r, c);
  for (int r = 0; r < 3; ++r)
    a[9 + r] = translation[r];
  return a;
}

RigidTransform
RigidTransform::from_array(const std::array<double, 12> & a)
{
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      t.rotation(r, c) = a[3 * r + c];
  for (int r = 0; r < 3; ++r)
    t.translation[r] = a[9 + r];
  return t;
}

Vec3
rigid_apply(const RigidTransform & t, const Vec3 & p) noexcept
{
  return t.apply(p);
}

RigidTransform
rigid_compose(const RigidTransform & a, const RigidTransform & b) noexcept
{
  RigidTransform c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

RigidTransform
rigid_invert(const RigidTransform & t) noexcept
{
  return t.inverse();
}

Mat3
euler_zyx(double rx, double ry, double rz)
{
  const Mat3 Rx = Eigen::AngleAxisd(rx, Vec3::UnitX()).toRotationMatrix();
  const Mat3 Ry = Eigen::AngleAxisd(ry, Vec3::UnitY()).toRotationMatrix();
  const Mat3 Rz = Eigen::AngleAxisd(rz, Vec3::UnitZ()).toRotationMatrix();
  return Rz * Ry * Rx;
}

Mat3
axis_angle(const Vec3 & axis, double angle)
{
  const double n = axis.norm();
  if (!(n > 0.0))
    throw TransformError("rotation axis must be nonzero");
  return Eigen::AngleAxisd(angle, axis / n).toRotationMatrix();
}

double
rotation_angle_between(const Mat3 & a, const Mat3 & b)
{
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Mat3
orthonormalize(const Mat3 & m)
{
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3                   d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

std::array<double, 4>
bspline_basis(double u)
{
  if (!(u >= 0.0 && u < 1.0))
    throw TransformError("bspline_basis: u must lie in [0,1)");
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double v = 1.0 - u;
  return { v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0 };
}

BSplineGrid::BSplineGrid(Dims dims, Vec3 origin, Vec3 spacing)
  : BSplineGrid(dims, std::move(origin), std::move(spacing), std::vector<Vec3>(dims[0] * dims[1] * dims[2], Vec3::Zero()))
{}

BSplineGrid::BSplineGrid(Dims dims, Vec3 origin, Vec3 spacing, std::vector<Vec3> displacements)
  : m_Dims(dims)
  , m_Origin(std::move(origin))
  , m_Spacing(std::move(spacing))
  , m_Displacements(std::move(displacements))
{
  for (int d = 0; d < 3; ++d)
  {
    if (m_Dims[d] < 4)
      throw TransformError("B-spline grid needs at least 4 control points per axis");
    if (!(m_Spacing[d] > 0.0))
      throw TransformError("B-spline grid spacing must be positive");
  }
  if (m_Displacements.size() != m_Dims[0] * m_Dims[1] * m_Dims[2])
    throw TransformError("B-spline displacement count does not match grid dims");
}

BSplineGrid
BSplineGrid::covering(const Volume & vol, const Vec3 & grid_spacing)
{
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int c = 0; c < 8; ++c)
  {
    const Vec3 idx((c & 1) ? double(vol.dims()[0] - 1) : 0.0,
                   (c & 2) ? double(vol.dims()[1] - 1) : 0.0,
                   (c & 4) ? double(vol.dims()[2] - 1) : 0.0);
    const Vec3 w = vol.index_to_world(idx);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  Dims dims{};
  for (int d = 0; d < 3; ++d)
  {
    if (!(grid_spacing[d] > 0.0))
      throw TransformError("B-spline grid spacing must be positive");
    dims[d] = static_cast<std::size_t>(std::floor((hi[d] - lo[d]) / grid_spacing[d])) + 4;
  }
  return BSplineGrid(dims, lo - grid_spacing, grid_spacing);
}

bool
BSplineGrid::support(const Vec3 &                           p,
                     std::array<std::size_t, 3> &           first,
                     std::array<std::array<double, 4>, 3> & weights) const noexcept
{
  for (int d = 0; d < 3; ++d)
  {
    const double u = (p[d] - m_Origin[d]) / m_Spacing[d];
    if (!std::isfinite(u))
      return false;
    const double base = std::floor(u);
    if (base < 1.0 || base + 2.0 > static_cast<double>(m_Dims[d] - 1))
      return false;
    first[d] = static_cast<std::size_t>(base) - 1;
    const double t = u - base;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double v = 1.0 - t;
    weights[d] = { v * v * v / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
                   t3 / 6.0 };
  }
  return true;
}

bool
BSplineGrid::in_support(const Vec3 & p) const noexcept
{
  std::array<std::size_t, 3>           first{};
  std::array<std::array<double, 4>, 3> w{};
  return support(p, first, w);
}

double
BSplineGrid::max_displacement_norm() const noexcept
{
  double m = 0.0;
  for (const auto & d : m_Displacements)
    m = std::max(m, d.norm());
  return m;
}

Vec3
bspline_displacement(const BSplineGrid & g, const Vec3 & p)
{
  std::array<std::size_t, 3>           first{};
  std::array<std::array<double, 4>, 3> w{};
  if (!g.support(p, first, w))
    throw TransformError("point lies outside the B-spline grid support");

  const auto & disp = g.displacements();
  Vec3         out = Vec3::Zero();
  for (int c = 0; c < 4; ++c)
  {
    Vec3 plane = Vec3::Zero();
    for (int b = 0; b < 4; ++b)
    {
      Vec3              row = Vec3::Zero();
      const std::size_t base = g.linear_index(first[0], first[1] + b, first[2] + c);
      for (int a = 0; a < 4; ++a)
        row += w[0][a] * disp[base + a];
      plane += w[1][b] * row;
    }
    out += w[2][c] * plane;
  }
  return out;
}

Vec3
deformable_apply(const RigidTransform & rigid, const BSplineGrid & g, const Vec3 & p)
{
  const Vec3 q = rigid.apply(p);
  return q + bspline_displacement(g, q);
}

} // namespace petnav
