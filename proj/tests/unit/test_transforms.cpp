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

#include <doctest.h>

#include <cmath>
#include <random>

#include "petnav/transforms.hpp"
#include "petnav/volume.hpp"

using namespace petnav;

namespace
{

RigidTransform
random_rigid(std::mt19937_64 & rng)
{
  std::normal_distribution<double>       n(0.0, 1.0);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  return { axis_angle(Vec3(n(rng), n(rng), n(rng)), ang(rng)), 50.0 * Vec3(n(rng), n(rng), n(rng)) };
}

// Cubic B-spline pieces written out independently of the library.
double
b0(double u)
{
  return (1 - u) * (1 - u) * (1 - u) / 6.0;
}
double
b1(double u)
{
  return (3 * u * u * u - 6 * u * u + 4) / 6.0;
}
double
b2(double u)
{
  return (-3 * u * u * u + 3 * u * u + 3 * u + 1) / 6.0;
}
double
b3(double u)
{
  return u * u * u / 6.0;
}

Vec3
brute_displacement(const BSplineGrid & g, const Vec3 & p)
{
  const Vec3 t = (p - g.origin()).cwiseQuotient(g.spacing());
  Vec3       sum = Vec3::Zero();
  int        base[3];
  double     u[3];
  for (int a = 0; a < 3; ++a)
  {
    base[a] = static_cast<int>(std::floor(t[a])) - 1;
    u[a] = t[a] - std::floor(t[a]);
  }
  auto w = [](int m, double x) { return m == 0 ? b0(x) : m == 1 ? b1(x) : m == 2 ? b2(x) : b3(x); };
  for (int l = 0; l < 4; ++l)
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n)
        sum += w(l, u[0]) * w(m, u[1]) * w(n, u[2]) *
               g.displacements()[g.linear_index(base[0] + l, base[1] + m, base[2] + n)];
  return sum;
}

BSplineGrid
random_grid(std::mt19937_64 & rng, double scale = 3.0)
{
  BSplineGrid                      g({ 7, 6, 8 }, Vec3(-10, -8, -12), Vec3(5, 6, 4.5));
  std::normal_distribution<double> n(0.0, scale);
  for (auto & d : g.displacements())
    d = Vec3(n(rng), n(rng), n(rng));
  return g;
}

} // namespace

TEST_CASE("rigid apply")
{
  const Vec3 p(3, -2, 7);
  CHECK(RigidTransform::identity().apply(p) == p);
  CHECK(rigid_apply({ Mat3::Identity(), Vec3(10, -5, 2) }, Vec3::Zero()) == Vec3(10, -5, 2));
  const RigidTransform rz{ axis_angle(Vec3::UnitZ(), M_PI / 2), Vec3::Zero() };
  CHECK((rz.apply(Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("rigid group laws")
{
  std::mt19937_64                  rng(21);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int t = 0; t < 100; ++t)
  {
    const RigidTransform a = random_rigid(rng), b = random_rigid(rng), c = random_rigid(rng);
    const RigidTransform ab = rigid_compose(a, b);
    for (int k = 0; k < 100; ++k)
    {
      const Vec3 p(n(rng), n(rng), n(rng));
      CHECK((ab.apply(p) - a.apply(b.apply(p))).norm() < 1e-9);
    }
    const RigidTransform l = rigid_compose(rigid_compose(a, b), c), r = rigid_compose(a, rigid_compose(b, c));
    CHECK((l.rotation - r.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((l.translation - r.translation).cwiseAbs().maxCoeff() < 1e-9);
    for (const RigidTransform & id : { rigid_compose(a, rigid_invert(a)), rigid_compose(rigid_invert(a), a) })
    {
      CHECK((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-9);
    }
    const RigidTransform ai = rigid_compose(a, RigidTransform::identity());
    CHECK((ai.rotation - a.rotation).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ai.translation - a.translation).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rigid validation and helpers")
{
  RigidTransform bad;
  bad.rotation(0, 0) = -1.0; // reflection
  CHECK_THROWS_AS(bad.validate(), TransformError);
  RigidTransform scaled;
  scaled.rotation *= 1.01;
  CHECK_THROWS_AS(scaled.validate(), TransformError);
  CHECK_NOTHROW(RigidTransform::identity().validate());

  std::mt19937_64      rng(2);
  const RigidTransform t = random_rigid(rng);
  const RigidTransform back = RigidTransform::from_array(t.to_array());
  CHECK((back.rotation - t.rotation).norm() == 0.0);
  CHECK((back.translation - t.translation).norm() == 0.0);

  const Mat3 r = euler_zyx(0.1, -0.2, 0.3);
  CHECK(rotation_angle_between(r, r) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rotation_angle_between(Mat3::Identity(), axis_angle(Vec3(1, 1, 0), 0.3)) == doctest::Approx(0.3));
  Mat3 noisy = r;
  noisy(0, 1) += 1e-4;
  const Mat3 o = orthonormalize(noisy);
  CHECK((o.transpose() * o - Mat3::Identity()).norm() < 1e-12);
  CHECK(o.determinant() == doctest::Approx(1.0));
}

TEST_CASE("cubic basis")
{
  const auto w0 = bspline_basis(0.0);
  CHECK(w0[0] == doctest::Approx(1.0 / 6));
  CHECK(w0[1] == doctest::Approx(4.0 / 6));
  CHECK(w0[2] == doctest::Approx(1.0 / 6));
  CHECK(w0[3] == doctest::Approx(0.0));
  const auto w5 = bspline_basis(0.5);
  CHECK(w5[0] == doctest::Approx(1.0 / 48));
  CHECK(w5[1] == doctest::Approx(23.0 / 48));
  CHECK(w5[2] == doctest::Approx(23.0 / 48));
  CHECK(w5[3] == doctest::Approx(1.0 / 48));
  for (double u = 0.0; u < 1.0; u += 1.0 / 1024)
  {
    const auto w = bspline_basis(u);
    CHECK(std::abs(w[0] + w[1] + w[2] + w[3] - 1.0) < 1e-12);
    for (double x : w)
      CHECK(x >= 0.0);
    CHECK(w[0] == doctest::Approx(b0(u)));
    CHECK(w[3] == doctest::Approx(b3(u)));
  }
}

TEST_CASE("free-form displacement")
{
  std::mt19937_64                        rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto interior = [&](const BSplineGrid & g) {
    // the support exists between control indices 1 and dims-2
    Vec3 p;
    for (int a = 0; a < 3; ++a)
      p[a] = g.origin()[a] + g.spacing()[a] * (1.0 + (g.dims()[a] - 3.0) * u(rng) * 0.999);
    return p;
  };

  SUBCASE("zero grid is the identity field")
  {
    const BSplineGrid g({ 6, 6, 6 }, Vec3::Zero(), Vec3::Ones() * 4);
    for (int k = 0; k < 50; ++k)
      CHECK(bspline_displacement(g, interior(g)).norm() == 0.0);
  }
  SUBCASE("constant displacement is reproduced exactly")
  {
    const Vec3  d(1.5, -2.0, 0.25);
    BSplineGrid g({ 6, 7, 5 }, Vec3(3, 2, 1), Vec3(4, 5, 6));
    for (auto & x : g.displacements())
      x = d;
    for (int k = 0; k < 100; ++k)
      CHECK((bspline_displacement(g, interior(g)) - d).norm() < 1e-12);
    CHECK((deformable_apply(RigidTransform::identity(), g, Vec3(10, 12, 9)) - (Vec3(10, 12, 9) + d)).norm() < 1e-12);
  }
  SUBCASE("random grid against the 64-term sum")
  {
    const BSplineGrid g = random_grid(rng);
    for (int k = 0; k < 500; ++k)
    {
      const Vec3 p = interior(g);
      CHECK((bspline_displacement(g, p) - brute_displacement(g, p)).norm() < 1e-9);
    }
  }
  SUBCASE("outside the support throws")
  {
    const BSplineGrid g = random_grid(rng);
    CHECK_FALSE(g.in_support(g.origin()));
    CHECK_THROWS_AS(bspline_displacement(g, g.origin() - Vec3::Ones()), TransformError);
  }
  SUBCASE("composite mapping matches step-by-step evaluation")
  {
    const BSplineGrid    g = random_grid(rng, 1.0);
    const RigidTransform r{ axis_angle(Vec3(0, 0, 1), 0.05), Vec3(0.5, -0.3, 0.2) };
    CHECK((deformable_apply(RigidTransform::identity(), BSplineGrid({ 7, 6, 8 }, g.origin(), g.spacing()), Vec3(1, 2, 3)) -
           Vec3(1, 2, 3)).norm() == 0.0);
    for (int k = 0; k < 100; ++k)
    {
      const Vec3 p = interior(g) * 0.8;
      const Vec3 q = r.apply(p);
      if (!g.in_support(q))
        continue;
      CHECK((deformable_apply(r, g, p) - (q + brute_displacement(g, q))).norm() < 1e-9);
    }
  }
  SUBCASE("smooth across cell boundaries")
  {
    const BSplineGrid g = random_grid(rng);
    const double      h = 1e-6;
    for (int k = 0; k < 60; ++k)
    {
      // a point on an interior control plane, approached along a random line
      Vec3         p = interior(g);
      const int    axis = k % 3;
      const double cell = std::round((p[axis] - g.origin()[axis]) / g.spacing()[axis]);
      p[axis] = g.origin()[axis] + g.spacing()[axis] * std::clamp(cell, 2.0, double(g.dims()[axis]) - 3.0);
      Vec3 dir(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
      dir.normalize();
      const Vec3 l2 = bspline_displacement(g, p - 2 * h * dir);
      const Vec3 l1 = bspline_displacement(g, p - h * dir);
      const Vec3 mid = bspline_displacement(g, p);
      const Vec3 r1 = bspline_displacement(g, p + h * dir);
      const Vec3 r2 = bspline_displacement(g, p + 2 * h * dir);
      CHECK((r1 - l1).norm() < 1e-4);                           // no jump in value
      CHECK(((r2 - mid) / (2 * h) - (mid - l2) / (2 * h)).norm() < 1e-6); // first difference per mm
      CHECK(((r1 - mid) / h - (mid - l1) / h).norm() < 1e-6);
    }
  }
  SUBCASE("covering grid supports the whole volume")
  {
    const Volume      v({ 10, 12, 9 }, Vec3(2, 1.5, 3), Vec3(-5, 4, 2), Mat3::Identity(), std::vector<double>(10 * 12 * 9));
    const BSplineGrid g = BSplineGrid::covering(v, Vec3(8, 8, 8));
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(g.in_support(v.index_to_world(Vec3(c & 1 ? 9 : 0, c & 2 ? 11 : 0, c & 4 ? 8 : 0))));
  }
}
