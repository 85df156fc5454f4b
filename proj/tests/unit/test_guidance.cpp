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

#include "petnav/guidance.hpp"

using namespace petnav;

TEST_CASE("plan: construction and degenerate input")
{
  const BiopsyPlan p = make_plan(Vec3(0, 0, 0), Vec3(0, 30, 40));
  CHECK(p.length == doctest::Approx(50.0));
  CHECK((p.direction - Vec3(0, 0.6, 0.8)).norm() < 1e-15);

  CHECK_THROWS_AS(make_plan(Vec3(1, 1, 1), Vec3(1, 1, 1)), PlanError);
  CHECK_THROWS_AS(make_plan(Vec3(0, 0, 0), Vec3(1.0, 0, 0)), PlanError);
  CHECK_NOTHROW(make_plan(Vec3(0, 0, 0), Vec3(1.001, 0, 0)));
  CHECK_THROWS_AS(make_plan(Vec3(0, 0, std::nan("")), Vec3(5, 5, 5)), PlanError);
  CHECK_THROWS_AS(make_plan(Vec3(0, 0, 0), Vec3(INFINITY, 5, 5)), PlanError);
}

TEST_CASE("plan: sampled path ends exactly at the target")
{
  const BiopsyPlan p = make_plan(Vec3(1, 2, 3), Vec3(1, 2, 13.5));
  const auto       pts = sample_path(p, 2.0);
  REQUIRE(pts.size() == 7);
  CHECK(pts.front() == p.entry);
  CHECK(pts.back() == p.target);
  for (std::size_t i = 1; i + 1 < pts.size(); ++i)
    CHECK((pts[i] - pts[i - 1]).norm() == doctest::Approx(2.0));
  CHECK(sample_path(p, 100.0).size() == 2);
  CHECK_THROWS_AS(sample_path(p, 0.0), PlanError);
}

TEST_CASE("guidance: worked example")
{
  const BiopsyPlan plan = make_plan(Vec3(0, 0, 0), Vec3(0, 0, 100));
  GuidanceState    g = guidance_metrics(plan, Vec3(3, 4, 30), Vec3(0, 0, 2));
  CHECK(g.valid);
  CHECK(g.depth_remaining == doctest::Approx(70.0));
  CHECK(g.lateral_deviation == doctest::Approx(5.0));
  CHECK(g.angle_deviation == doctest::Approx(0.0));

  g = guidance_metrics(plan, Vec3(0, 0, 110), Vec3(1, 0, 1));
  CHECK(g.depth_remaining == doctest::Approx(-10.0));
  CHECK(g.lateral_deviation == doctest::Approx(0.0));
  CHECK(g.angle_deviation == doctest::Approx(45.0));

  g = guidance_metrics(plan, Vec3(0, 0, 0), Vec3(0, 0, -1));
  CHECK(g.angle_deviation == doctest::Approx(180.0));
}

TEST_CASE("guidance: metric properties")
{
  std::mt19937                           rng(12);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int trial = 0; trial < 500; ++trial)
  {
    const Vec3 entry(u(rng), u(rng), u(rng));
    Vec3       target(u(rng), u(rng), u(rng));
    if ((target - entry).norm() < 5.0)
      continue;
    const BiopsyPlan plan = make_plan(entry, target);
    const Vec3       tip(u(rng), u(rng), u(rng));
    const Vec3       axis(u(rng), u(rng), u(rng));
    const GuidanceState g = guidance_metrics(plan, tip, axis);

    // Lateral distance via the cross-product formula.
    CHECK(g.lateral_deviation == doctest::Approx((tip - entry).cross(plan.direction).norm()).epsilon(1e-9));
    // Depth plus progress along the line equals the plan length.
    CHECK(g.depth_remaining + (tip - entry).dot(plan.direction) == doctest::Approx(plan.length).epsilon(1e-9));
    CHECK(g.angle_deviation >= 0.0);
    CHECK(g.angle_deviation <= 180.0);

    // Rigid motion of the whole scene leaves every metric unchanged.
    const RigidTransform m{ euler_zyx(u(rng) / 50, u(rng) / 50, u(rng) / 50), Vec3(u(rng), u(rng), u(rng)) };
    const BiopsyPlan     moved = make_plan(m.apply(entry), m.apply(target));
    const GuidanceState  h = guidance_metrics(moved, m.apply(tip), m.rotation * axis);
    CHECK(h.depth_remaining == doctest::Approx(g.depth_remaining).epsilon(1e-9));
    CHECK(h.lateral_deviation == doctest::Approx(g.lateral_deviation).epsilon(1e-7));
    CHECK(h.angle_deviation == doctest::Approx(g.angle_deviation).epsilon(1e-7));

    // Advancing along the plan decreases depth and leaves lateral unchanged.
    const GuidanceState a = guidance_metrics(plan, tip + 3.0 * plan.direction, axis);
    CHECK(a.depth_remaining == doctest::Approx(g.depth_remaining - 3.0).epsilon(1e-9));
    CHECK(a.lateral_deviation == doctest::Approx(g.lateral_deviation).epsilon(1e-7));
  }
}

TEST_CASE("guidance: live pose through the calibration chain")
{
  const BiopsyPlan     plan = make_plan(Vec3(10, 0, 0), Vec3(10, 0, 80));
  const RigidTransform t2i{ euler_zyx(0.1, -0.2, 0.5), Vec3(5, 6, 7) };
  const Vec3           tip_offset(0.5, -0.2, 15.0);

  PoseSample pose;
  pose.rotation = euler_zyx(0.3, 0.1, -0.4);
  pose.position = Vec3(-20, 3, 12);
  pose.timestamp = 100.0;

  const GuidanceState g = compute_guidance(plan, pose, tip_offset, t2i, 100.2);
  const Vec3          tip = t2i.apply(pose.rotation * tip_offset + pose.position);
  const GuidanceState ref = guidance_metrics(plan, tip, t2i.rotation * pose.rotation.col(2));
  CHECK(g.valid);
  CHECK((g.tip_image - tip).norm() < 1e-12);
  CHECK(g.depth_remaining == doctest::Approx(ref.depth_remaining));
  CHECK(g.lateral_deviation == doctest::Approx(ref.lateral_deviation));
  CHECK(g.angle_deviation == doctest::Approx(ref.angle_deviation));
  CHECK(g.pose_age == doctest::Approx(0.2));
  CHECK(calibrated_tip(pose, Vec3::Zero()) == pose.position);
}

TEST_CASE("guidance: stale poses are invalid and keep the last metrics")
{
  const BiopsyPlan plan = make_plan(Vec3(0, 0, 0), Vec3(0, 0, 50));
  PoseSample       pose;
  pose.position = Vec3(1, 0, 20);
  pose.timestamp = 10.0;

  const GuidanceState fresh = compute_guidance(plan, pose, Vec3::Zero(), RigidTransform{}, 10.5);
  CHECK(fresh.valid); // exactly at the threshold

  const GuidanceState stale = compute_guidance(plan, pose, Vec3::Zero(), RigidTransform{}, 10.51, &fresh);
  CHECK_FALSE(stale.valid);
  CHECK(stale.pose_age == doctest::Approx(0.51));
  CHECK(stale.depth_remaining == fresh.depth_remaining);
  CHECK(stale.tip_image == fresh.tip_image);

  const GuidanceState later = compute_guidance(plan, pose, Vec3::Zero(), RigidTransform{}, 15.0, &fresh);
  CHECK_FALSE(later.valid);
  CHECK(later.pose_age == doctest::Approx(5.0));

  const GuidanceState none = compute_guidance(plan, pose, Vec3::Zero(), RigidTransform{}, 20.0);
  CHECK_FALSE(none.valid);
  CHECK(none.depth_remaining == 0.0);
}
