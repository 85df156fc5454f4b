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
#include "petnav/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace petnav
{

BiopsyPlan
make_plan(const Vec3 & entry, const Vec3 & target)
{
  if (!entry.allFinite() || !target.allFinite())
    throw PlanError("plan points must be finite");
  const Vec3   d = target - entry;
  const double len = d.norm();
  if (!(len > kMinPlanLength))
    throw PlanError("entry and target are too close (" + std::to_string(len) + " mm); need more than 1 mm");
  return { entry, target, d / len, len };
}

std::vector<Vec3>
sample_path(const BiopsyPlan & plan, double step)
{
  if (!(step > 0.0))
    throw PlanError("path sampling step must be positive");
  std::vector<Vec3> pts;
  for (std::size_t k = 0;; ++k)
  {
    const double s = static_cast<double>(k) * step;
    if (s >= plan.length)
      break;
    pts.push_back(plan.entry + s * plan.direction);
  }
  pts.push_back(plan.target);
  return pts;
}

Vec3
calibrated_tip(const PoseSample & pose, const Vec3 & tip_offset)
{
  return pose.rotation * tip_offset + pose.position;
}

GuidanceState
guidance_metrics(const BiopsyPlan & plan, const Vec3 & tip_image, const Vec3 & axis_image)
{
  GuidanceState g;
  g.tip_image = tip_image;
  g.depth_remaining = (plan.target - tip_image).dot(plan.direction);
  const Vec3 rel = tip_image - plan.entry;
  g.lateral_deviation = (rel - rel.dot(plan.direction) * plan.direction).norm();
  const double an = axis_image.norm();
  if (an > 0.0)
  {
    const double c = std::clamp(axis_image.dot(plan.direction) / an, -1.0, 1.0);
    // atan2 keeps precision near 0 and 180 degrees
    const double s = (axis_image / an).cross(plan.direction).norm();
    g.angle_deviation = std::atan2(s, c) * 180.0 / std::numbers::pi;
  }
  g.valid = true;
  return g;
}

GuidanceState
compute_guidance(const BiopsyPlan &     plan,
                 const PoseSample &     pose,
                 const Vec3 &           tip_offset,
                 const RigidTransform & tracker_to_image,
                 double                 now,
                 const GuidanceState *  last_valid)
{
  const double age = now - pose.timestamp;
  if (age > kStalenessThreshold)
  {
    GuidanceState g = last_valid ? *last_valid : GuidanceState{};
    g.pose_age = age;
    g.valid = false;
    return g;
  }
  const Vec3    tip = tracker_to_image.apply(calibrated_tip(pose, tip_offset));
  const Vec3    axis = tracker_to_image.rotation * pose.rotation.col(2);
  GuidanceState g = guidance_metrics(plan, tip, axis);
  g.pose_age = age;
  return g;
}

} // namespace petnav
