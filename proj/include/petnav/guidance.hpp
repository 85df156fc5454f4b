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

#include <stdexcept>
#include <vector>

#include "petnav/pivot_calibration.hpp"
#include "petnav/transforms.hpp"

namespace petnav
{

inline constexpr double kStalenessThreshold = 0.5; // seconds
inline constexpr double kMinPlanLength = 1.0;      // mm

class PlanError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/** Straight needle path in interventional-CT world coordinates. */
struct BiopsyPlan
{
  Vec3   entry = Vec3::Zero();
  Vec3   target = Vec3::Zero();
  Vec3   direction = Vec3::UnitZ();
  double length = 0.0;
};

/** Throws PlanError when the points are 1 mm apart or closer, or not finite. */
BiopsyPlan make_plan(const Vec3 & entry, const Vec3 & target);

/** entry + k*step*direction for k = 0.., always ending exactly at target. */
std::vector<Vec3> sample_path(const BiopsyPlan & plan, double step);

struct GuidanceState
{
  Vec3   tip_image = Vec3::Zero();
  double depth_remaining = 0.0;   // (target - tip) . direction; negative past the target
  double lateral_deviation = 0.0; // distance to the infinite plan line
  double angle_deviation = 0.0;   // degrees, needle axis vs plan direction
  double pose_age = 0.0;          // seconds
  bool   valid = false;
};

/** Needle tip in tracker world: pose applied to the sensor-frame tip offset. */
Vec3 calibrated_tip(const PoseSample & pose, const Vec3 & tip_offset);

/**
 * Metrics for a live pose. When the pose is older than the staleness
 * threshold, valid is false and the metrics are those of `last_valid`
 * (or zero if none is given) while pose_age keeps counting.
 */
GuidanceState compute_guidance(const BiopsyPlan &     plan,
                               const PoseSample &     pose,
                               const Vec3 &           tip_offset,
                               const RigidTransform & tracker_to_image,
                               double                 now,
                               const GuidanceState *  last_valid = nullptr);

/** Metrics for a tip and needle axis already in image coordinates. */
GuidanceState guidance_metrics(const BiopsyPlan & plan, const Vec3 & tip_image, const Vec3 & axis_image);

} // namespace petnav
