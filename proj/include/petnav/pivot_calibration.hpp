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
#include <stdexcept>
#include <string>
#include <vector>

#include "petnav/transforms.hpp"

namespace petnav
{

/** Tracked sensor pose: sensor frame -> tracker world. */
struct PoseSample
{
  Mat3   rotation = Mat3::Identity();
  Vec3   position = Vec3::Zero();
  double timestamp = 0.0;

  /** Throws TransformError when the rotation is not orthonormal to tol. */
  void validate(double tol = 1e-6) const;

  Vec3
  apply(const Vec3 & sensor_point) const noexcept
  {
    return rotation * sensor_point + position;
  }

  RigidTransform
  as_transform() const noexcept
  {
    return { rotation, position };
  }
};

struct PivotResult
{
  Vec3        tip_offset = Vec3::Zero();  // sensor frame
  Vec3        pivot_point = Vec3::Zero(); // tracker world
  double      rms_residual = 0.0;
  std::size_t n_poses = 0;
};

class PivotError : public std::runtime_error
{
public:
  enum class Kind
  {
    NotReady,
    IllConditioned,
    BadSample
  };

  PivotError(Kind kind, const std::string & what)
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

struct PivotReadinessPolicy
{
  std::size_t min_poses = 20;
  double      min_rotation_diversity = 0.15;
};

/**
 * Pose buffer fed by the tracking stream while the user pivots the
 * needle about its tip.
 */
class PivotBuffer
{
public:
  explicit PivotBuffer(PivotReadinessPolicy policy = {})
    : m_Policy(policy)
  {}

  /** Appends a pose; returns readiness. Rejects non-orthonormal rotations. */
  bool accumulate(const PoseSample & s);

  bool        ready() const;
  double      rotation_diversity() const;
  std::size_t size() const noexcept { return m_Poses.size(); }
  void        clear() noexcept { m_Poses.clear(); }

  const std::vector<PoseSample> &
  poses() const noexcept
  {
    return m_Poses;
  }
  const PivotReadinessPolicy &
  policy() const noexcept
  {
    return m_Policy;
  }

private:
  PivotReadinessPolicy    m_Policy;
  std::vector<PoseSample> m_Poses;
};

/** Smallest singular value of the stacked (R_i - R_mean) blocks. */
double rotation_diversity(const std::vector<PoseSample> & poses);

/**
 * Solves [R_i | -I] (tip_offset; pivot_point) = -p_i in the least-squares
 * sense with Householder QR. Throws NotReady when the buffer's policy is
 * unmet and IllConditioned when cond(A^T A) exceeds 1e8.
 */
PivotResult pivot_calibrate(const PivotBuffer & buffer);

/** Same solver without the readiness policy (for offline pose files). */
PivotResult pivot_solve(const std::vector<PoseSample> & poses);

/** RMS of |R_i t + p_i - pivot| recomputed from scratch. */
double pivot_residual(const std::vector<PoseSample> & poses, const Vec3 & tip_offset, const Vec3 & pivot_point);

} // namespace petnav
