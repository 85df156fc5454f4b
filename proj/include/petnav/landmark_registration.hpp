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

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "petnav/transforms.hpp"

namespace petnav
{

/** A fiducial seen in both the interventional CT and by the tracked needle tip. */
struct LandmarkPair
{
  Vec3        image_point = Vec3::Zero();
  Vec3        tracker_point = Vec3::Zero();
  std::string label;
};

struct LandmarkRegistrationResult
{
  RigidTransform      transform; // tracker -> image
  double              rmse = 0.0;
  std::vector<double> per_pair_residuals;
};

class LandmarkError : public std::runtime_error
{
public:
  enum class Kind
  {
    TooFewPoints,
    Degenerate,
    EmptyInput
  };

  LandmarkError(Kind kind, const std::string & what)
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

/**
 * Least-squares rigid fit minimizing sum |T(tracker_i) - image_i|^2.
 *
 * Centroids are aligned and the rotation comes from the SVD of the
 * cross-covariance, with the last singular direction flipped when the
 * unconstrained optimum is a reflection. Needs at least 3 pairs that are
 * not collinear: the second singular value of the cross-covariance must
 * exceed 1e-9 of the first.
 */
LandmarkRegistrationResult register_landmarks(std::span<const LandmarkPair> pairs);

/** Residual RMS of a result over the given pairs, recomputed from scratch. */
double fiducial_registration_error(const LandmarkRegistrationResult & result, std::span<const LandmarkPair> pairs);

} // namespace petnav
