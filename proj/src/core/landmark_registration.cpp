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
#include "petnav/landmark_registration.hpp"

#include <cmath>

namespace petnav
{

LandmarkRegistrationResult
register_landmarks(std::span<const LandmarkPair> pairs)
{
  if (pairs.size() < 3)
    throw LandmarkError(LandmarkError::Kind::TooFewPoints, "point-based registration needs at least 3 pairs");
  for (const auto & p : pairs)
  {
    if (!p.image_point.allFinite() || !p.tracker_point.allFinite())
      throw LandmarkError(LandmarkError::Kind::Degenerate, "landmark '" + p.label + "' has non-finite coordinates");
  }

  const double n = static_cast<double>(pairs.size());
  Vec3         cTracker = Vec3::Zero();
  Vec3         cImage = Vec3::Zero();
  for (const auto & p : pairs)
  {
    cTracker += p.tracker_point;
    cImage += p.image_point;
  }
  cTracker /= n;
  cImage /= n;

  Mat3 H = Mat3::Zero();
  for (const auto & p : pairs)
    H += (p.tracker_point - cTracker) * (p.image_point - cImage).transpose();

  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3             sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] < 1e-9 * sv[0])
    throw LandmarkError(LandmarkError::Kind::Degenerate, "landmarks are collinear or coincident; rotation is unobservable");

  const Mat3 & U = svd.matrixU();
  const Mat3 & V = svd.matrixV();
  Mat3         D = Mat3::Identity();
  if ((V * U.transpose()).determinant() < 0.0)
    D(2, 2) = -1.0;

  LandmarkRegistrationResult result;
  result.transform.rotation = V * D * U.transpose();
  result.transform.translation = cImage - result.transform.rotation * cTracker;

  double sumSq = 0.0;
  result.per_pair_residuals.reserve(pairs.size());
  for (const auto & p : pairs)
  {
    const double r = (result.transform.apply(p.tracker_point) - p.image_point).norm();
    result.per_pair_residuals.push_back(r);
    sumSq += r * r;
  }
  result.rmse = std::sqrt(sumSq / n);
  return result;
}

double
fiducial_registration_error(const LandmarkRegistrationResult & result, std::span<const LandmarkPair> pairs)
{
  if (pairs.empty())
    throw LandmarkError(LandmarkError::Kind::EmptyInput, "no landmark pairs to evaluate");
  double sumSq = 0.0;
  for (const auto & p : pairs)
  {
    const double r = (result.transform.apply(p.tracker_point) - p.image_point).norm();
    sumSq += r * r;
  }
  return std::sqrt(sumSq / static_cast<double>(pairs.size()));
}

} // namespace petnav
