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
#include "petnav/pivot_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace petnav
{

namespace
{
constexpr double kMaxNormalCondition = 1e8;
}

void
PoseSample::validate(double tol) const
{
  if (!rotation.allFinite() || !position.allFinite() || !std::isfinite(timestamp))
    throw TransformError("pose has non-finite entries");
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > tol)
    throw TransformError("pose rotation is not orthonormal");
}

double
rotation_diversity(const std::vector<PoseSample> & poses)
{
  if (poses.empty())
    return 0.0;
  Mat3 mean = Mat3::Zero();
  for (const auto & p : poses)
    mean += p.rotation;
  mean /= static_cast<double>(poses.size());

  // sigma_min(M)^2 = lambda_min(M^T M) with M the 3n x 3 stack.
  Mat3 gram = Mat3::Zero();
  for (const auto & p : poses)
  {
    const Mat3 d = p.rotation - mean;
    gram += d.transpose() * d;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, eig.eigenvalues()[0]));
}

bool
PivotBuffer::accumulate(const PoseSample & s)
{
  try
  {
    s.validate();
  }
  catch (const TransformError & e)
  {
    throw PivotError(PivotError::Kind::BadSample, e.what());
  }
  m_Poses.push_back(s);
  return ready();
}

double
PivotBuffer::rotation_diversity() const
{
  return petnav::rotation_diversity(m_Poses);
}

bool
PivotBuffer::ready() const
{
  return m_Poses.size() >= m_Policy.min_poses && rotation_diversity() > m_Policy.min_rotation_diversity;
}

double
pivot_residual(const std::vector<PoseSample> & poses, const Vec3 & tip_offset, const Vec3 & pivot_point)
{
  if (poses.empty())
    return 0.0;
  double sumSq = 0.0;
  for (const auto & p : poses)
    sumSq += (p.rotation * tip_offset + p.position - pivot_point).squaredNorm();
  return std::sqrt(sumSq / static_cast<double>(poses.size()));
}

PivotResult
pivot_solve(const std::vector<PoseSample> & poses)
{
  if (poses.size() < 2)
    throw PivotError(PivotError::Kind::NotReady, "pivot calibration needs at least 2 poses");

  const Eigen::Index rows = static_cast<Eigen::Index>(3 * poses.size());
  Eigen::MatrixXd    A(rows, 6);
  Eigen::VectorXd    b(rows);
  for (std::size_t i = 0; i < poses.size(); ++i)
  {
    const Eigen::Index r = static_cast<Eigen::Index>(3 * i);
    A.block<3, 3>(r, 0) = poses[i].rotation;
    A.block<3, 3>(r, 3) = -Mat3::Identity();
    b.segment<3>(r) = -poses[i].position;
  }

  // cond(A^T A) = cond(A)^2
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto &                      s = svd.singularValues();
  const double                      smin = s[s.size() - 1];
  const double                      condNormal = smin > 0.0 ? (s[0] / smin) * (s[0] / smin) : INFINITY;
  if (!(condNormal <= kMaxNormalCondition))
  {
    std::ostringstream msg;
    msg << "pivot system is ill-conditioned (cond(A^T A) = " << condNormal << ")";
    throw PivotError(PivotError::Kind::IllConditioned, msg.str());
  }

  const Eigen::VectorXd x = A.householderQr().solve(b);
  PivotResult           result;
  result.tip_offset = x.segment<3>(0);
  result.pivot_point = x.segment<3>(3);
  result.n_poses = poses.size();
  result.rms_residual = pivot_residual(poses, result.tip_offset, result.pivot_point);
  return result;
}

PivotResult
pivot_calibrate(const PivotBuffer & buffer)
{
  if (!buffer.ready())
  {
    std::ostringstream msg;
    msg << "pivot buffer not ready: " << buffer.size() << " poses (need " << buffer.policy().min_poses
        << "), rotation diversity " << buffer.rotation_diversity() << " (need > " << buffer.policy().min_rotation_diversity
        << ")";
    throw PivotError(PivotError::Kind::NotReady, msg.str());
  }
  return pivot_solve(buffer.poses());
}

} // namespace petnav
