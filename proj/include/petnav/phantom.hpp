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

// Procedural respiring torso phantom with an FDG-hot lesion, plus the
// tracked-needle pose generator that drives the tracking stream.

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "petnav/pivot_calibration.hpp"
#include "petnav/transforms.hpp"
#include "petnav/volume.hpp"

namespace petnav
{

struct Fiducial
{
  std::string label;
  Vec3        image_point = Vec3::Zero(); // interventional-CT world, mm
};

struct PhantomConfig
{
  Volume::Dims volume_dims{ 64, 64, 64 };
  Vec3         ct_spacing{ 3.0, 3.0, 4.0 };
  Vec3         pet_spacing{ 4.0, 4.0, 3.0 };
  Vec3         interventional_spacing{ 1.96, 1.96, 2.0 };

  Vec3   lesion_center{ 14.0, 6.0, -8.0 }; // comp-CT world, mm
  double lesion_radius = 9.0;
  Vec3   body_semi_axes{ 50.0, 40.0, 55.0 };
  Vec3   body_center = Vec3::Zero();

  bool   respiration_enabled = false;
  double respiration_rate = 12.0;      // breaths per minute
  double respiration_amplitude = 10.0; // mm, superior-inferior (+z)

  RigidTransform interventional_offset; // comp-CT world -> interventional-CT world
  RigidTransform tracker_to_image;      // tracker world -> interventional-CT world
  Vec3           tip_offset{ 0.4, -0.3, 12.0 }; // sensor frame, mm

  std::vector<Fiducial> fiducials; // interventional-CT world, on the body surface

  double        pose_noise_sigma = 0.0; // mm, added to streamed sensor positions
  double        stream_rate = 40.0;     // Hz
  std::uint64_t seed = 1;

  /** Throws std::invalid_argument when an invariant is violated. */
  void validate() const;

  /** Reference setup with nontrivial truth transforms and four surface fiducials. */
  static PhantomConfig standard();
};

struct GroundTruth
{
  RigidTransform interventional_offset;
  RigidTransform tracker_to_image;
  Vec3           tip_offset = Vec3::Zero();
  Vec3           lesion_comp_ct = Vec3::Zero();
  Vec3           lesion_interventional = Vec3::Zero();
  Vec3           lesion_tracker = Vec3::Zero();
  std::vector<Fiducial> fiducials;

  /** Throws std::logic_error when the frames disagree beyond tol. */
  void check_consistency(double tol = 1e-9) const;
};

struct PhantomVolumes
{
  Volume      comp_ct;
  Volume      comp_pet;
  Volume      interventional_ct;
  GroundTruth truth;
};

PhantomVolumes generate_phantom(const PhantomConfig & cfg);

GroundTruth make_ground_truth(const PhantomConfig & cfg);

/** Four well-spread points on the body surface, in interventional-CT world. */
std::vector<Fiducial> surface_fiducials(const PhantomConfig & cfg);

/** amplitude * (1 - cos(2 pi rate t / 60)) / 2. Throws on non-positive rate or amplitude. */
double respiration_displacement(double t, double rate, double amplitude);

/** Tip path in interventional-CT world plus the needle axis (unit, image frame). */
struct TrajectorySample
{
  Vec3 tip = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
};

using Trajectory = std::function<TrajectorySample(double t)>;

/** Sensor rotation (tracker frame) whose z axis maps to the image-frame needle axis. */
Mat3 sensor_rotation_for_axis(const RigidTransform & tracker_to_image, const Vec3 & image_axis, double roll = 0.0);

/**
 * Inverts the guidance chain: the sensor pose (tracker frame) that puts the
 * calibrated tip at tip_image with the given sensor rotation.
 */
PoseSample sensor_pose_for_tip(const GroundTruth & truth, const Vec3 & tip_image, const Mat3 & sensor_rotation, double t);

/**
 * Seeded pose generator: evaluates a trajectory, applies respiration
 * when enabled, inverts the chain and adds position noise.
 */
class PoseGenerator
{
public:
  explicit PoseGenerator(const PhantomConfig & cfg);

  /** Pose for a tip placed at tip_image (interventional world) at time t. */
  PoseSample pose_at(const TrajectorySample & s, double t);

  /** Pose with an explicit sensor rotation (tracker frame). */
  PoseSample pose_with_rotation(const Vec3 & tip_image, const Mat3 & sensor_rotation, double t);

  /** Pose whose tip sits at a tracker-frame point (pivoting); no respiration. */
  PoseSample pose_for_tracker_tip(const Vec3 & tip_tracker, const Mat3 & sensor_rotation, double t);

  const GroundTruth & truth() const noexcept { return m_Truth; }
  const PhantomConfig & config() const noexcept { return m_Config; }

private:
  PhantomConfig                    m_Config;
  GroundTruth                      m_Truth;
  std::mt19937_64                  m_Rng;
  std::normal_distribution<double> m_Normal{ 0.0, 1.0 };
};

/**
 * Repeating straight insertion along approach (image frame): the tip
 * advances from standoff mm outside the lesion to the lesion over half a
 * period, then retracts.
 */
Trajectory builtin_trajectory(const GroundTruth & truth, const Vec3 & approach = Vec3(0.25, -1.0, 0.15),
                              double standoff = 60.0, double period = 20.0);

/**
 * Piecewise-linear trajectory from "t x y z ax ay az" lines (image frame,
 * strictly increasing t). Clamps outside the time range.
 */
Trajectory trajectory_from_text(const std::string & text);

/** Poses at cfg.stream_rate over [t0, t1), delivered to sink in order. */
void stream_needle_poses(PoseGenerator & gen, const Trajectory & trajectory, double t0, double t1,
                         const std::function<void(const PoseSample &)> & sink);

/**
 * Trajectory for pivot calibration: the tip stays at a fixed tracker-frame
 * point while the sensor swings on a cone (polar angle up to max_tilt).
 * Returns sensor rotations in tracker frame.
 */
std::vector<Mat3> pivot_rotations(std::size_t n, double max_tilt_rad, std::uint64_t seed);

/** Where the tip would report (tracker frame) for each fiducial, noise optional. */
std::vector<std::pair<std::string, Vec3>> fiducial_touch_sequence(const PhantomConfig & cfg, double noise_sigma = 0.0,
                                                                  std::uint64_t seed = 0);

/** Plain-text key/value truth file: one "key = v1 v2 ..." line per entry. */
void        write_truth_file(const GroundTruth & truth, const std::filesystem::path & path);
std::string format_truth(const GroundTruth & truth);
GroundTruth parse_truth(const std::string & text);

/** Lesion estimate from PET: intensity-weighted centroid above half the maximum (PET world). */
Vec3 pet_hotspot_centroid(const Volume & pet, double threshold_fraction = 0.5);

} // namespace petnav
