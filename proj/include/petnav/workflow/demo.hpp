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

// Scripted phantom procedure: generate, register, stream poses over the
// tracking protocol, calibrate, collect fiducials, plan and insert the
// needle under closed-loop guidance, then score against the ground truth.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "petnav/phantom.hpp"
#include "petnav/workflow/session.hpp"

namespace petnav::workflow
{

struct DemoOptions
{
  PhantomConfig         phantom = PhantomConfig::standard();
  std::filesystem::path out_dir; // empty: a fresh temporary directory
  RegistrationMode      registration = RegistrationMode::Rigid;

  std::size_t pivot_pose_count = 200;
  double      pivot_max_tilt_deg = 35.0;
  Vec3        pivot_point_tracker{ 2.0, -1.0, 3.0 };

  double fiducial_wobble_deg = 3.0;
  double insertion_speed = 10.0; // mm/s
  double operator_gain = 0.3;    // fraction of the displayed error corrected per guidance tick
  double settle_seconds = 1.0;
  double guidance_rate = 20.0;   // Hz
  Vec3   approach{ 0.25, -1.0, 0.15 }; // image frame, from target out to the skin
  double skin_threshold_hu = -500.0;

  double pace = 0.0; // > 0: insertion poses are paced at pace x real time; 0 runs flat out

  std::function<void(const std::string &)> progress; // optional narration
  // Called once the session exists, before any step runs (e.g. to serve it over HTTP).
  std::function<void(const std::shared_ptr<WorkflowSession> &)> on_session;
};

struct DemoReport
{
  std::filesystem::path out_dir;
  double registration_error_mm = 0.0;      // worst mapped-point error over markers and lesion
  double registration_error_voxels = 0.0;  // same, in interventional voxels (smallest spacing)
  double registration_mi_initial = 0.0;
  double registration_mi_final = 0.0;
  double calibration_tip_error_mm = 0.0;
  double calibration_rms_mm = 0.0;
  double fiducial_rmse_mm = 0.0;
  double patient_registration_error_mm = 0.0; // worst error at markers and lesion
  double target_estimate_error_mm = 0.0;
  BiopsyPlan plan;
  double      insertion_start_time = 0.0; // session clock when the needle leaves the entry
  double      true_tre_mm = 0.0;       // final true tip to lesion
  double      displayed_tip_error_mm = 0.0; // final displayed tip vs true tip
  double      final_displayed_depth_mm = 0.0;
  bool        depth_nonincreasing = true; // over the advance phase
  std::size_t guidance_ticks = 0;
  std::size_t poses_streamed = 0;
  double      runtime_seconds = 0.0;
  std::filesystem::path session_file;

  std::string summary() const;
};

/** Runs the whole procedure. Throws on any workflow or transport failure. */
DemoReport run_demo(const DemoOptions & opts);

} // namespace petnav::workflow
