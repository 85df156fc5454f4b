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

#include "petnav/workflow/demo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include "petnav/igtl/tracker.hpp"
#include "petnav/nrrd_io.hpp"

namespace petnav::workflow
{

namespace
{

constexpr double kPi = 3.14159265358979323846;
constexpr char   kDevice[] = "NeedleSensor";

std::filesystem::path
fresh_directory()
{
  std::random_device rd;
  char               name[64];
  std::snprintf(name, sizeof(name), "petnav-demo-%08x%08x", rd(), rd());
  return std::filesystem::temp_directory_path() / name;
}

Vec3
random_unit(std::mt19937_64 & rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3                             v;
  do
  {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

// Walks from the target along dir until the interventional CT reads air.
Vec3
find_entry(const Volume & ct, const Vec3 & target, const Vec3 & dir, double threshold)
{
  constexpr double step = 0.5;
  for (double s = step; s < 1000.0; s += step)
  {
    const Vec3 p = target + s * dir;
    const auto v = ct.sample_trilinear(p);
    if (!v || *v < threshold)
      return p;
  }
  throw std::runtime_error("no skin crossing along the approach direction");
}

} // namespace

std::string
DemoReport::summary() const
{
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "registration error:      " << registration_error_mm << " mm (" << registration_error_voxels << " voxel)\n"
     << "registration MI:         " << registration_mi_initial << " -> " << registration_mi_final << " bits\n";
  os.precision(9);
  os << "calibration tip error:   " << calibration_tip_error_mm << " mm (rms " << calibration_rms_mm << ")\n"
     << "fiducial rmse:           " << fiducial_rmse_mm << " mm\n"
     << "patient registration:    " << patient_registration_error_mm << " mm\n";
  os.precision(4);
  os << "target estimate error:   " << target_estimate_error_mm << " mm\n"
     << "plan length:             " << plan.length << " mm\n"
     << "true TRE:                " << true_tre_mm << " mm\n"
     << "displayed tip error:     " << displayed_tip_error_mm << " mm\n"
     << "final displayed depth:   " << final_displayed_depth_mm << " mm\n"
     << "depth non-increasing:    " << (depth_nonincreasing ? "yes" : "no") << "\n"
     << "guidance ticks / poses:  " << guidance_ticks << " / " << poses_streamed << "\n"
     << "runtime:                 " << runtime_seconds << " s\n"
     << "session file:            " << session_file.string() << "\n";
  return os.str();
}

DemoReport
run_demo(const DemoOptions & opts)
{
  const auto wall0 = std::chrono::steady_clock::now();
  auto       say = [&](const std::string & s) {
    if (opts.progress)
      opts.progress(s);
  };

  PhantomConfig cfg = opts.phantom;
  cfg.validate();

  DemoReport rep;
  rep.out_dir = opts.out_dir.empty() ? fresh_directory() : opts.out_dir;
  std::filesystem::create_directories(rep.out_dir);

  say("generating phantom");
  const PhantomVolumes ph = generate_phantom(cfg);
  const GroundTruth &  truth = ph.truth;
  const auto           ct_path = rep.out_dir / "comp_ct.nrrd";
  const auto           pet_path = rep.out_dir / "comp_pet.nrrd";
  const auto           ict_path = rep.out_dir / "interventional_ct.nrrd";
  save_volume(ph.comp_ct, ct_path);
  save_volume(ph.comp_pet, pet_path);
  save_volume(ph.interventional_ct, ict_path);
  write_truth_file(truth, rep.out_dir / "truth.txt");

  // Simulated time drives both the pose stamps and the session clock.
  auto           sim_time = std::make_shared<std::atomic<double>>(0.0);
  auto session_ptr = std::make_shared<WorkflowSession>(SessionConfig{}, [sim_time] { return sim_time->load(); });
  WorkflowSession & session = *session_ptr;
  if (opts.on_session)
    opts.on_session(session_ptr);

  session.set_volumes(ct_path, pet_path, ict_path);

  say("registering");
  const RegistrationRecord reg = session.run_registration(opts.registration);
  {
    const SpatialMapping map = reg.mapping();
    const RigidTransform true_map = truth.interventional_offset.inverse();
    std::vector<Vec3>    probes;
    for (const auto & f : truth.fiducials)
      probes.push_back(f.image_point);
    probes.push_back(truth.lesion_interventional);
    double worst = 0.0;
    for (const auto & p : probes)
    {
      const auto m = map.map(p);
      if (!m)
        throw std::runtime_error("registration mapping does not cover a probe point");
      worst = std::max(worst, (*m - true_map.apply(p)).norm());
    }
    rep.registration_error_mm = worst;
    rep.registration_error_voxels = worst / ph.interventional_ct.spacing().minCoeff();
    rep.registration_mi_initial = reg.rigid.initial_mi;
    rep.registration_mi_final = reg.deformable ? reg.deformable->final_mi : reg.rigid.final_mi;
  }

  say("starting tracker stream");
  igtl::TrackerServerOptions sopts;
  sopts.port = 0;
  sopts.bind_address = "127.0.0.1";
  sopts.client_queue_capacity = 4096;
  igtl::TrackerServer server(sopts);
  server.start();
  session.connect_tracking("127.0.0.1", server.port());
  if (!server.wait_for_clients(1, std::chrono::seconds(10)))
    throw std::runtime_error("tracking client did not connect");

  PoseGenerator  gen(cfg);
  const double   dt = 1.0 / cfg.stream_rate;
  std::uint64_t  published = 0;
  double         t = 0.0;
  auto           publish = [&](const PoseSample & p) {
    sim_time->store(p.timestamp);
    server.publish_pose(kDevice, p.timestamp, RigidTransform{ p.rotation, p.position });
    ++published;
    if (!session.wait_for_pose_count(published, std::chrono::seconds(10)))
      throw std::runtime_error("pose was not delivered to the session");
  };

  say("pivot calibration");
  session.begin_calibration();
  for (const Mat3 & R : pivot_rotations(opts.pivot_pose_count, opts.pivot_max_tilt_deg * kPi / 180.0, cfg.seed))
  {
    t += dt;
    publish(gen.pose_for_tracker_tip(opts.pivot_point_tracker, R, t));
  }
  const PivotResult piv = session.run_calibration();
  rep.calibration_tip_error_mm = (piv.tip_offset - truth.tip_offset).norm();
  rep.calibration_rms_mm = piv.rms_residual;

  say("fiducial touches");
  std::mt19937_64                        wobble_rng(cfg.seed * 7919 + 17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3        body_center_image = truth.interventional_offset.apply(cfg.body_center);
  const std::size_t dwell_poses = static_cast<std::size_t>(std::ceil(session.config().fiducial_dwell_seconds * cfg.stream_rate)) + 2;
  for (const auto & f : truth.fiducials)
  {
    const Vec3 inward = (body_center_image - f.image_point).normalized();
    const Mat3 R0 = sensor_rotation_for_axis(truth.tracker_to_image, inward, 0.0);
    for (std::size_t i = 0; i < dwell_poses; ++i)
    {
      const double tilt = opts.fiducial_wobble_deg * kPi / 180.0 * unit(wobble_rng);
      const Mat3   R = R0 * axis_angle(random_unit(wobble_rng), tilt);
      t += dt;
      publish(gen.pose_with_rotation(f.image_point, R, t));
    }
    session.record_fiducial(f.image_point, f.label);
  }
  const auto preg = session.patient_registration();
  if (!preg)
    throw std::runtime_error("patient registration did not complete");
  rep.fiducial_rmse_mm = preg->rmse;
  {
    double worst = 0.0;
    for (const auto & f : truth.fiducials)
      worst = std::max(worst, (preg->transform.apply(truth.tracker_to_image.inverse().apply(f.image_point)) - f.image_point).norm());
    worst = std::max(worst, (preg->transform.apply(truth.lesion_tracker) - truth.lesion_interventional).norm());
    rep.patient_registration_error_mm = worst;
  }

  say("planning");
  const LoadedVolumes vols = session.volumes();
  const Vec3          hot = pet_hotspot_centroid(*vols.comp_pet);
  const RigidTransform to_interventional = reg.rigid.final_transform.inverse();
  const Vec3          target = to_interventional.apply(hot);
  rep.target_estimate_error_mm = (target - truth.lesion_interventional).norm();
  const Vec3 entry = find_entry(*vols.interventional_ct, target, opts.approach.normalized(), opts.skin_threshold_hu);
  rep.plan = session.set_plan(entry, target);
  const BiopsyPlan & plan = rep.plan;

  say("insertion");
  const Mat3 R_needle = sensor_rotation_for_axis(truth.tracker_to_image, plan.direction, 0.0);
  const int  tick_every = std::max(1, static_cast<int>(std::lround(cfg.stream_rate / opts.guidance_rate)));
  const double advance_time = plan.length / opts.insertion_speed;
  const double total_time = advance_time + opts.settle_seconds;
  auto commanded = [&](double tau) { return plan.entry + std::min(opts.insertion_speed * tau, plan.length) * plan.direction; };

  Vec3          tip = plan.entry; // true tip, image frame
  Vec3          q_prev = commanded(0.0);
  double        last_depth = plan.length + 1.0;
  GuidanceState g;
  const double  t_start = t;
  rep.insertion_start_time = t_start;
  const auto    wall_start = std::chrono::steady_clock::now();
  for (long k = 1;; ++k)
  {
    const double tau = k * dt;
    const Vec3   q = commanded(tau);
    tip += q - q_prev;
    q_prev = q;
    t = t_start + tau;
    if (opts.pace > 0.0)
      std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                   std::chrono::duration<double>(tau / opts.pace)));
    publish(gen.pose_with_rotation(tip, R_needle, t));
    if (k % tick_every != 0)
      continue;
    g = session.guidance_tick();
    ++rep.guidance_ticks;
    if (!g.valid)
      throw std::runtime_error("guidance went stale during insertion");
    if (tau <= advance_time + 1e-9)
    {
      if (g.depth_remaining > last_depth + 1e-6)
        rep.depth_nonincreasing = false;
      last_depth = g.depth_remaining;
    }
    if (tau >= total_time)
      break;
    tip += opts.operator_gain * (q - g.tip_image);
  }
  rep.poses_streamed = published;
  rep.true_tre_mm = (tip - truth.lesion_interventional).norm();
  rep.final_displayed_depth_mm = g.depth_remaining;
  rep.displayed_tip_error_mm = (g.tip_image - tip).norm();

  session.stop_guidance();
  rep.session_file = rep.out_dir / "session.json";
  session.save(rep.session_file);
  session.disconnect_tracking();
  server.stop();

  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  say("done");
  return rep;
}

} // namespace petnav::workflow
