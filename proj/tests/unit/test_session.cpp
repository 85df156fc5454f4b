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

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "petnav/workflow/json_io.hpp"
#include "unit/session_fixture.hpp"

using namespace petnav;
using namespace petnav::workflow;
using petnav::testing::ManualClock;
using petnav::testing::phantom_files;

namespace
{

SessionError::Kind
error_kind(const std::function<void()> & f)
{
  try
  {
    f();
  }
  catch (const SessionError & e)
  {
    return e.kind();
  }
  FAIL("expected SessionError");
  return SessionError::Kind::Io;
}

std::string
slurp(const std::filesystem::path & p)
{
  std::ifstream      in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Feeds n poses that hold the calibrated tip at a tracker point, ending at clock time.
void
hold_tip(WorkflowSession & s, PoseGenerator & gen, const ManualClock & clock, const Vec3 & tip_tracker, int n = 5)
{
  const Mat3 r = euler_zyx(0.2, -0.1, 0.3);
  for (int i = n - 1; i >= 0; --i)
    s.feed_pose(gen.pose_for_tracker_tip(tip_tracker, r, clock.now() - 0.05 * i));
}

} // namespace

TEST_CASE("session: preconditions map to typed errors")
{
  ManualClock     clock;
  WorkflowSession s(petnav::testing::fast_session_config(), clock.fn());
  CHECK(s.state()[WorkflowStep::DataLoading] == StepStatus::Pending);

  CHECK(error_kind([&] { s.run_registration(RegistrationMode::Rigid); }) == SessionError::Kind::Precondition);
  CHECK(error_kind([&] { (void)s.guidance_tick(); }) == SessionError::Kind::Gating);
  CHECK(error_kind([&] { s.stop_guidance(); }) == SessionError::Kind::Precondition);
  CHECK(error_kind([&] { s.set_plan(Vec3(0, 0, 0), Vec3(0, 0, 10)); }) == SessionError::Kind::Precondition);
  CHECK(error_kind([&] { s.record_fiducial(Vec3::Zero()); }) == SessionError::Kind::Precondition);
  CHECK(error_kind([&] { (void)s.run_calibration(); }) == SessionError::Kind::Precondition);

  const auto & f = phantom_files();
  CHECK(error_kind([&] { s.set_volumes(f.ct, f.dir / "missing.nrrd", f.ict); }) == SessionError::Kind::LoadFailed);
  CHECK(s.state()[WorkflowStep::DataLoading] == StepStatus::Pending);

  s.set_volumes(f.ct, f.pet, f.ict);
  CHECK(s.state().done(WorkflowStep::DataLoading));
  CHECK(error_kind([&] { s.set_plan(Vec3(0, 0, 0), Vec3(0, 0, 0.5)); }) == SessionError::Kind::InvalidInput);
  CHECK_FALSE(s.plan().has_value());

  CHECK_THROWS_AS(registration_mode_from_string("affine"), SessionError);
  CHECK(registration_mode_from_string("deformable") == RegistrationMode::Deformable);
}

TEST_CASE("session: full procedure, persistence and cascades")
{
  const auto &  f = phantom_files();
  ManualClock   clock;
  WorkflowSession s(petnav::testing::fast_session_config(), clock.fn());
  PoseGenerator gen(f.config);

  s.set_volumes(f.ct, f.pet, f.ict);
  const RegistrationRecord reg = s.run_registration(RegistrationMode::Rigid);
  CHECK(s.state().done(WorkflowStep::Registration));
  CHECK(reg.rigid.final_mi >= reg.rigid.initial_mi);
  // Fixed = interventional, moving = comp CT: the record maps back through the offset.
  const auto lesion_back = reg.mapping().map(f.truth.lesion_interventional);
  REQUIRE(lesion_back.has_value());
  CHECK((*lesion_back - f.truth.lesion_comp_ct).norm() < 1.5);

  // Nothing listens on this port; poses come in through feed_pose.
  s.connect_tracking("127.0.0.1", 1);
  CHECK(s.state()[WorkflowStep::Tracking] == StepStatus::InProgress);

  SUBCASE("stale and missing poses are rejected for fiducials")
  {
    CHECK(error_kind([&] { s.record_fiducial(Vec3::Zero()); }) == SessionError::Kind::Precondition);
    s.feed_pose(gen.pose_for_tracker_tip(Vec3::Zero(), Mat3::Identity(), clock.now() - 2.0));
    CHECK(error_kind([&] { s.record_fiducial(Vec3::Zero()); }) == SessionError::Kind::StalePose);
    CHECK(s.fiducials().empty());
    CHECK(s.state().done(WorkflowStep::Tracking));
    CHECK(error_kind([&] { s.record_fiducial(Vec3(NAN, 0, 0)); }) == SessionError::Kind::InvalidInput);
  }

  SUBCASE("calibrate, register the patient, plan, guide, save")
  {
    s.begin_calibration();
    std::vector<PoseSample> pivots;
    const Vec3              pivot(2.0, -1.0, 3.0);
    for (const Mat3 & r : pivot_rotations(60, 0.6, 5))
      pivots.push_back(gen.pose_for_tracker_tip(pivot, r, clock.now()));
    s.feed_pose(pivots.back()); // first pose marks tracking complete
    s.add_calibration_poses(pivots);
    const PivotResult cal = s.run_calibration();
    CHECK((cal.tip_offset - f.config.tip_offset).norm() < 1e-9);
    CHECK((s.tip_offset() - f.config.tip_offset).norm() < 1e-9);
    CHECK(s.state().done(WorkflowStep::ToolCalibration));

    const RigidTransform to_tracker = f.truth.tracker_to_image.inverse();
    for (std::size_t i = 0; i < 3; ++i)
    {
      clock.advance(2.0);
      hold_tip(s, gen, clock, to_tracker.apply(f.truth.fiducials[i].image_point));
      const FiducialPairRecord rec = s.record_fiducial(f.truth.fiducials[i].image_point, f.truth.fiducials[i].label);
      CHECK(rec.n_poses_averaged == 5);
    }
    CHECK(s.state()[WorkflowStep::PatientRegistration] == StepStatus::InProgress);
    CHECK_FALSE(s.patient_registration().has_value());

    clock.advance(2.0);
    hold_tip(s, gen, clock, to_tracker.apply(f.truth.fiducials[3].image_point));
    s.record_fiducial(f.truth.fiducials[3].image_point);
    CHECK(s.state().done(WorkflowStep::PatientRegistration));
    REQUIRE(s.patient_registration().has_value());
    CHECK(s.patient_registration()->rmse < 1e-9);
    CHECK(s.fiducials()[3].pair.label == "F4");

    const Vec3 target = f.truth.lesion_interventional;
    const Vec3 entry = target + Vec3(0.0, -50.0, 0.0);
    s.set_plan(entry, target);
    CHECK(s.state().done(WorkflowStep::PathPlanning));

    // Tip halfway along the plan.
    const Vec3 mid = 0.5 * (entry + target);
    s.feed_pose(gen.pose_for_tracker_tip(to_tracker.apply(mid), Mat3::Identity(), clock.now()));
    GuidanceState g = s.guidance_tick();
    CHECK(g.valid);
    CHECK(g.depth_remaining == doctest::Approx(25.0).epsilon(1e-6));
    CHECK(g.lateral_deviation < 1e-6);
    CHECK(s.state()[WorkflowStep::Guidance] == StepStatus::InProgress);

    clock.advance(0.6);
    g = s.guidance_tick();
    CHECK_FALSE(g.valid);
    CHECK(g.pose_age == doctest::Approx(0.6));
    CHECK(g.depth_remaining == doctest::Approx(25.0).epsilon(1e-6));

    // Round trip through a file.
    const auto path1 = f.dir / "session_a.json";
    const auto path2 = f.dir / "session_b.json";
    s.save(path1);
    const auto loaded = WorkflowSession::load(path1, clock.fn());
    loaded->save(path2);
    CHECK(slurp(path1) == slurp(path2));
    CHECK(loaded->id() == s.id());

    const WorkflowState ls = loaded->state();
    CHECK(ls[WorkflowStep::Tracking] == StepStatus::Pending);
    CHECK(ls[WorkflowStep::Guidance] == StepStatus::Pending);
    CHECK(ls.done(WorkflowStep::PatientRegistration));
    CHECK(ls.done(WorkflowStep::PathPlanning));
    CHECK(loaded->fiducials().size() == 4);
    CHECK((loaded->tip_offset() - s.tip_offset()).norm() == 0.0);
    CHECK(loaded->plan()->target == s.plan()->target);
    REQUIRE(loaded->registration().has_value());
    CHECK(loaded->registration()->rigid.final_transform.translation == reg.rigid.final_transform.translation);
    CHECK(error_kind([&] { (void)loaded->guidance_tick(); }) == SessionError::Kind::Gating);

    // A newer schema is refused rather than guessed at.
    auto doc = nlohmann::json::parse(slurp(path1));
    doc["schema_version"] = kSessionSchemaVersion + 1;
    CHECK(error_kind([&] { (void)WorkflowSession::deserialize(doc.dump()); }) == SessionError::Kind::SchemaVersion);
    doc.erase("schema_version");
    CHECK(error_kind([&] { (void)WorkflowSession::deserialize(doc.dump()); }) == SessionError::Kind::SchemaVersion);
    CHECK_THROWS_AS(WorkflowSession::deserialize("{not json"), SessionError);
    CHECK(error_kind([&] { (void)WorkflowSession::load(f.dir / "nope.json"); }) == SessionError::Kind::Io);

    // Reloading volumes drops every image-derived artifact.
    s.set_volumes(f.ct, f.pet, f.ict);
    CHECK_FALSE(s.registration().has_value());
    CHECK_FALSE(s.plan().has_value());
    CHECK(s.fiducials().empty());
    CHECK_FALSE(s.patient_registration().has_value());
    CHECK(s.state()[WorkflowStep::Guidance] == StepStatus::Pending);
    CHECK(s.state().done(WorkflowStep::ToolCalibration));

    const auto log = s.events();
    REQUIRE(log.size() > 10);
    for (std::size_t i = 1; i < log.size(); ++i)
      CHECK(log[i].seq > log[i - 1].seq);
  }

  SUBCASE("skipping calibration zeroes the tip offset")
  {
    s.feed_pose(gen.pose_for_tracker_tip(Vec3::Zero(), Mat3::Identity(), clock.now()));
    s.begin_calibration();
    CHECK(error_kind([&] { (void)s.run_calibration(); }) == SessionError::Kind::Calibration);
    CHECK(s.state()[WorkflowStep::ToolCalibration] == StepStatus::InProgress);
    s.skip_calibration();
    CHECK(s.state()[WorkflowStep::ToolCalibration] == StepStatus::Skipped);
    CHECK(s.tip_offset() == Vec3::Zero());
    REQUIRE(s.calibration().has_value());
    CHECK(s.calibration()->skipped);
  }

  SUBCASE("a bad calibration pose is rejected")
  {
    PoseSample bad;
    bad.rotation = 2.0 * Mat3::Identity();
    CHECK(error_kind([&] { s.add_calibration_poses({ bad }); }) == SessionError::Kind::InvalidInput);
  }

  SUBCASE("disconnect returns tracking to pending")
  {
    s.feed_pose(gen.pose_for_tracker_tip(Vec3::Zero(), Mat3::Identity(), clock.now()));
    CHECK_NOTHROW(s.skip_calibration());
    CHECK(s.state().done(WorkflowStep::Tracking));
    s.disconnect_tracking();
    CHECK(s.state()[WorkflowStep::Tracking] == StepStatus::Pending);
    CHECK_FALSE(s.tracker_connected());
  }
  s.disconnect_tracking();
}

TEST_CASE("session: status document")
{
  ManualClock     clock;
  WorkflowSession s({}, clock.fn());
  const auto      j = nlohmann::json::parse(s.status_json());
  CHECK(j.contains("steps"));
  CHECK(j.at("steps").size() == kStepCount);
  CHECK(j.dump().find("DATA_LOADING") != std::string::npos);
}

TEST_CASE("session: config json round trip")
{
  SessionConfig c;
  c.registration.bins = 48;
  c.fiducial_dwell_seconds = 0.75;
  c.pivot.min_poses = 30;
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK(real_from_json(real_json(0.1)) == 0.1);
  CHECK(vec3_from_json(vec3_json(Vec3(1e-300, -2.5, 3))) == Vec3(1e-300, -2.5, 3));
}
