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

#include <random>
#include <vector>
#include <stdexcept>

#include "petnav/workflow/state_machine.hpp"

using namespace petnav::workflow;

namespace
{

using S = WorkflowStep;
using St = StepStatus;

WorkflowState
run(std::initializer_list<Event> events)
{
  WorkflowState s;
  for (const Event & e : events)
  {
    const Transition t = apply_event(s, e);
    REQUIRE_MESSAGE(t.accepted, to_string(e.kind), ": ", t.reason);
    s = t.next;
  }
  return s;
}

Event
ev(EventKind k, bool fit_ok = true)
{
  return { k, fit_ok };
}

// Everything up to a running guidance display.
WorkflowState
ready_state()
{
  return run({ ev(EventKind::VolumesLoaded), ev(EventKind::RegistrationStarted), ev(EventKind::RegistrationSucceeded),
               ev(EventKind::TrackingConnecting), ev(EventKind::FirstPose), ev(EventKind::CalibrationStarted),
               ev(EventKind::CalibrationSucceeded), ev(EventKind::FiducialRecorded),
               ev(EventKind::FiducialRecorded), ev(EventKind::FiducialRecorded), ev(EventKind::FiducialRecorded),
               ev(EventKind::PlanSet) });
}

} // namespace

TEST_CASE("state machine: names round trip")
{
  for (auto step : kAllSteps)
    CHECK(step_from_string(to_string(step)) == step);
  for (auto st : { St::Pending, St::InProgress, St::Complete, St::Skipped })
    CHECK(status_from_string(to_string(st)) == st);
  CHECK_THROWS_AS(step_from_string("GUIDE"), std::invalid_argument);
  CHECK_THROWS_AS(status_from_string("done"), std::invalid_argument);
  CHECK(std::string(to_string(S::PatientRegistration)) == "PATIENT_REGISTRATION");
}

TEST_CASE("state machine: happy path")
{
  WorkflowState s;
  for (auto step : kAllSteps)
    CHECK(s[step] == St::Pending);

  s = ready_state();
  CHECK(s.guidance_ready());
  CHECK(s.pairs == 4);
  CHECK(s[S::Guidance] == St::Pending);

  Transition t = apply_event(s, ev(EventKind::GuidanceStarted));
  REQUIRE(t.accepted);
  CHECK(t.next[S::Guidance] == St::InProgress);
  t = apply_event(t.next, ev(EventKind::GuidanceStopped));
  REQUIRE(t.accepted);
  CHECK(t.next[S::Guidance] == St::Complete);
  CHECK(check_invariants(t.next).empty());
}

TEST_CASE("state machine: gating")
{
  SUBCASE("registration before loading is refused")
  {
    const Transition t = apply_event(WorkflowState{}, ev(EventKind::RegistrationStarted));
    CHECK_FALSE(t.accepted);
    CHECK_FALSE(t.reason.empty());
    CHECK(t.next == WorkflowState{});
  }
  SUBCASE("fiducials need tracking")
  {
    const WorkflowState s = run({ ev(EventKind::VolumesLoaded) });
    CHECK_FALSE(apply_event(s, ev(EventKind::FiducialRecorded)).accepted);
  }
  SUBCASE("fiducials are refused while calibration runs")
  {
    const WorkflowState s = run({ ev(EventKind::VolumesLoaded), ev(EventKind::TrackingConnecting),
                                  ev(EventKind::FirstPose), ev(EventKind::CalibrationStarted) });
    CHECK_FALSE(apply_event(s, ev(EventKind::FiducialRecorded)).accepted);
  }
  SUBCASE("three pairs do not complete patient registration")
  {
    const WorkflowState s =
      run({ ev(EventKind::VolumesLoaded), ev(EventKind::TrackingConnecting), ev(EventKind::FirstPose),
            ev(EventKind::CalibrationSkipped), ev(EventKind::FiducialRecorded), ev(EventKind::FiducialRecorded),
            ev(EventKind::FiducialRecorded) });
    CHECK(s[S::PatientRegistration] == St::InProgress);
    const WorkflowState four = apply_event(s, ev(EventKind::FiducialRecorded)).next;
    CHECK(four[S::PatientRegistration] == St::Complete);
    // A failed fit keeps the step open even with enough pairs.
    const WorkflowState bad = apply_event(four, ev(EventKind::FiducialRecorded, false)).next;
    CHECK(bad[S::PatientRegistration] == St::InProgress);
  }
  SUBCASE("pending calibration is skipped implicitly by the first fiducial")
  {
    const WorkflowState s =
      run({ ev(EventKind::VolumesLoaded), ev(EventKind::TrackingConnecting), ev(EventKind::FirstPose) });
    const Transition t = apply_event(s, ev(EventKind::FiducialRecorded));
    REQUIRE(t.accepted);
    CHECK(t.next[S::ToolCalibration] == St::Skipped);
    CHECK(t.invalidate.calibration);
    CHECK_FALSE(t.notes.empty());
  }
  SUBCASE("guidance waits for each prerequisite")
  {
    const WorkflowState ready = ready_state();
    for (auto step : { S::Registration, S::Tracking, S::PatientRegistration, S::PathPlanning })
    {
      WorkflowState s = ready;
      s[step] = St::InProgress;
      const Transition t = apply_event(s, ev(EventKind::GuidanceStarted));
      CHECK_FALSE(t.accepted);
      CHECK(t.next == s);
    }
    // Tool calibration is optional.
    WorkflowState s = ready;
    s[S::ToolCalibration] = St::Skipped;
    CHECK(apply_event(s, ev(EventKind::GuidanceStarted)).accepted);
  }
  SUBCASE("first pose needs a connection")
  {
    CHECK_FALSE(apply_event(WorkflowState{}, ev(EventKind::FirstPose)).accepted);
  }
}

TEST_CASE("state machine: cascades")
{
  const WorkflowState running = apply_event(ready_state(), ev(EventKind::GuidanceStarted)).next;

  SUBCASE("re-registration clears the plan and stops guidance")
  {
    const Transition t = apply_event(running, ev(EventKind::RegistrationStarted));
    REQUIRE(t.accepted);
    CHECK(t.invalidate.plan);
    CHECK(t.next[S::PathPlanning] == St::Pending);
    CHECK(t.next[S::Registration] == St::InProgress);
    CHECK(t.next[S::Guidance] == St::Pending);
    CHECK(t.next[S::PatientRegistration] == St::Complete);
  }
  SUBCASE("reloading volumes clears every image-derived artifact")
  {
    const Transition t = apply_event(running, ev(EventKind::VolumesLoaded));
    REQUIRE(t.accepted);
    CHECK(t.invalidate.registration);
    CHECK(t.invalidate.plan);
    CHECK(t.invalidate.pairs);
    CHECK(t.next[S::Registration] == St::Pending);
    CHECK(t.next[S::PatientRegistration] == St::Pending);
    CHECK(t.next.pairs == 0);
    CHECK(t.next[S::Guidance] == St::Pending);
    CHECK(t.next[S::Tracking] == St::Complete);
  }
  SUBCASE("recalibration clears fiducial pairs")
  {
    const Transition t = apply_event(running, ev(EventKind::CalibrationStarted));
    REQUIRE(t.accepted);
    CHECK(t.invalidate.pairs);
    CHECK(t.next.pairs == 0);
    CHECK(t.next[S::Guidance] == St::Pending);
  }
  SUBCASE("disconnect stops guidance")
  {
    const Transition t = apply_event(running, ev(EventKind::TrackingDisconnected));
    CHECK(t.next[S::Tracking] == St::Pending);
    CHECK(t.next[S::Guidance] == St::Pending);
  }
  SUBCASE("restore resets live steps")
  {
    WorkflowState s = running;
    s[S::ToolCalibration] = St::InProgress;
    s.pairs = 0;
    s[S::PatientRegistration] = St::Pending;
    const Transition t = apply_event(s, ev(EventKind::SessionRestored));
    CHECK(t.next[S::Tracking] == St::Pending);
    CHECK(t.next[S::Guidance] == St::Pending);
    CHECK(t.next[S::ToolCalibration] == St::Pending);
  }
}

TEST_CASE("state machine: random event sequences keep every invariant")
{
  // Half the events follow the procedure order, otherwise guidance is
  // practically never reached.
  const std::vector<EventKind> order{
    EventKind::VolumesLoaded,        EventKind::RegistrationStarted, EventKind::RegistrationSucceeded,
    EventKind::TrackingConnecting,   EventKind::FirstPose,           EventKind::CalibrationStarted,
    EventKind::CalibrationSucceeded, EventKind::FiducialRecorded,    EventKind::FiducialRecorded,
    EventKind::FiducialRecorded,     EventKind::FiducialRecorded,    EventKind::PlanSet,
    EventKind::GuidanceStarted,      EventKind::GuidanceStopped
  };
  std::mt19937                               rng(2024);
  std::uniform_int_distribution<std::size_t> kind(0, kEventKindCount - 1);
  std::bernoulli_distribution                fit(0.9);
  std::bernoulli_distribution                scripted(0.5);
  int                                        started = 0;
  for (int seq = 0; seq < 3000; ++seq)
  {
    WorkflowState s;
    std::size_t   next = 0;
    for (int step = 0; step < 40; ++step)
    {
      const EventKind  k = scripted(rng) ? order[next++ % order.size()] : static_cast<EventKind>(kind(rng));
      const Event      e{ k, fit(rng) };
      const Transition t = apply_event(s, e);
      if (!t.accepted)
      {
        REQUIRE(t.next == s);
        REQUIRE_FALSE(t.reason.empty());
        continue;
      }
      const std::string bad = check_invariants(t.next);
      REQUIRE_MESSAGE(bad.empty(), bad, " after ", to_string(e.kind));
      // Gating, restated independently of guidance_ready().
      if (t.next[S::Guidance] != St::Pending)
      {
        REQUIRE(t.next[S::Registration] == St::Complete);
        REQUIRE(t.next[S::Tracking] == St::Complete);
        REQUIRE(t.next[S::PatientRegistration] == St::Complete);
        REQUIRE(t.next[S::PathPlanning] == St::Complete);
      }
      if (e.kind == EventKind::GuidanceStarted)
      {
        REQUIRE(s.guidance_ready());
        ++started;
      }
      s = t.next;
    }
  }
  CHECK(started > 0);
}
