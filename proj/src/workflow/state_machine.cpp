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
#include "petnav/workflow/state_machine.hpp"

#include <stdexcept>

namespace petnav::workflow
{

namespace
{

using S = WorkflowStep;
using St = StepStatus;

Transition
reject(const WorkflowState & s, std::string why)
{
  Transition t;
  t.accepted = false;
  t.reason = std::move(why);
  t.next = s;
  return t;
}

void
reset_patient_registration(Transition & t)
{
  if (t.next.pairs > 0 || t.next[S::PatientRegistration] != St::Pending)
  {
    t.invalidate.pairs = true;
    t.notes.emplace_back("fiducial pairs cleared");
  }
  t.next.pairs = 0;
  t.next[S::PatientRegistration] = St::Pending;
}

void
reset_plan(Transition & t)
{
  if (t.next[S::PathPlanning] != St::Pending)
  {
    t.invalidate.plan = true;
    t.notes.emplace_back("path plan cleared");
  }
  t.next[S::PathPlanning] = St::Pending;
}

void
reset_registration(Transition & t)
{
  if (t.next[S::Registration] != St::Pending)
  {
    t.invalidate.registration = true;
    t.notes.emplace_back("image registration cleared");
  }
  t.next[S::Registration] = St::Pending;
}

} // namespace

const char *
to_string(WorkflowStep s)
{
  switch (s)
  {
    case S::DataLoading:
      return "DATA_LOADING";
    case S::Registration:
      return "REGISTRATION";
    case S::Tracking:
      return "TRACKING";
    case S::ToolCalibration:
      return "TOOL_CALIBRATION";
    case S::PatientRegistration:
      return "PATIENT_REGISTRATION";
    case S::PathPlanning:
      return "PATH_PLANNING";
    case S::Guidance:
      return "GUIDANCE";
  }
  return "?";
}

const char *
to_string(StepStatus s)
{
  switch (s)
  {
    case St::Pending:
      return "pending";
    case St::InProgress:
      return "in_progress";
    case St::Complete:
      return "complete";
    case St::Skipped:
      return "skipped";
  }
  return "?";
}

WorkflowStep
step_from_string(const std::string & s)
{
  for (auto step : kAllSteps)
    if (s == to_string(step))
      return step;
  throw std::invalid_argument("unknown workflow step '" + s + "'");
}

StepStatus
status_from_string(const std::string & s)
{
  for (auto st : { St::Pending, St::InProgress, St::Complete, St::Skipped })
    if (s == to_string(st))
      return st;
  throw std::invalid_argument("unknown step status '" + s + "'");
}

const char *
to_string(EventKind k)
{
  switch (k)
  {
    case EventKind::VolumesLoaded:
      return "volumes_loaded";
    case EventKind::VolumesFailed:
      return "volumes_failed";
    case EventKind::RegistrationStarted:
      return "registration_started";
    case EventKind::RegistrationSucceeded:
      return "registration_succeeded";
    case EventKind::RegistrationFailed:
      return "registration_failed";
    case EventKind::TrackingConnecting:
      return "tracking_connecting";
    case EventKind::FirstPose:
      return "first_pose";
    case EventKind::TrackingDisconnected:
      return "tracking_disconnected";
    case EventKind::CalibrationStarted:
      return "calibration_started";
    case EventKind::CalibrationSucceeded:
      return "calibration_succeeded";
    case EventKind::CalibrationFailed:
      return "calibration_failed";
    case EventKind::CalibrationSkipped:
      return "calibration_skipped";
    case EventKind::FiducialRecorded:
      return "fiducial_recorded";
    case EventKind::PairsCleared:
      return "pairs_cleared";
    case EventKind::PlanSet:
      return "plan_set";
    case EventKind::GuidanceStarted:
      return "guidance_started";
    case EventKind::GuidanceStopped:
      return "guidance_stopped";
    case EventKind::SessionRestored:
      return "session_restored";
  }
  return "?";
}

bool
WorkflowState::guidance_ready() const noexcept
{
  return done(S::Registration) && done(S::Tracking) && done(S::PatientRegistration) && done(S::PathPlanning);
}

Transition
apply_event(const WorkflowState & s, const Event & e)
{
  Transition t;
  t.accepted = true;
  t.next = s;
  WorkflowState & n = t.next;

  switch (e.kind)
  {
    case EventKind::VolumesLoaded:
    case EventKind::VolumesFailed:
      n[S::DataLoading] = e.kind == EventKind::VolumesLoaded ? St::Complete : St::Pending;
      reset_registration(t);
      reset_plan(t);
      reset_patient_registration(t);
      break;

    case EventKind::RegistrationStarted:
      if (!s.done(S::DataLoading))
        return reject(s, "registration needs loaded volumes");
      if (s.done(S::Registration))
      {
        t.notes.emplace_back("re-registration");
        reset_plan(t);
      }
      n[S::Registration] = St::InProgress;
      break;

    case EventKind::RegistrationSucceeded:
    case EventKind::RegistrationFailed:
      if (s[S::Registration] != St::InProgress)
        return reject(s, "no registration is running");
      // a failed run stays in progress so it can be retried
      n[S::Registration] = e.kind == EventKind::RegistrationSucceeded ? St::Complete : St::InProgress;
      break;

    case EventKind::TrackingConnecting:
      n[S::Tracking] = St::InProgress;
      break;

    case EventKind::FirstPose:
      if (s[S::Tracking] == St::Complete)
        break;
      if (s[S::Tracking] != St::InProgress)
        return reject(s, "no tracker connection is open");
      n[S::Tracking] = St::Complete;
      break;

    case EventKind::TrackingDisconnected:
      n[S::Tracking] = St::Pending;
      break;

    case EventKind::CalibrationStarted:
      n[S::ToolCalibration] = St::InProgress;
      reset_patient_registration(t);
      break;

    case EventKind::CalibrationSucceeded:
      if (s[S::ToolCalibration] != St::InProgress)
        return reject(s, "no calibration is running");
      n[S::ToolCalibration] = St::Complete;
      // tracker-side fiducial points were captured with the old tip offset
      reset_patient_registration(t);
      break;

    case EventKind::CalibrationFailed:
      if (s[S::ToolCalibration] != St::InProgress)
        return reject(s, "no calibration is running");
      break;

    case EventKind::CalibrationSkipped:
      if (s[S::ToolCalibration] != St::Skipped)
        reset_patient_registration(t);
      n[S::ToolCalibration] = St::Skipped;
      break;

    case EventKind::FiducialRecorded:
      if (!s.done(S::Tracking))
        return reject(s, "fiducial capture needs an active tracking stream");
      if (!s.done(S::DataLoading))
        return reject(s, "fiducial capture needs the interventional CT");
      if (s[S::ToolCalibration] == St::InProgress)
        return reject(s, "tool calibration is in progress");
      if (s[S::ToolCalibration] == St::Pending)
      {
        n[S::ToolCalibration] = St::Skipped;
        t.invalidate.calibration = true;
        t.notes.emplace_back("tool calibration skipped implicitly; tip offset is zero");
      }
      ++n.pairs;
      n[S::PatientRegistration] =
        (n.pairs >= kMinFiducialPairs && e.landmark_fit_ok) ? St::Complete : St::InProgress;
      break;

    case EventKind::PairsCleared:
      reset_patient_registration(t);
      break;

    case EventKind::PlanSet:
      if (!s.done(S::DataLoading))
        return reject(s, "planning needs loaded volumes");
      n[S::PathPlanning] = St::Complete;
      break;

    case EventKind::GuidanceStarted:
      if (!s.guidance_ready())
        return reject(s, "guidance needs registration, tracking, patient registration and a plan");
      n[S::Guidance] = St::InProgress;
      break;

    case EventKind::GuidanceStopped:
      if (s[S::Guidance] != St::InProgress)
        return reject(s, "guidance is not running");
      n[S::Guidance] = St::Complete;
      break;

    case EventKind::SessionRestored:
      n[S::Tracking] = St::Pending;
      n[S::Guidance] = St::Pending;
      if (n[S::ToolCalibration] == St::InProgress)
        n[S::ToolCalibration] = St::Pending;
      break;
  }

  if (n[S::Guidance] != St::Pending && !n.guidance_ready())
  {
    n[S::Guidance] = St::Pending;
    t.notes.emplace_back("guidance stopped: a prerequisite is no longer complete");
  }
  return t;
}

std::string
check_invariants(const WorkflowState & s)
{
  if (s[S::Guidance] == St::InProgress && !s.guidance_ready())
    return "GUIDANCE in progress without its prerequisites";
  if (s[S::Guidance] == St::Complete && !s.guidance_ready())
    return "GUIDANCE complete without its prerequisites";
  if (s[S::Guidance] == St::Skipped)
    return "GUIDANCE cannot be skipped";
  if (s.done(S::PatientRegistration) && s.pairs < kMinFiducialPairs)
    return "PATIENT_REGISTRATION complete with fewer than four pairs";
  if (!s.done(S::DataLoading) && (s[S::Registration] != St::Pending || s[S::PathPlanning] != St::Pending ||
                                  s[S::PatientRegistration] != St::Pending))
    return "image-dependent step active without loaded volumes";
  for (auto step : kAllSteps)
    if (step != S::ToolCalibration && s[step] == St::Skipped)
      return std::string(to_string(step)) + " cannot be skipped";
  if (s.pairs > 0 && !(s[S::ToolCalibration] == St::Complete || s[S::ToolCalibration] == St::Skipped))
    return "fiducial pairs exist without a settled tip offset";
  return {};
}

} // namespace petnav::workflow
