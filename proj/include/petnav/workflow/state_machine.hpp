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

// Step bookkeeping for the seven-step procedure, kept free of I/O so the
// dependency rules can be exercised exhaustively.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace petnav::workflow
{

enum class WorkflowStep
{
  DataLoading,
  Registration,
  Tracking,
  ToolCalibration,
  PatientRegistration,
  PathPlanning,
  Guidance
};

inline constexpr std::size_t kStepCount = 7;
inline constexpr std::array<WorkflowStep, kStepCount> kAllSteps{
  WorkflowStep::DataLoading,         WorkflowStep::Registration, WorkflowStep::Tracking,
  WorkflowStep::ToolCalibration,     WorkflowStep::PatientRegistration,
  WorkflowStep::PathPlanning,        WorkflowStep::Guidance
};
inline constexpr std::size_t kMinFiducialPairs = 4;

enum class StepStatus
{
  Pending,
  InProgress,
  Complete,
  Skipped
};

const char * to_string(WorkflowStep s);
const char * to_string(StepStatus s);
WorkflowStep step_from_string(const std::string & s);
StepStatus   status_from_string(const std::string & s);

enum class EventKind
{
  VolumesLoaded,
  VolumesFailed,
  RegistrationStarted,
  RegistrationSucceeded,
  RegistrationFailed,
  TrackingConnecting,
  FirstPose,
  TrackingDisconnected,
  CalibrationStarted,
  CalibrationSucceeded,
  CalibrationFailed,
  CalibrationSkipped,
  FiducialRecorded,
  PairsCleared,
  PlanSet,
  GuidanceStarted,
  GuidanceStopped,
  SessionRestored
};

inline constexpr std::size_t kEventKindCount = 18;
const char * to_string(EventKind k);

struct Event
{
  EventKind kind;
  bool      landmark_fit_ok = true; // FiducialRecorded: did the fit over all pairs succeed
};

struct WorkflowState
{
  std::array<StepStatus, kStepCount> steps{};
  std::size_t                        pairs = 0;

  StepStatus
  operator[](WorkflowStep s) const noexcept
  {
    return steps[static_cast<std::size_t>(s)];
  }
  StepStatus &
  operator[](WorkflowStep s) noexcept
  {
    return steps[static_cast<std::size_t>(s)];
  }

  bool done(WorkflowStep s) const noexcept { return (*this)[s] == StepStatus::Complete; }

  /** The four steps guidance depends on are complete. */
  bool guidance_ready() const noexcept;

  friend bool operator==(const WorkflowState &, const WorkflowState &) = default;
};

/** Artifacts the session must drop as a consequence of a transition. */
struct Invalidation
{
  bool registration = false;
  bool pairs = false;
  bool plan = false;
  bool calibration = false;
};

struct Transition
{
  bool                     accepted = false;
  std::string              reason; // why a rejected event was refused
  WorkflowState            next;
  Invalidation             invalidate;
  std::vector<std::string> notes; // side effects worth logging
};

/**
 * Applies one event. Rejected events leave the state untouched. After
 * every accepted event, guidance falls back to pending whenever one of
 * its prerequisites is no longer complete.
 */
Transition apply_event(const WorkflowState & s, const Event & e);

/** Invariants every reachable state satisfies; returns the first violation or empty. */
std::string check_invariants(const WorkflowState & s);

} // namespace petnav::workflow
