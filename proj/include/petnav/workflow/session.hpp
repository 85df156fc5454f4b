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

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "petnav/guidance.hpp"
#include "petnav/intensity_registration.hpp"
#include "petnav/landmark_registration.hpp"
#include "petnav/pivot_calibration.hpp"
#include "petnav/volume.hpp"
#include "petnav/workflow/state_machine.hpp"

namespace petnav::igtl
{
class TrackerClient;
}

namespace petnav::workflow
{

inline constexpr int kSessionSchemaVersion = 1;

class SessionError : public std::runtime_error
{
public:
  enum class Kind
  {
    Precondition, // step dependencies not met
    Gating,       // guidance prerequisites missing
    StalePose,
    LoadFailed,
    InvalidInput,
    Calibration,
    Registration,
    Io,
    SchemaVersion
  };

  SessionError(Kind kind, const std::string & what)
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

/** Wall clock in seconds since the Unix epoch. */
double wall_clock_seconds();

using Clock = std::function<double()>;

/**
 * Latest-pose slot written by the tracking client. Keeps a short history
 * for dwell averaging and an optional capture list for pivot calibration.
 */
class PoseSlot
{
public:
  explicit PoseSlot(std::size_t history = 1024);

  void push(const PoseSample & p);

  std::optional<PoseSample> latest() const;
  /** Poses with timestamp >= t, oldest first. */
  std::vector<PoseSample> since(double t) const;
  std::uint64_t           count() const;
  bool                    wait_for_count(std::uint64_t n, std::chrono::milliseconds timeout) const;

  void                    set_capture(bool on);
  std::vector<PoseSample> take_captured();
  void                    reset();

private:
  mutable std::mutex              m_Mutex;
  mutable std::condition_variable m_Cv;
  std::size_t                     m_HistoryLimit;
  std::deque<PoseSample>          m_History;
  std::uint64_t                   m_Count = 0;
  bool                            m_Capture = false;
  std::vector<PoseSample>         m_Captured;
};

struct SessionConfig
{
  RegistrationConfig   registration;
  PivotReadinessPolicy pivot;
  double               fiducial_dwell_seconds = 1.0; // tip averaging window for a fiducial touch
  std::size_t          pose_history = 1024;

  friend bool operator==(const SessionConfig & a, const SessionConfig & b);
};

enum class RegistrationMode
{
  Rigid,
  Deformable
};

const char *     to_string(RegistrationMode m);
RegistrationMode registration_mode_from_string(const std::string & s);

struct RegistrationRecord
{
  RegistrationMode                  mode = RegistrationMode::Rigid;
  RegistrationReport                rigid;      // interventional world -> comp-CT world
  std::optional<RegistrationReport> deformable; // grid refinement on top of rigid

  /** Interventional world -> comp-CT (and PET) world. */
  SpatialMapping mapping() const;
};

struct VolumeRecord
{
  std::string  path;
  Modality     modality = Modality::CT;
  Volume::Dims dims{};
  Vec3         spacing = Vec3::Ones();
  Vec3         origin = Vec3::Zero();
};

struct CalibrationRecord
{
  bool        skipped = false;
  PivotResult result; // tip_offset is zero when skipped
};

struct FiducialPairRecord
{
  LandmarkPair pair;
  std::size_t  n_poses_averaged = 0;
};

struct LogEntry
{
  std::uint64_t seq = 0;
  double        time = 0.0;
  std::string   kind;
  std::string   message;
};

struct TrackerEndpoint
{
  std::string   host;
  std::uint16_t port = 0;
};

/** Volumes used by the session, shared so readers can hold them across mutations. */
struct LoadedVolumes
{
  std::shared_ptr<const Volume> comp_ct;
  std::shared_ptr<const Volume> comp_pet;
  std::shared_ptr<const Volume> interventional_ct;
};

/** Everything a session file holds. */
struct SessionDocument
{
  int                                       schema_version = kSessionSchemaVersion;
  std::string                               id;
  SessionConfig                             config;
  WorkflowState                             state;
  std::array<VolumeRecord, 3>               volumes; // comp CT, comp PET, interventional CT
  std::optional<RegistrationRecord>         registration;
  std::optional<TrackerEndpoint>            endpoint;
  std::optional<CalibrationRecord>          calibration;
  std::vector<FiducialPairRecord>           pairs;
  std::optional<LandmarkRegistrationResult> patient_registration;
  std::optional<BiopsyPlan>                 plan;
  std::vector<LogEntry>                     log;
};

/**
 * One navigation session. Mutating calls are serialized on a single
 * lock; the tracking client only touches the PoseSlot.
 */
class WorkflowSession
{
public:
  explicit WorkflowSession(SessionConfig config = {}, Clock clock = wall_clock_seconds);
  ~WorkflowSession();

  WorkflowSession(const WorkflowSession &) = delete;
  WorkflowSession & operator=(const WorkflowSession &) = delete;

  const std::string & id() const noexcept { return m_Id; }
  const SessionConfig & config() const noexcept { return m_Config; }
  /** Current time on the session clock. */
  double now() const { return m_Clock(); }

  // step 1
  void set_volumes(const std::filesystem::path & comp_ct,
                   const std::filesystem::path & comp_pet,
                   const std::filesystem::path & interventional_ct);
  // step 2
  RegistrationRecord run_registration(RegistrationMode mode);
  // step 3
  void connect_tracking(const std::string & host, std::uint16_t port);
  void disconnect_tracking();
  /** Delivers a pose as if it came from the tracker (used by the client callback). */
  void feed_pose(const PoseSample & p);
  bool wait_for_pose_count(std::uint64_t n, std::chrono::milliseconds timeout) const;
  // step 4
  void        begin_calibration();
  void        add_calibration_poses(const std::vector<PoseSample> & poses);
  PivotResult run_calibration();
  void        skip_calibration();
  // step 5
  FiducialPairRecord record_fiducial(const Vec3 & image_point, const std::string & label = {});
  void               clear_fiducials();
  // step 6
  BiopsyPlan set_plan(const Vec3 & entry, const Vec3 & target);
  // step 7
  GuidanceState guidance_tick();
  GuidanceState guidance_tick(double now);
  void          stop_guidance();

  WorkflowState                             state() const;
  std::optional<RegistrationRecord>         registration() const;
  std::optional<CalibrationRecord>          calibration() const;
  Vec3                                      tip_offset() const;
  std::vector<FiducialPairRecord>           fiducials() const;
  std::optional<LandmarkRegistrationResult> patient_registration() const;
  std::optional<BiopsyPlan>                 plan() const;
  std::vector<LogEntry>                     events() const;
  LoadedVolumes                             volumes() const;
  std::optional<TrackerEndpoint>            tracker_endpoint() const;
  bool                                      tracker_connected() const;
  std::optional<GuidanceState>              last_guidance() const;

  /** Snapshot of all persistent fields; with for_file, live steps read as pending. */
  SessionDocument document(bool for_file) const;

  /** JSON status document served by GET /session. */
  std::string status_json() const;

  /** Canonical JSON; TRACKING and GUIDANCE are always written as pending. */
  std::string serialize() const;
  void        save(const std::filesystem::path & path) const;

  static std::unique_ptr<WorkflowSession> deserialize(const std::string & text, Clock clock = wall_clock_seconds);
  static std::unique_ptr<WorkflowSession> load(const std::filesystem::path & path, Clock clock = wall_clock_seconds);

private:
  Transition commit(const Event & e, const std::string & message = {});
  void       log(const std::string & kind, const std::string & message);
  void       sync_tracking_locked();
  void       drop_invalidated(const Invalidation & inv);
  void       ensure_volumes_locked();
  Vec3       tip_offset_locked() const;

  SessionConfig                          m_Config;
  Clock                                  m_Clock;
  std::string                            m_Id;
  mutable std::recursive_mutex           m_Mutex;
  WorkflowState                          m_State;
  std::array<VolumeRecord, 3>            m_VolumeRecords;
  LoadedVolumes                          m_Volumes;
  std::optional<RegistrationRecord>      m_Registration;
  std::optional<TrackerEndpoint>         m_Endpoint;
  std::optional<CalibrationRecord>       m_Calibration;
  PivotBuffer                            m_PivotBuffer;
  std::vector<FiducialPairRecord>        m_Pairs;
  std::optional<LandmarkRegistrationResult> m_PatientRegistration;
  std::optional<BiopsyPlan>              m_Plan;
  std::vector<LogEntry>                  m_Log;
  std::optional<GuidanceState>           m_LastValid;
  std::optional<GuidanceState>           m_LastTick;
  std::shared_ptr<PoseSlot>              m_Slot;
  std::unique_ptr<igtl::TrackerClient>   m_Client;
};

std::string new_session_id();

} // namespace petnav::workflow
