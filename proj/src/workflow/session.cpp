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
#include "petnav/workflow/session.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "petnav/igtl/tracker.hpp"
#include "petnav/nrrd_io.hpp"
#include "petnav/workflow/json_io.hpp"

namespace petnav::workflow
{

double
wall_clock_seconds()
{
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

std::string
new_session_id()
{
  static std::mutex mu;
  static std::mt19937_64 rng{ std::random_device{}() ^
                              static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()) };
  std::lock_guard lock(mu);
  char            buf[40];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

// ---------------------------------------------------------------- pose slot

PoseSlot::PoseSlot(std::size_t history)
  : m_HistoryLimit(std::max<std::size_t>(history, 1))
{}

void
PoseSlot::push(const PoseSample & p)
{
  {
    std::lock_guard lock(m_Mutex);
    m_History.push_back(p);
    if (m_History.size() > m_HistoryLimit)
      m_History.pop_front();
    if (m_Capture)
      m_Captured.push_back(p);
    ++m_Count;
  }
  m_Cv.notify_all();
}

std::optional<PoseSample>
PoseSlot::latest() const
{
  std::lock_guard lock(m_Mutex);
  if (m_History.empty())
    return std::nullopt;
  return m_History.back();
}

std::vector<PoseSample>
PoseSlot::since(double t) const
{
  std::lock_guard         lock(m_Mutex);
  std::vector<PoseSample> out;
  for (const auto & p : m_History)
    if (p.timestamp >= t)
      out.push_back(p);
  return out;
}

std::uint64_t
PoseSlot::count() const
{
  std::lock_guard lock(m_Mutex);
  return m_Count;
}

bool
PoseSlot::wait_for_count(std::uint64_t n, std::chrono::milliseconds timeout) const
{
  std::unique_lock lock(m_Mutex);
  return m_Cv.wait_for(lock, timeout, [&] { return m_Count >= n; });
}

void
PoseSlot::set_capture(bool on)
{
  std::lock_guard lock(m_Mutex);
  m_Capture = on;
  if (!on)
    m_Captured.clear();
}

std::vector<PoseSample>
PoseSlot::take_captured()
{
  std::lock_guard lock(m_Mutex);
  return std::exchange(m_Captured, {});
}

void
PoseSlot::reset()
{
  std::lock_guard lock(m_Mutex);
  m_History.clear();
  m_Captured.clear();
  m_Capture = false;
}

// ---------------------------------------------------------------- records

bool
operator==(const SessionConfig & a, const SessionConfig & b)
{
  const auto & ra = a.registration;
  const auto & rb = b.registration;
  return ra.bins == rb.bins && ra.sample_stride == rb.sample_stride && ra.accumulation == rb.accumulation &&
         ra.min_overlap_fraction == rb.min_overlap_fraction && ra.pyramid_levels == rb.pyramid_levels &&
         ra.max_sweeps_per_level == rb.max_sweeps_per_level &&
         ra.translation_bracket_mm == rb.translation_bracket_mm && ra.rotation_bracket_rad == rb.rotation_bracket_rad &&
         ra.translation_tolerance_mm == rb.translation_tolerance_mm &&
         ra.rotation_tolerance_rad == rb.rotation_tolerance_rad && ra.grid_spacing_voxels == rb.grid_spacing_voxels &&
         ra.bspline_sample_stride == rb.bspline_sample_stride && ra.bspline_iterations == rb.bspline_iterations &&
         ra.bspline_initial_step_mm == rb.bspline_initial_step_mm &&
         ra.bspline_min_step_mm == rb.bspline_min_step_mm && ra.bspline_fd_step_mm == rb.bspline_fd_step_mm &&
         a.pivot.min_poses == b.pivot.min_poses && a.pivot.min_rotation_diversity == b.pivot.min_rotation_diversity &&
         a.fiducial_dwell_seconds == b.fiducial_dwell_seconds && a.pose_history == b.pose_history;
}

const char *
to_string(RegistrationMode m)
{
  return m == RegistrationMode::Rigid ? "rigid" : "deformable";
}

RegistrationMode
registration_mode_from_string(const std::string & s)
{
  if (s == "rigid")
    return RegistrationMode::Rigid;
  if (s == "deformable")
    return RegistrationMode::Deformable;
  throw SessionError(SessionError::Kind::InvalidInput, "registration mode must be 'rigid' or 'deformable', got '" + s + "'");
}

SpatialMapping
RegistrationRecord::mapping() const
{
  if (deformable)
    return deformable->mapping();
  return rigid.mapping();
}

// ---------------------------------------------------------------- session

WorkflowSession::WorkflowSession(SessionConfig config, Clock clock)
  : m_Config(std::move(config))
  , m_Clock(std::move(clock))
  , m_Id(new_session_id())
  , m_PivotBuffer(m_Config.pivot)
  , m_Slot(std::make_shared<PoseSlot>(m_Config.pose_history))
{
  m_Config.registration.validate();
  if (!(m_Config.fiducial_dwell_seconds >= 0.0))
    throw SessionError(SessionError::Kind::InvalidInput, "fiducial dwell must be nonnegative");
}

WorkflowSession::~WorkflowSession()
{
  if (m_Client)
    m_Client->stop();
}

void
WorkflowSession::log(const std::string & kind, const std::string & message)
{
  LogEntry e;
  e.seq = m_Log.empty() ? 1 : m_Log.back().seq + 1;
  e.time = m_Clock();
  e.kind = kind;
  e.message = message;
  m_Log.push_back(std::move(e));
}

Transition
WorkflowSession::commit(const Event & e, const std::string & message)
{
  Transition t = apply_event(m_State, e);
  if (!t.accepted)
    return t;
  m_State = t.next;
  log(to_string(e.kind), message);
  for (const auto & note : t.notes)
    log("cascade", note);
  drop_invalidated(t.invalidate);
  return t;
}

void
WorkflowSession::drop_invalidated(const Invalidation & inv)
{
  if (inv.registration)
    m_Registration.reset();
  if (inv.plan)
    m_Plan.reset();
  if (inv.pairs)
  {
    m_Pairs.clear();
    m_PatientRegistration.reset();
  }
  if (m_State[WorkflowStep::Guidance] == StepStatus::Pending)
    m_LastValid.reset();
}

void
WorkflowSession::sync_tracking_locked()
{
  if (m_State[WorkflowStep::Tracking] == StepStatus::InProgress && m_Slot->count() > 0)
    commit({ EventKind::FirstPose }, "first pose received");
}

void
WorkflowSession::ensure_volumes_locked()
{
  if (m_Volumes.comp_ct || !m_State.done(WorkflowStep::DataLoading))
    return;
  try
  {
    m_Volumes.comp_ct = std::make_shared<const Volume>(load_volume(m_VolumeRecords[0].path).with_modality(Modality::CT));
    m_Volumes.comp_pet = std::make_shared<const Volume>(load_volume(m_VolumeRecords[1].path).with_modality(Modality::PET));
    m_Volumes.interventional_ct = std::make_shared<const Volume>(
      load_volume(m_VolumeRecords[2].path).with_modality(Modality::InterventionalCT));
  }
  catch (const std::exception & ex)
  {
    m_Volumes = {};
    throw SessionError(SessionError::Kind::LoadFailed, std::string("cannot reload session volumes: ") + ex.what());
  }
}

void
WorkflowSession::set_volumes(const std::filesystem::path & comp_ct,
                             const std::filesystem::path & comp_pet,
                             const std::filesystem::path & interventional_ct)
{
  std::lock_guard lock(m_Mutex);
  const std::array<std::pair<std::filesystem::path, Modality>, 3> inputs{
    std::pair{ comp_ct, Modality::CT }, std::pair{ comp_pet, Modality::PET },
    std::pair{ interventional_ct, Modality::InterventionalCT }
  };
  std::array<std::shared_ptr<const Volume>, 3> loaded;
  for (std::size_t i = 0; i < inputs.size(); ++i)
  {
    try
    {
      loaded[i] = std::make_shared<const Volume>(load_volume(inputs[i].first).with_modality(inputs[i].second));
    }
    catch (const std::exception & ex)
    {
      const std::string msg = std::string("cannot load ") + to_string(inputs[i].second) + " volume '" +
                              inputs[i].first.string() + "': " + ex.what();
      m_Volumes = {};
      commit({ EventKind::VolumesFailed }, msg);
      throw SessionError(SessionError::Kind::LoadFailed, msg);
    }
  }
  for (std::size_t i = 0; i < 3; ++i)
  {
    VolumeRecord & r = m_VolumeRecords[i];
    r.path = inputs[i].first.string();
    r.modality = inputs[i].second;
    r.dims = loaded[i]->dims();
    r.spacing = loaded[i]->spacing();
    r.origin = loaded[i]->origin();
  }
  m_Volumes = { loaded[0], loaded[1], loaded[2] };
  commit({ EventKind::VolumesLoaded }, "volumes loaded: " + m_VolumeRecords[0].path + ", " + m_VolumeRecords[1].path +
                                         ", " + m_VolumeRecords[2].path);
}

RegistrationRecord
WorkflowSession::run_registration(RegistrationMode mode)
{
  std::lock_guard lock(m_Mutex);
  sync_tracking_locked();
  const Transition t = commit({ EventKind::RegistrationStarted }, std::string("mode ") + to_string(mode));
  if (!t.accepted)
    throw SessionError(SessionError::Kind::Precondition, t.reason);
  ensure_volumes_locked();

  RegistrationRecord rec;
  rec.mode = mode;
  try
  {
    rec.rigid = register_rigid_mi(*m_Volumes.interventional_ct, *m_Volumes.comp_ct, RigidTransform::identity(),
                                  m_Config.registration);
    bool ok = rec.rigid.converged;
    if (mode == RegistrationMode::Deformable)
    {
      rec.deformable =
        register_bspline_mi(*m_Volumes.interventional_ct, *m_Volumes.comp_ct, rec.rigid.final_transform, m_Config.registration);
      ok = ok && rec.deformable->final_mi >= rec.rigid.final_mi;
    }
    std::ostringstream msg;
    msg << "MI " << rec.rigid.initial_mi << " -> " << rec.rigid.final_mi << " bits (rigid)";
    if (rec.deformable)
      msg << ", " << rec.deformable->final_mi << " bits (deformable)";
    m_Registration = rec;
    if (ok)
      commit({ EventKind::RegistrationSucceeded }, msg.str());
    else
      commit({ EventKind::RegistrationFailed }, msg.str() + "; optimizer did not converge");
  }
  catch (const std::exception & ex)
  {
    commit({ EventKind::RegistrationFailed }, ex.what());
    throw SessionError(SessionError::Kind::Registration, std::string("registration failed: ") + ex.what());
  }
  return rec;
}

void
WorkflowSession::connect_tracking(const std::string & host, std::uint16_t port)
{
  std::lock_guard lock(m_Mutex);
  if (m_Client)
  {
    m_Client->stop();
    m_Client.reset();
  }
  m_Slot->reset();
  m_Endpoint = TrackerEndpoint{ host, port };
  commit({ EventKind::TrackingConnecting }, host + ":" + std::to_string(port));

  igtl::TrackerClientOptions opts;
  opts.host = host;
  opts.port = port;
  igtl::TrackerClientCallbacks cb;
  std::weak_ptr<PoseSlot> slot = m_Slot;
  cb.on_transform = [slot](const igtl::TransformMessage & m) {
    if (auto s = slot.lock())
    {
      PoseSample p;
      p.rotation = orthonormalize(m.rotation());
      p.position = m.position();
      p.timestamp = m.header.timestamp.to_seconds();
      s->push(p);
    }
  };
  m_Client = std::make_unique<igtl::TrackerClient>(opts, std::move(cb));
  m_Client->start();
}

void
WorkflowSession::disconnect_tracking()
{
  std::lock_guard lock(m_Mutex);
  if (m_Client)
  {
    m_Client->stop();
    m_Client.reset();
  }
  m_Slot->reset();
  commit({ EventKind::TrackingDisconnected }, "tracker disconnected");
}

void
WorkflowSession::feed_pose(const PoseSample & p)
{
  m_Slot->push(p);
}

bool
WorkflowSession::wait_for_pose_count(std::uint64_t n, std::chrono::milliseconds timeout) const
{
  return m_Slot->wait_for_count(n, timeout);
}

void
WorkflowSession::begin_calibration()
{
  std::lock_guard lock(m_Mutex);
  sync_tracking_locked();
  m_PivotBuffer.clear();
  m_Slot->set_capture(false);
  m_Slot->set_capture(true);
  commit({ EventKind::CalibrationStarted }, "collecting pivot poses from the tracking stream");
}

void
WorkflowSession::add_calibration_poses(const std::vector<PoseSample> & poses)
{
  std::lock_guard lock(m_Mutex);
  if (m_State[WorkflowStep::ToolCalibration] != StepStatus::InProgress)
  {
    m_PivotBuffer.clear();
    commit({ EventKind::CalibrationStarted }, "collecting pivot poses from request batches");
  }
  for (const auto & p : poses)
  {
    try
    {
      m_PivotBuffer.accumulate(p);
    }
    catch (const PivotError & e)
    {
      throw SessionError(SessionError::Kind::InvalidInput, e.what());
    }
  }
}

PivotResult
WorkflowSession::run_calibration()
{
  std::lock_guard lock(m_Mutex);
  if (m_State[WorkflowStep::ToolCalibration] != StepStatus::InProgress)
    throw SessionError(SessionError::Kind::Precondition, "no calibration is running");
  for (const auto & p : m_Slot->take_captured())
  {
    try
    {
      m_PivotBuffer.accumulate(p);
    }
    catch (const PivotError &)
    {
      // a malformed streamed pose is skipped, not fatal
    }
  }
  try
  {
    const PivotResult r = pivot_calibrate(m_PivotBuffer);
    m_Slot->set_capture(false);
    m_Calibration = CalibrationRecord{ false, r };
    std::ostringstream msg;
    msg << r.n_poses << " poses, rms residual " << r.rms_residual << " mm";
    commit({ EventKind::CalibrationSucceeded }, msg.str());
    return r;
  }
  catch (const PivotError & e)
  {
    // keep collecting; the caller may retry with more motion
    m_Slot->set_capture(true);
    commit({ EventKind::CalibrationFailed }, e.what());
    throw SessionError(SessionError::Kind::Calibration, e.what());
  }
}

void
WorkflowSession::skip_calibration()
{
  std::lock_guard lock(m_Mutex);
  m_Slot->set_capture(false);
  m_Calibration = CalibrationRecord{ true, PivotResult{} };
  commit({ EventKind::CalibrationSkipped }, "tool calibration skipped; tip offset is zero");
}

Vec3
WorkflowSession::tip_offset_locked() const
{
  if (m_Calibration && !m_Calibration->skipped && m_State.done(WorkflowStep::ToolCalibration))
    return m_Calibration->result.tip_offset;
  return Vec3::Zero();
}

FiducialPairRecord
WorkflowSession::record_fiducial(const Vec3 & image_point, const std::string & label)
{
  std::lock_guard lock(m_Mutex);
  sync_tracking_locked();
  if (!image_point.allFinite())
    throw SessionError(SessionError::Kind::InvalidInput, "fiducial image point must be finite");

  // dry run of the transition so preconditions fail before any capture
  const Transition probe = apply_event(m_State, { EventKind::FiducialRecorded, true });
  if (!probe.accepted)
    throw SessionError(SessionError::Kind::Precondition, probe.reason);

  const double now = m_Clock();
  const auto   latest = m_Slot->latest();
  if (!latest || now - latest->timestamp > kStalenessThreshold)
  {
    const std::string msg = latest ? "latest pose is " + std::to_string(now - latest->timestamp) + " s old"
                                   : "no pose received yet";
    log("fiducial_rejected", msg);
    throw SessionError(SessionError::Kind::StalePose, "stale tracking data (" + msg + "); hold the needle and retry");
  }

  if (probe.invalidate.calibration)
    m_Calibration = CalibrationRecord{ true, PivotResult{} };
  const Vec3 tip = probe.next[WorkflowStep::ToolCalibration] == StepStatus::Complete && m_Calibration
                     ? m_Calibration->result.tip_offset
                     : Vec3::Zero();

  // average the calibrated tip over the dwell window ending at the latest pose
  const auto window = m_Slot->since(latest->timestamp - m_Config.fiducial_dwell_seconds);
  Vec3       acc = Vec3::Zero();
  for (const auto & p : window)
    acc += calibrated_tip(p, tip);
  const Vec3 trackerPoint = acc / static_cast<double>(window.size());

  FiducialPairRecord rec;
  rec.pair.image_point = image_point;
  rec.pair.tracker_point = trackerPoint;
  rec.pair.label = label.empty() ? "F" + std::to_string(m_Pairs.size() + 1) : label;
  rec.n_poses_averaged = window.size();

  std::vector<LandmarkPair> pairs;
  for (const auto & p : m_Pairs)
    pairs.push_back(p.pair);
  pairs.push_back(rec.pair);

  std::optional<LandmarkRegistrationResult> fit;
  std::string                               fitError;
  if (pairs.size() >= kMinFiducialPairs)
  {
    try
    {
      fit = register_landmarks(pairs);
    }
    catch (const LandmarkError & e)
    {
      fitError = e.what();
    }
  }

  std::ostringstream msg;
  msg << rec.pair.label << " captured from " << rec.n_poses_averaged << " poses";
  if (fit)
    msg << "; rmse " << fit->rmse << " mm";
  if (!fitError.empty())
    msg << "; landmark fit failed: " << fitError;
  commit({ EventKind::FiducialRecorded, fitError.empty() }, msg.str());
  m_Pairs.push_back(rec);
  m_PatientRegistration = fit;
  return rec;
}

void
WorkflowSession::clear_fiducials()
{
  std::lock_guard lock(m_Mutex);
  commit({ EventKind::PairsCleared }, "fiducial pairs cleared by request");
  m_Pairs.clear();
  m_PatientRegistration.reset();
}

BiopsyPlan
WorkflowSession::set_plan(const Vec3 & entry, const Vec3 & target)
{
  std::lock_guard lock(m_Mutex);
  const Transition probe = apply_event(m_State, { EventKind::PlanSet });
  if (!probe.accepted)
    throw SessionError(SessionError::Kind::Precondition, probe.reason);
  BiopsyPlan plan;
  try
  {
    plan = make_plan(entry, target);
  }
  catch (const PlanError & e)
  {
    log("plan_rejected", e.what());
    throw SessionError(SessionError::Kind::InvalidInput, e.what());
  }
  const bool replacing = m_Plan.has_value();
  m_Plan = plan;
  std::ostringstream msg;
  msg << (replacing ? "plan replaced" : "plan set") << "; length " << plan.length << " mm";
  commit({ EventKind::PlanSet }, msg.str());
  return plan;
}

GuidanceState
WorkflowSession::guidance_tick()
{
  return guidance_tick(m_Clock());
}

GuidanceState
WorkflowSession::guidance_tick(double now)
{
  std::lock_guard lock(m_Mutex);
  sync_tracking_locked();
  if (m_State[WorkflowStep::Guidance] != StepStatus::InProgress)
  {
    const Transition t = commit({ EventKind::GuidanceStarted }, "guidance started");
    if (!t.accepted)
      throw SessionError(SessionError::Kind::Gating, t.reason);
  }
  const auto    pose = m_Slot->latest();
  GuidanceState g;
  if (!pose)
  {
    g = m_LastValid.value_or(GuidanceState{});
    g.valid = false;
    g.pose_age = INFINITY;
  }
  else
  {
    g = compute_guidance(*m_Plan, *pose, tip_offset_locked(), m_PatientRegistration->transform, now,
                         m_LastValid ? &*m_LastValid : nullptr);
    if (g.valid)
      m_LastValid = g;
  }
  m_LastTick = g;
  return g;
}

void
WorkflowSession::stop_guidance()
{
  std::lock_guard  lock(m_Mutex);
  const Transition t = commit({ EventKind::GuidanceStopped }, "guidance stopped");
  if (!t.accepted)
    throw SessionError(SessionError::Kind::Precondition, t.reason);
}

WorkflowState
WorkflowSession::state() const
{
  std::lock_guard lock(m_Mutex);
  const_cast<WorkflowSession *>(this)->sync_tracking_locked();
  return m_State;
}

std::optional<RegistrationRecord>
WorkflowSession::registration() const
{
  std::lock_guard lock(m_Mutex);
  return m_Registration;
}

std::optional<CalibrationRecord>
WorkflowSession::calibration() const
{
  std::lock_guard lock(m_Mutex);
  return m_Calibration;
}

Vec3
WorkflowSession::tip_offset() const
{
  std::lock_guard lock(m_Mutex);
  return tip_offset_locked();
}

std::vector<FiducialPairRecord>
WorkflowSession::fiducials() const
{
  std::lock_guard lock(m_Mutex);
  return m_Pairs;
}

std::optional<LandmarkRegistrationResult>
WorkflowSession::patient_registration() const
{
  std::lock_guard lock(m_Mutex);
  return m_PatientRegistration;
}

std::optional<BiopsyPlan>
WorkflowSession::plan() const
{
  std::lock_guard lock(m_Mutex);
  return m_Plan;
}

std::vector<LogEntry>
WorkflowSession::events() const
{
  std::lock_guard lock(m_Mutex);
  return m_Log;
}

LoadedVolumes
WorkflowSession::volumes() const
{
  std::lock_guard lock(m_Mutex);
  const_cast<WorkflowSession *>(this)->ensure_volumes_locked();
  return m_Volumes;
}

std::optional<TrackerEndpoint>
WorkflowSession::tracker_endpoint() const
{
  std::lock_guard lock(m_Mutex);
  return m_Endpoint;
}

bool
WorkflowSession::tracker_connected() const
{
  std::lock_guard lock(m_Mutex);
  return m_Client && m_Client->connected();
}

std::optional<GuidanceState>
WorkflowSession::last_guidance() const
{
  std::lock_guard lock(m_Mutex);
  return m_LastTick;
}

// ---------------------------------------------------------------- persistence

SessionDocument
WorkflowSession::document(bool for_file) const
{
  std::lock_guard lock(m_Mutex);
  SessionDocument d;
  d.id = m_Id;
  d.config = m_Config;
  d.state = for_file ? apply_event(m_State, { EventKind::SessionRestored }).next : m_State;
  d.volumes = m_VolumeRecords;
  d.registration = m_Registration;
  d.endpoint = m_Endpoint;
  d.calibration = m_Calibration;
  d.pairs = m_Pairs;
  d.patient_registration = m_PatientRegistration;
  d.plan = m_Plan;
  d.log = m_Log;
  return d;
}

std::string
WorkflowSession::status_json() const
{
  std::lock_guard lock(m_Mutex);
  const_cast<WorkflowSession *>(this)->sync_tracking_locked();
  SessionDocument doc = document(false);
  nlohmann::json  j = document_to_json(doc);
  j["tracker_connected"] = m_Client && m_Client->connected();
  j["poses_received"] = m_Slot->count();
  if (m_LastTick)
    j["guidance"] = guidance_to_json(*m_LastTick);
  return j.dump(2);
}

std::string
WorkflowSession::serialize() const
{
  std::lock_guard lock(m_Mutex);
  return document_to_json(document(true)).dump(2) + "\n";
}

void
WorkflowSession::save(const std::filesystem::path & path) const
{
  const std::string text = serialize();
  std::ofstream     out(path, std::ios::binary);
  if (!out)
    throw SessionError(SessionError::Kind::Io, "cannot write session file " + path.string());
  out << text;
  if (!out)
    throw SessionError(SessionError::Kind::Io, "failed writing session file " + path.string());
}

std::unique_ptr<WorkflowSession>
WorkflowSession::deserialize(const std::string & text, Clock clock)
{
  const SessionDocument doc = document_from_json(text);
  auto                  s = std::make_unique<WorkflowSession>(doc.config, std::move(clock));
  s->m_Id = doc.id;
  s->m_State = apply_event(doc.state, { EventKind::SessionRestored }).next;
  s->m_VolumeRecords = doc.volumes;
  s->m_Registration = doc.registration;
  s->m_Endpoint = doc.endpoint;
  s->m_Calibration = doc.calibration;
  s->m_Pairs = doc.pairs;
  s->m_PatientRegistration = doc.patient_registration;
  s->m_Plan = doc.plan;
  s->m_Log = doc.log;
  const std::string problem = check_invariants(s->m_State);
  if (!problem.empty())
    throw SessionError(SessionError::Kind::InvalidInput, "session file violates workflow rules: " + problem);
  return s;
}

std::unique_ptr<WorkflowSession>
WorkflowSession::load(const std::filesystem::path & path, Clock clock)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw SessionError(SessionError::Kind::Io, "cannot read session file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str(), std::move(clock));
}

} // namespace petnav::workflow
