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
#include "petnav/workflow/json_io.hpp"

#include "petnav/numeric_text.hpp"

namespace petnav::workflow
{

using nlohmann::json;

json
real_json(double v)
{
  return format_real(v);
}

double
real_from_json(const json & j)
{
  if (j.is_string())
    return parse_real(j.get<std::string>());
  if (j.is_number())
    return j.get<double>();
  throw std::invalid_argument("expected a real number, got " + j.dump());
}

json
vec3_json(const Vec3 & v)
{
  return json::array({ real_json(v[0]), real_json(v[1]), real_json(v[2]) });
}

Vec3
vec3_from_json(const json & j)
{
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("expected a 3-vector, got " + j.dump());
  return { real_from_json(j[0]), real_from_json(j[1]), real_from_json(j[2]) };
}

namespace
{

json
reals_json(const std::vector<double> & v)
{
  json a = json::array();
  for (double x : v)
    a.push_back(real_json(x));
  return a;
}

std::vector<double>
reals_from_json(const json & j)
{
  std::vector<double> v;
  for (const auto & x : j)
    v.push_back(real_from_json(x));
  return v;
}

json
rigid_json(const RigidTransform & t)
{
  const auto a = t.to_array();
  return reals_json(std::vector<double>(a.begin(), a.end()));
}

RigidTransform
rigid_from_json(const json & j)
{
  const auto v = reals_from_json(j);
  if (v.size() != 12)
    throw std::invalid_argument("rigid transform needs 12 numbers");
  std::array<double, 12> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return RigidTransform::from_array(a);
}

json
dims_json(const std::array<std::size_t, 3> & d)
{
  return json::array({ d[0], d[1], d[2] });
}

std::array<std::size_t, 3>
dims_from_json(const json & j)
{
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("dims need 3 integers");
  return { j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>() };
}

json
report_json(const RegistrationReport & r)
{
  json j;
  j["final_transform"] = rigid_json(r.final_transform);
  j["initial_mi"] = real_json(r.initial_mi);
  j["final_mi"] = real_json(r.final_mi);
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["mi_trace"] = reals_json(r.mi_trace);
  if (r.grid)
  {
    json g;
    g["dims"] = dims_json(r.grid->dims());
    g["origin"] = vec3_json(r.grid->origin());
    g["spacing"] = vec3_json(r.grid->spacing());
    std::vector<double> flat;
    for (const auto & d : r.grid->displacements())
      flat.insert(flat.end(), { d[0], d[1], d[2] });
    g["displacements"] = reals_json(flat);
    j["grid"] = g;
  }
  else
  {
    j["grid"] = nullptr;
  }
  return j;
}

RegistrationReport
report_from_json(const json & j)
{
  RegistrationReport r;
  r.final_transform = rigid_from_json(j.at("final_transform"));
  r.initial_mi = real_from_json(j.at("initial_mi"));
  r.final_mi = real_from_json(j.at("final_mi"));
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.mi_trace = reals_from_json(j.at("mi_trace"));
  const json & g = j.at("grid");
  if (!g.is_null())
  {
    const auto        flat = reals_from_json(g.at("displacements"));
    std::vector<Vec3> disp;
    if (flat.size() % 3 != 0)
      throw std::invalid_argument("grid displacements must come in triples");
    for (std::size_t i = 0; i < flat.size(); i += 3)
      disp.emplace_back(flat[i], flat[i + 1], flat[i + 2]);
    r.grid = BSplineGrid(dims_from_json(g.at("dims")), vec3_from_json(g.at("origin")), vec3_from_json(g.at("spacing")),
                         std::move(disp));
  }
  return r;
}

const char *
accumulation_name(BinAccumulation a)
{
  return a == BinAccumulation::Nearest ? "nearest" : "linear";
}

BinAccumulation
accumulation_from_name(const std::string & s)
{
  if (s == "nearest")
    return BinAccumulation::Nearest;
  if (s == "linear")
    return BinAccumulation::Linear;
  throw std::invalid_argument("unknown histogram accumulation '" + s + "'");
}

const std::array<const char *, 3> kVolumeKeys{ "comp_ct", "comp_pet", "interventional_ct" };

} // namespace

json
config_to_json(const SessionConfig & c)
{
  const auto & r = c.registration;
  json         reg;
  reg["bins"] = r.bins;
  reg["sample_stride"] = r.sample_stride;
  reg["accumulation"] = accumulation_name(r.accumulation);
  reg["min_overlap_fraction"] = real_json(r.min_overlap_fraction);
  reg["pyramid_levels"] = r.pyramid_levels;
  reg["max_sweeps_per_level"] = r.max_sweeps_per_level;
  reg["translation_bracket_mm"] = real_json(r.translation_bracket_mm);
  reg["rotation_bracket_rad"] = real_json(r.rotation_bracket_rad);
  reg["translation_tolerance_mm"] = real_json(r.translation_tolerance_mm);
  reg["rotation_tolerance_rad"] = real_json(r.rotation_tolerance_rad);
  reg["grid_spacing_voxels"] = real_json(r.grid_spacing_voxels);
  reg["bspline_sample_stride"] = r.bspline_sample_stride;
  reg["bspline_iterations"] = r.bspline_iterations;
  reg["bspline_initial_step_mm"] = real_json(r.bspline_initial_step_mm);
  reg["bspline_min_step_mm"] = real_json(r.bspline_min_step_mm);
  reg["bspline_fd_step_mm"] = real_json(r.bspline_fd_step_mm);

  json j;
  j["registration"] = reg;
  j["pivot_min_poses"] = c.pivot.min_poses;
  j["pivot_min_rotation_diversity"] = real_json(c.pivot.min_rotation_diversity);
  j["fiducial_dwell_seconds"] = real_json(c.fiducial_dwell_seconds);
  j["pose_history"] = c.pose_history;
  return j;
}

SessionConfig
config_from_json(const json & j)
{
  SessionConfig c;
  if (j.contains("registration"))
  {
    const json & reg = j.at("registration");
    auto &       r = c.registration;
    auto         geti = [&](const char * k, int & dst) {
      if (reg.contains(k))
        dst = reg.at(k).get<int>();
    };
    auto getr = [&](const char * k, double & dst) {
      if (reg.contains(k))
        dst = real_from_json(reg.at(k));
    };
    geti("bins", r.bins);
    geti("sample_stride", r.sample_stride);
    if (reg.contains("accumulation"))
      r.accumulation = accumulation_from_name(reg.at("accumulation").get<std::string>());
    getr("min_overlap_fraction", r.min_overlap_fraction);
    geti("pyramid_levels", r.pyramid_levels);
    geti("max_sweeps_per_level", r.max_sweeps_per_level);
    getr("translation_bracket_mm", r.translation_bracket_mm);
    getr("rotation_bracket_rad", r.rotation_bracket_rad);
    getr("translation_tolerance_mm", r.translation_tolerance_mm);
    getr("rotation_tolerance_rad", r.rotation_tolerance_rad);
    getr("grid_spacing_voxels", r.grid_spacing_voxels);
    geti("bspline_sample_stride", r.bspline_sample_stride);
    geti("bspline_iterations", r.bspline_iterations);
    getr("bspline_initial_step_mm", r.bspline_initial_step_mm);
    getr("bspline_min_step_mm", r.bspline_min_step_mm);
    getr("bspline_fd_step_mm", r.bspline_fd_step_mm);
  }
  if (j.contains("pivot_min_poses"))
    c.pivot.min_poses = j.at("pivot_min_poses").get<std::size_t>();
  if (j.contains("pivot_min_rotation_diversity"))
    c.pivot.min_rotation_diversity = real_from_json(j.at("pivot_min_rotation_diversity"));
  if (j.contains("fiducial_dwell_seconds"))
    c.fiducial_dwell_seconds = real_from_json(j.at("fiducial_dwell_seconds"));
  if (j.contains("pose_history"))
    c.pose_history = j.at("pose_history").get<std::size_t>();
  return c;
}

json
document_to_json(const SessionDocument & d)
{
  json j;
  j["schema_version"] = d.schema_version;
  j["id"] = d.id;
  j["config"] = config_to_json(d.config);

  json steps;
  for (auto s : kAllSteps)
    steps[to_string(s)] = to_string(d.state[s]);
  j["steps"] = steps;
  j["pair_count"] = d.state.pairs;

  json vols;
  for (std::size_t i = 0; i < 3; ++i)
  {
    const VolumeRecord & r = d.volumes[i];
    if (r.path.empty())
    {
      vols[kVolumeKeys[i]] = nullptr;
      continue;
    }
    vols[kVolumeKeys[i]] = { { "path", r.path },
                             { "modality", to_string(r.modality) },
                             { "dims", dims_json(r.dims) },
                             { "spacing", vec3_json(r.spacing) },
                             { "origin", vec3_json(r.origin) } };
  }
  j["volumes"] = vols;

  if (d.registration)
  {
    json r;
    r["mode"] = to_string(d.registration->mode);
    r["rigid"] = report_json(d.registration->rigid);
    r["deformable"] = d.registration->deformable ? report_json(*d.registration->deformable) : json(nullptr);
    j["registration"] = r;
  }
  else
    j["registration"] = nullptr;

  j["tracker"] = d.endpoint ? json{ { "host", d.endpoint->host }, { "port", d.endpoint->port } } : json(nullptr);

  if (d.calibration)
  {
    const auto & c = *d.calibration;
    j["calibration"] = { { "skipped", c.skipped },
                         { "tip_offset", vec3_json(c.result.tip_offset) },
                         { "pivot_point", vec3_json(c.result.pivot_point) },
                         { "rms_residual", real_json(c.result.rms_residual) },
                         { "n_poses", c.result.n_poses } };
  }
  else
    j["calibration"] = nullptr;

  json pairs = json::array();
  for (const auto & p : d.pairs)
    pairs.push_back({ { "label", p.pair.label },
                      { "image_point", vec3_json(p.pair.image_point) },
                      { "tracker_point", vec3_json(p.pair.tracker_point) },
                      { "n_poses_averaged", p.n_poses_averaged } });
  j["fiducials"] = pairs;

  if (d.patient_registration)
    j["patient_registration"] = { { "transform", rigid_json(d.patient_registration->transform) },
                                  { "rmse", real_json(d.patient_registration->rmse) },
                                  { "residuals", reals_json(d.patient_registration->per_pair_residuals) } };
  else
    j["patient_registration"] = nullptr;

  if (d.plan)
    j["plan"] = { { "entry", vec3_json(d.plan->entry) },
                  { "target", vec3_json(d.plan->target) },
                  { "direction", vec3_json(d.plan->direction) },
                  { "length", real_json(d.plan->length) } };
  else
    j["plan"] = nullptr;

  json log = json::array();
  for (const auto & e : d.log)
    log.push_back({ { "seq", e.seq }, { "time", real_json(e.time) }, { "kind", e.kind }, { "message", e.message } });
  j["events"] = log;
  return j;
}

SessionDocument
document_from_json(const std::string & text)
{
  json j;
  try
  {
    j = json::parse(text);
  }
  catch (const json::exception & e)
  {
    throw SessionError(SessionError::Kind::InvalidInput, std::string("session file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version") || !j.at("schema_version").is_number_integer())
    throw SessionError(SessionError::Kind::SchemaVersion, "session file has no schema_version");
  const int version = j.at("schema_version").get<int>();
  if (version != kSessionSchemaVersion)
    throw SessionError(SessionError::Kind::SchemaVersion, "session schema version " + std::to_string(version) +
                                                            " is not supported (expected " +
                                                            std::to_string(kSessionSchemaVersion) + ")");
  try
  {
    SessionDocument d;
    d.schema_version = version;
    d.id = j.at("id").get<std::string>();
    d.config = config_from_json(j.at("config"));
    for (auto s : kAllSteps)
      d.state[s] = status_from_string(j.at("steps").at(to_string(s)).get<std::string>());
    d.state.pairs = j.at("pair_count").get<std::size_t>();

    for (std::size_t i = 0; i < 3; ++i)
    {
      const json & v = j.at("volumes").at(kVolumeKeys[i]);
      if (v.is_null())
        continue;
      VolumeRecord & r = d.volumes[i];
      r.path = v.at("path").get<std::string>();
      r.modality = modality_from_string(v.at("modality").get<std::string>());
      r.dims = dims_from_json(v.at("dims"));
      r.spacing = vec3_from_json(v.at("spacing"));
      r.origin = vec3_from_json(v.at("origin"));
    }

    if (const json & r = j.at("registration"); !r.is_null())
    {
      RegistrationRecord rec;
      rec.mode = registration_mode_from_string(r.at("mode").get<std::string>());
      rec.rigid = report_from_json(r.at("rigid"));
      if (!r.at("deformable").is_null())
        rec.deformable = report_from_json(r.at("deformable"));
      d.registration = rec;
    }
    if (const json & t = j.at("tracker"); !t.is_null())
      d.endpoint = TrackerEndpoint{ t.at("host").get<std::string>(), t.at("port").get<std::uint16_t>() };
    if (const json & c = j.at("calibration"); !c.is_null())
    {
      CalibrationRecord rec;
      rec.skipped = c.at("skipped").get<bool>();
      rec.result.tip_offset = vec3_from_json(c.at("tip_offset"));
      rec.result.pivot_point = vec3_from_json(c.at("pivot_point"));
      rec.result.rms_residual = real_from_json(c.at("rms_residual"));
      rec.result.n_poses = c.at("n_poses").get<std::size_t>();
      d.calibration = rec;
    }
    for (const auto & p : j.at("fiducials"))
    {
      FiducialPairRecord rec;
      rec.pair.label = p.at("label").get<std::string>();
      rec.pair.image_point = vec3_from_json(p.at("image_point"));
      rec.pair.tracker_point = vec3_from_json(p.at("tracker_point"));
      rec.n_poses_averaged = p.at("n_poses_averaged").get<std::size_t>();
      d.pairs.push_back(rec);
    }
    if (const json & p = j.at("patient_registration"); !p.is_null())
    {
      LandmarkRegistrationResult r;
      r.transform = rigid_from_json(p.at("transform"));
      r.rmse = real_from_json(p.at("rmse"));
      r.per_pair_residuals = reals_from_json(p.at("residuals"));
      d.patient_registration = r;
    }
    if (const json & p = j.at("plan"); !p.is_null())
    {
      BiopsyPlan plan;
      plan.entry = vec3_from_json(p.at("entry"));
      plan.target = vec3_from_json(p.at("target"));
      plan.direction = vec3_from_json(p.at("direction"));
      plan.length = real_from_json(p.at("length"));
      d.plan = plan;
    }
    for (const auto & e : j.at("events"))
      d.log.push_back({ e.at("seq").get<std::uint64_t>(), real_from_json(e.at("time")), e.at("kind").get<std::string>(),
                        e.at("message").get<std::string>() });
    if (d.pairs.size() != d.state.pairs)
      throw std::invalid_argument("pair_count does not match the stored fiducials");
    return d;
  }
  catch (const SessionError &)
  {
    throw;
  }
  catch (const std::exception & e)
  {
    throw SessionError(SessionError::Kind::InvalidInput, std::string("malformed session file: ") + e.what());
  }
}

json
guidance_to_json(const GuidanceState & g, std::uint64_t seq, double time)
{
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return { { "seq", seq },
           { "time", time },
           { "tip_x", g.tip_image.x() },
           { "tip_y", g.tip_image.y() },
           { "tip_z", g.tip_image.z() },
           { "depth_remaining", g.depth_remaining },
           { "lateral_deviation", g.lateral_deviation },
           { "angle_deviation", g.angle_deviation },
           { "pose_age", finite_or_null(g.pose_age) },
           { "valid", g.valid } };
}

json
phantom_config_to_json(const PhantomConfig & c)
{
  auto v3 = [](const Vec3 & v) { return json::array({ v[0], v[1], v[2] }); };
  auto rigid = [](const RigidTransform & t) {
    const auto a = t.to_array();
    return json(std::vector<double>(a.begin(), a.end()));
  };
  json fids = json::array();
  for (const auto & f : c.fiducials)
    fids.push_back({ { "label", f.label }, { "image_point", v3(f.image_point) } });
  return { { "volume_dims", json::array({ c.volume_dims[0], c.volume_dims[1], c.volume_dims[2] }) },
           { "ct_spacing", v3(c.ct_spacing) },
           { "pet_spacing", v3(c.pet_spacing) },
           { "interventional_spacing", v3(c.interventional_spacing) },
           { "lesion_center", v3(c.lesion_center) },
           { "lesion_radius", c.lesion_radius },
           { "body_semi_axes", v3(c.body_semi_axes) },
           { "body_center", v3(c.body_center) },
           { "respiration_enabled", c.respiration_enabled },
           { "respiration_rate", c.respiration_rate },
           { "respiration_amplitude", c.respiration_amplitude },
           { "interventional_offset", rigid(c.interventional_offset) },
           { "tracker_to_image", rigid(c.tracker_to_image) },
           { "tip_offset", v3(c.tip_offset) },
           { "fiducials", fids },
           { "pose_noise_sigma", c.pose_noise_sigma },
           { "stream_rate", c.stream_rate },
           { "seed", c.seed } };
}

PhantomConfig
phantom_config_from_json(const json & j)
{
  PhantomConfig c = PhantomConfig::standard();
  auto          v3 = [&](const char * k, Vec3 & dst) {
    if (j.contains(k))
      dst = vec3_from_json(j.at(k));
  };
  auto num = [&](const char * k, double & dst) {
    if (j.contains(k))
      dst = real_from_json(j.at(k));
  };
  auto rigid = [&](const char * k, RigidTransform & dst) {
    if (!j.contains(k))
      return;
    const auto v = reals_from_json(j.at(k));
    if (v.size() != 12)
      throw std::invalid_argument(std::string(k) + " needs 12 numbers");
    std::array<double, 12> a{};
    std::copy(v.begin(), v.end(), a.begin());
    dst = RigidTransform::from_array(a);
  };
  if (j.contains("volume_dims"))
    c.volume_dims = dims_from_json(j.at("volume_dims"));
  v3("ct_spacing", c.ct_spacing);
  v3("pet_spacing", c.pet_spacing);
  v3("interventional_spacing", c.interventional_spacing);
  v3("lesion_center", c.lesion_center);
  num("lesion_radius", c.lesion_radius);
  v3("body_semi_axes", c.body_semi_axes);
  v3("body_center", c.body_center);
  if (j.contains("respiration_enabled"))
    c.respiration_enabled = j.at("respiration_enabled").get<bool>();
  num("respiration_rate", c.respiration_rate);
  num("respiration_amplitude", c.respiration_amplitude);
  rigid("interventional_offset", c.interventional_offset);
  rigid("tracker_to_image", c.tracker_to_image);
  v3("tip_offset", c.tip_offset);
  if (j.contains("fiducials"))
  {
    c.fiducials.clear();
    for (const auto & f : j.at("fiducials"))
      c.fiducials.push_back({ f.at("label").get<std::string>(), vec3_from_json(f.at("image_point")) });
  }
  else
  {
    c.fiducials = surface_fiducials(c);
  }
  num("pose_noise_sigma", c.pose_noise_sigma);
  num("stream_rate", c.stream_rate);
  if (j.contains("seed"))
    c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

} // namespace petnav::workflow
