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
#include "petnav/phantom.hpp"
#include "petnav/text_formats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "petnav/numeric_text.hpp"

namespace petnav
{

namespace
{

constexpr double kAirHU = -1000.0;
constexpr double kTissueHU = 20.0;
constexpr double kLiverExtraHU = 45.0;
constexpr double kRibExtraHU = 650.0;
constexpr double kMarkerExtraHU = 1480.0;
constexpr double kMarkerRadius = 4.0;
constexpr double kEdgeWidth = 1.2; // mm, logistic edge scale

constexpr double kPetBody = 0.8;
constexpr double kPetLiver = 1.5;
constexpr double kPetLesion = 10.0;

const Vec3 kLiverCenter{ 10.0, 4.0, -6.0 };
const Vec3 kLiverSemiAxes{ 28.0, 22.0, 24.0 };

double
logistic(double x, double w)
{
  return 1.0 / (1.0 + std::exp(-x / w));
}

// Approximate signed depth (mm, positive inside) below an ellipsoid surface.
double
ellipsoid_depth(const Vec3 & p, const Vec3 & center, const Vec3 & semi)
{
  const double r = (p - center).cwiseQuotient(semi).norm();
  return (1.0 - r) * semi.minCoeff();
}

double
ellipsoid_radius(const Vec3 & p, const Vec3 & center, const Vec3 & semi)
{
  return (p - center).cwiseQuotient(semi).norm();
}

Vec3
centered_origin(const Volume::Dims & dims, const Vec3 & spacing)
{
  Vec3 o;
  for (int a = 0; a < 3; ++a)
    o[a] = -0.5 * static_cast<double>(dims[a] - 1) * spacing[a];
  return o;
}

double
round_int16(double v)
{
  return std::clamp(std::round(v), -32768.0, 32767.0);
}

double
round_float32(double v)
{
  return static_cast<double>(static_cast<float>(v));
}

template <typename F>
Volume
fill_volume(const Volume::Dims & dims, const Vec3 & spacing, Modality m, ScalarType st, F && value)
{
  const Vec3          origin = centered_origin(dims, spacing);
  std::vector<double> data(dims[0] * dims[1] * dims[2]);
  std::size_t         n = 0;
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i)
      {
        const Vec3 p = origin + spacing.cwiseProduct(Vec3(double(i), double(j), double(k)));
        data[n++] = value(p);
      }
  return Volume(dims, spacing, origin, Mat3::Identity(), std::move(data), m, st);
}

Mat3
basis_with_z(const Vec3 & z)
{
  const Vec3 zn = z.normalized();
  // least-aligned canonical axis keeps the cross product well-conditioned
  Vec3 helper = Vec3::UnitX();
  if (std::abs(zn.x()) > std::abs(zn.y()))
    helper = Vec3::UnitY();
  if (std::abs(zn.dot(helper)) > std::abs(zn.z()))
    helper = Vec3::UnitZ();
  const Vec3 x = helper.cross(zn).normalized();
  const Vec3 y = zn.cross(x);
  Mat3       r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = zn;
  return r;
}

} // namespace

// ---------------------------------------------------------------- config

void
PhantomConfig::validate() const
{
  auto fail = [](const std::string & m) { throw std::invalid_argument("phantom config: " + m); };
  for (auto d : volume_dims)
    if (d < 8)
      fail("volume dims must be at least 8");
  for (const Vec3 * s : { &ct_spacing, &pet_spacing, &interventional_spacing })
    if (!(s->minCoeff() > 0.0) || !s->allFinite())
      fail("spacings must be positive");
  if (!(lesion_radius > 0.0))
    fail("lesion radius must be positive");
  if (!(body_semi_axes.minCoeff() > 0.0))
    fail("body semi-axes must be positive");
  if (!(respiration_rate > 0.0) || !(respiration_amplitude > 0.0))
    fail("respiration rate and amplitude must be positive");
  if (!(stream_rate > 0.0))
    fail("stream rate must be positive");
  if (!(pose_noise_sigma >= 0.0))
    fail("pose noise must be nonnegative");
  try
  {
    interventional_offset.validate(1e-9);
    tracker_to_image.validate(1e-9);
  }
  catch (const TransformError & e)
  {
    fail(e.what());
  }
  if (!tip_offset.allFinite())
    fail("tip offset must be finite");
  if (ellipsoid_radius(lesion_center, body_center, body_semi_axes) + lesion_radius / body_semi_axes.minCoeff() >= 1.0)
    fail("lesion must lie inside the body");
  if (fiducials.size() < 4)
    fail("at least four fiducials are required");
  const RigidTransform toComp = interventional_offset.inverse();
  for (const auto & f : fiducials)
  {
    const double r = ellipsoid_radius(toComp.apply(f.image_point), body_center, body_semi_axes);
    if (std::abs(r - 1.0) > 0.02)
      fail("fiducial '" + f.label + "' is not on the body surface");
  }
}

PhantomConfig
PhantomConfig::standard()
{
  constexpr double deg = std::numbers::pi / 180.0;
  PhantomConfig    cfg;
  cfg.interventional_offset.rotation = euler_zyx(2.0 * deg, -1.5 * deg, 4.0 * deg);
  cfg.interventional_offset.translation = Vec3(5.0, -3.5, 2.5);
  cfg.tracker_to_image.rotation = axis_angle(Vec3(1.0, 2.0, 3.0).normalized(), 35.0 * deg);
  cfg.tracker_to_image.translation = Vec3(4.0, -6.0, 3.0);

  cfg.fiducials = surface_fiducials(cfg);
  return cfg;
}

std::vector<Fiducial>
surface_fiducials(const PhantomConfig & cfg)
{
  const std::array<Vec3, 4> dirs{ Vec3(1.0, -0.3, 0.4), Vec3(-1.0, -0.2, 0.3), Vec3(0.2, -1.0, -0.5),
                                  Vec3(-0.1, 0.4, -1.0) };
  std::vector<Fiducial>     out;
  for (std::size_t i = 0; i < dirs.size(); ++i)
  {
    const Vec3 surface = cfg.body_center + cfg.body_semi_axes.cwiseProduct(dirs[i].normalized());
    out.push_back({ "F" + std::to_string(i + 1), cfg.interventional_offset.apply(surface) });
  }
  return out;
}

// ---------------------------------------------------------------- truth

GroundTruth
make_ground_truth(const PhantomConfig & cfg)
{
  GroundTruth t;
  t.interventional_offset = cfg.interventional_offset;
  t.tracker_to_image = cfg.tracker_to_image;
  t.tip_offset = cfg.tip_offset;
  t.lesion_comp_ct = cfg.lesion_center;
  t.lesion_interventional = cfg.interventional_offset.apply(cfg.lesion_center);
  t.lesion_tracker = cfg.tracker_to_image.inverse().apply(t.lesion_interventional);
  t.fiducials = cfg.fiducials;
  t.check_consistency();
  return t;
}

void
GroundTruth::check_consistency(double tol) const
{
  if ((interventional_offset.apply(lesion_comp_ct) - lesion_interventional).norm() > tol)
    throw std::logic_error("ground truth: lesion is inconsistent between CT frames");
  if ((tracker_to_image.apply(lesion_tracker) - lesion_interventional).norm() > tol)
    throw std::logic_error("ground truth: lesion is inconsistent between tracker and image");
}

// ---------------------------------------------------------------- volumes

PhantomVolumes
generate_phantom(const PhantomConfig & cfg)
{
  cfg.validate();
  const GroundTruth truth = make_ground_truth(cfg);

  std::vector<Vec3>    markersComp;
  const RigidTransform toComp = cfg.interventional_offset.inverse();
  for (const auto & f : cfg.fiducials)
    markersComp.push_back(toComp.apply(f.image_point));

  auto ctValue = [&](const Vec3 & p) {
    const double depth = ellipsoid_depth(p, cfg.body_center, cfg.body_semi_axes);
    double       hu = kAirHU + (kTissueHU - kAirHU) * logistic(depth, kEdgeWidth);
    // rib bands: a shell 3..10 mm under the skin, periodic along z
    const double shell = logistic(depth - 3.0, kEdgeWidth) * logistic(10.0 - depth, kEdgeWidth);
    const double band = logistic(std::cos(2.0 * std::numbers::pi * (p.z() - cfg.body_center.z()) / 28.0) - 0.6, 0.08);
    hu += kRibExtraHU * shell * band;
    hu += kLiverExtraHU * logistic(ellipsoid_depth(p, kLiverCenter, kLiverSemiAxes), kEdgeWidth);
    for (const auto & m : markersComp)
      hu += kMarkerExtraHU * logistic(kMarkerRadius - (p - m).norm(), 0.8);
    return round_int16(hu);
  };

  auto petValue = [&](const Vec3 & p) {
    const double body = logistic(ellipsoid_depth(p, cfg.body_center, cfg.body_semi_axes), kEdgeWidth);
    const double liver = logistic(ellipsoid_depth(p, kLiverCenter, kLiverSemiAxes), kEdgeWidth);
    const double r = (p - cfg.lesion_center).norm();
    const double R = cfg.lesion_radius;
    const double lesion = logistic(R - r, 1.5) * (1.0 + 0.3 * std::max(0.0, 1.0 - (r * r) / (R * R)));
    return round_float32(kPetBody * body + (kPetLiver - kPetBody) * liver * body + kPetLesion * lesion);
  };

  Volume ct = fill_volume(cfg.volume_dims, cfg.ct_spacing, Modality::CT, ScalarType::Int16, ctValue);
  Volume pet = fill_volume(cfg.volume_dims, cfg.pet_spacing, Modality::PET, ScalarType::Float32, petValue);
  Volume interventional =
    fill_volume(cfg.volume_dims, cfg.interventional_spacing, Modality::InterventionalCT, ScalarType::Int16,
                [&](const Vec3 & x) { return round_int16(ct.sample_trilinear(toComp.apply(x)).value_or(kAirHU)); });

  return { std::move(ct), std::move(pet), std::move(interventional), truth };
}

double
respiration_displacement(double t, double rate, double amplitude)
{
  if (!(rate > 0.0) || !(amplitude > 0.0))
    throw std::invalid_argument("respiration rate and amplitude must be positive");
  return amplitude * (1.0 - std::cos(2.0 * std::numbers::pi * rate * t / 60.0)) / 2.0;
}

// ---------------------------------------------------------------- poses

Mat3
sensor_rotation_for_axis(const RigidTransform & tracker_to_image, const Vec3 & image_axis, double roll)
{
  const Vec3 trackerAxis = tracker_to_image.rotation.transpose() * image_axis.normalized();
  return basis_with_z(trackerAxis) * axis_angle(Vec3::UnitZ(), roll);
}

PoseSample
sensor_pose_for_tip(const GroundTruth & truth, const Vec3 & tip_image, const Mat3 & sensor_rotation, double t)
{
  const Vec3 tipTracker = truth.tracker_to_image.inverse().apply(tip_image);
  PoseSample s;
  s.rotation = sensor_rotation;
  s.position = tipTracker - sensor_rotation * truth.tip_offset;
  s.timestamp = t;
  return s;
}

PoseGenerator::PoseGenerator(const PhantomConfig & cfg)
  : m_Config(cfg)
  , m_Truth(make_ground_truth(cfg))
  , m_Rng(cfg.seed)
{}

PoseSample
PoseGenerator::pose_with_rotation(const Vec3 & tip_image, const Mat3 & sensor_rotation, double t)
{
  Vec3 tip = tip_image;
  if (m_Config.respiration_enabled)
    tip.z() += respiration_displacement(t, m_Config.respiration_rate, m_Config.respiration_amplitude);
  PoseSample s = sensor_pose_for_tip(m_Truth, tip, sensor_rotation, t);
  if (m_Config.pose_noise_sigma > 0.0)
    for (int a = 0; a < 3; ++a)
      s.position[a] += m_Config.pose_noise_sigma * m_Normal(m_Rng);
  return s;
}

PoseSample
PoseGenerator::pose_for_tracker_tip(const Vec3 & tip_tracker, const Mat3 & sensor_rotation, double t)
{
  PoseSample s;
  s.rotation = sensor_rotation;
  s.position = tip_tracker - sensor_rotation * m_Truth.tip_offset;
  s.timestamp = t;
  if (m_Config.pose_noise_sigma > 0.0)
    for (int a = 0; a < 3; ++a)
      s.position[a] += m_Config.pose_noise_sigma * m_Normal(m_Rng);
  return s;
}

PoseSample
PoseGenerator::pose_at(const TrajectorySample & s, double t)
{
  return pose_with_rotation(s.tip, sensor_rotation_for_axis(m_Truth.tracker_to_image, s.axis), t);
}

void
stream_needle_poses(PoseGenerator & gen, const Trajectory & trajectory, double t0, double t1,
                    const std::function<void(const PoseSample &)> & sink)
{
  const double dt = 1.0 / gen.config().stream_rate;
  for (std::size_t n = 0;; ++n)
  {
    const double t = t0 + static_cast<double>(n) * dt;
    if (t >= t1)
      break;
    sink(gen.pose_at(trajectory(t), t));
  }
}

std::vector<Mat3>
pivot_rotations(std::size_t n, double max_tilt_rad, std::uint64_t seed)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Mat3>                      out;
  out.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i)
  {
    // swing about an axis in the xy plane, then a small twist about the needle
    const double phi = golden * static_cast<double>(i);
    const double theta = max_tilt_rad * std::sqrt(0.2 + 0.8 * unit(rng));
    const double twist = 0.3 * (unit(rng) - 0.5);
    out.push_back(axis_angle(Vec3::UnitZ(), phi) * axis_angle(Vec3::UnitX(), theta) *
                  axis_angle(Vec3::UnitZ(), -phi + twist));
  }
  return out;
}

std::vector<std::pair<std::string, Vec3>>
fiducial_touch_sequence(const PhantomConfig & cfg, double noise_sigma, std::uint64_t seed)
{
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const RigidTransform             toTracker = cfg.tracker_to_image.inverse();
  std::vector<std::pair<std::string, Vec3>> out;
  for (const auto & f : cfg.fiducials)
  {
    Vec3 p = toTracker.apply(f.image_point);
    if (noise_sigma > 0.0)
      for (int a = 0; a < 3; ++a)
        p[a] += noise_sigma * normal(rng);
    out.emplace_back(f.label, p);
  }
  return out;
}

// ---------------------------------------------------------------- truth file

namespace
{

std::string
join(const double * v, std::size_t n)
{
  std::string s;
  for (std::size_t i = 0; i < n; ++i)
  {
    if (i)
      s += ' ';
    s += format_real(v[i]);
  }
  return s;
}

std::string
join(const Vec3 & v)
{
  return join(v.data(), 3);
}

std::vector<double>
numbers(const std::string & s)
{
  std::istringstream  in(s);
  std::vector<double> out;
  std::string         tok;
  while (in >> tok)
    out.push_back(parse_real(tok));
  return out;
}

Vec3
vec3_from(const std::vector<double> & v, const std::string & key)
{
  if (v.size() != 3)
    throw std::invalid_argument("truth file: '" + key + "' needs 3 numbers");
  return { v[0], v[1], v[2] };
}

RigidTransform
rigid_from(const std::vector<double> & v, const std::string & key)
{
  if (v.size() != 12)
    throw std::invalid_argument("truth file: '" + key + "' needs 12 numbers");
  std::array<double, 12> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return RigidTransform::from_array(a);
}

} // namespace

std::string
format_truth(const GroundTruth & t)
{
  std::ostringstream out;
  out << "# phantom ground truth; transforms are row-major R (9) then t (3)\n";
  const auto off = t.interventional_offset.to_array();
  const auto trk = t.tracker_to_image.to_array();
  out << "interventional_offset = " << join(off.data(), off.size()) << "\n";
  out << "tracker_to_image = " << join(trk.data(), trk.size()) << "\n";
  out << "tip_offset = " << join(t.tip_offset) << "\n";
  out << "lesion_comp_ct = " << join(t.lesion_comp_ct) << "\n";
  out << "lesion_interventional = " << join(t.lesion_interventional) << "\n";
  out << "lesion_tracker = " << join(t.lesion_tracker) << "\n";
  for (const auto & f : t.fiducials)
    out << "fiducial." << f.label << " = " << join(f.image_point) << "\n";
  return out.str();
}

void
write_truth_file(const GroundTruth & truth, const std::filesystem::path & path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write truth file " + path.string());
  out << format_truth(truth);
  if (!out)
    throw std::runtime_error("failed writing truth file " + path.string());
}

GroundTruth
parse_truth(const std::string & text)
{
  GroundTruth        t;
  std::istringstream in(text);
  std::string        line;
  while (std::getline(in, line))
  {
    if (line.empty() || line[0] == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("truth file: malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    const auto v = numbers(line.substr(eq + 1));
    if (key == "interventional_offset")
      t.interventional_offset = rigid_from(v, key);
    else if (key == "tracker_to_image")
      t.tracker_to_image = rigid_from(v, key);
    else if (key == "tip_offset")
      t.tip_offset = vec3_from(v, key);
    else if (key == "lesion_comp_ct")
      t.lesion_comp_ct = vec3_from(v, key);
    else if (key == "lesion_interventional")
      t.lesion_interventional = vec3_from(v, key);
    else if (key == "lesion_tracker")
      t.lesion_tracker = vec3_from(v, key);
    else if (key.rfind("fiducial.", 0) == 0)
      t.fiducials.push_back({ key.substr(9), vec3_from(v, key) });
    else
      throw std::invalid_argument("truth file: unknown key '" + key + "'");
  }
  return t;
}

// ---------------------------------------------------------------- PET target

Vec3
pet_hotspot_centroid(const Volume & pet, double threshold_fraction)
{
  const double peak = pet.intensity_range().second;
  const double thr = threshold_fraction * peak;
  const auto & d = pet.dims();
  Vec3         acc = Vec3::Zero();
  double       wsum = 0.0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i)
      {
        const double v = pet.at(i, j, k);
        if (v <= thr)
          continue;
        const double w = v - thr;
        acc += w * Vec3(double(i), double(j), double(k));
        wsum += w;
      }
  if (!(wsum > 0.0))
    throw std::runtime_error("PET volume has no hot region");
  return pet.index_to_world(acc / wsum);
}

Trajectory
builtin_trajectory(const GroundTruth & truth, const Vec3 & approach, double standoff, double period)
{
  if (approach.norm() < 1e-9 || !(standoff > 0.0) || !(period > 0.0))
    throw std::invalid_argument("builtin trajectory needs a nonzero approach, positive standoff and period");
  const Vec3 out = approach.normalized();
  const Vec3 target = truth.lesion_interventional;
  return [=](double t) {
    double phase = std::fmod(t, period) / period;
    if (phase < 0.0)
      phase += 1.0;
    const double depth = phase < 0.5 ? 2.0 * phase : 2.0 * (1.0 - phase); // 0 outside, 1 at the lesion
    return TrajectorySample{ target + (1.0 - depth) * standoff * out, -out };
  };
}

Trajectory
trajectory_from_text(const std::string & text)
{
  std::vector<double>           times;
  std::vector<TrajectorySample> samples;
  std::istringstream            in(text);
  std::string                   line;
  std::vector<double>           v;
  for (std::size_t n = 1; std::getline(in, line); ++n)
  {
    const auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '#')
      continue;
    if (!split_numbers(line, v) || v.size() != 7)
      throw std::invalid_argument("trajectory line " + std::to_string(n) + ": expected t x y z ax ay az");
    const Vec3 axis(v[4], v[5], v[6]);
    if (axis.norm() < 1e-9)
      throw std::invalid_argument("trajectory line " + std::to_string(n) + ": zero axis");
    if (!times.empty() && v[0] <= times.back())
      throw std::invalid_argument("trajectory line " + std::to_string(n) + ": time is not increasing");
    times.push_back(v[0]);
    samples.push_back({ Vec3(v[1], v[2], v[3]), axis.normalized() });
  }
  if (times.empty())
    throw std::invalid_argument("trajectory has no samples");
  return [times, samples](double t) {
    if (t <= times.front())
      return samples.front();
    if (t >= times.back())
      return samples.back();
    const auto   hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    const double w = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
    TrajectorySample s;
    s.tip = (1.0 - w) * samples[hi - 1].tip + w * samples[hi].tip;
    s.axis = ((1.0 - w) * samples[hi - 1].axis + w * samples[hi].axis).normalized();
    return s;
  };
}

} // namespace petnav
