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

// nav: command-line front end for the navigation engine.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "petnav/igtl/tracker.hpp"
#include "petnav/intensity_registration.hpp"
#include "petnav/landmark_registration.hpp"
#include "petnav/nrrd_io.hpp"
#include "petnav/numeric_text.hpp"
#include "petnav/phantom.hpp"
#include "petnav/pivot_calibration.hpp"
#include "petnav/text_formats.hpp"
#include "petnav/workflow/demo.hpp"
#include "petnav/workflow/http_service.hpp"
#include "petnav/workflow/json_io.hpp"

using namespace petnav;
namespace fs = std::filesystem;

namespace
{

std::atomic<bool> g_Stop{ false };

void
on_signal(int)
{
  g_Stop = true;
}

std::string
read_text(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string
v3s(const Vec3 & v)
{
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f", v[0], v[1], v[2]);
  return buf;
}

void
print_transform(std::ostream & os, const RigidTransform & t)
{
  const Eigen::Matrix4d m = t.matrix();
  for (int r = 0; r < 4; ++r)
  {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %12.8f %12.8f %12.8f %12.6f\n", m(r, 0), m(r, 1), m(r, 2), m(r, 3));
    os << buf;
  }
}

std::string
transform_line(const RigidTransform & t)
{
  std::string s;
  for (double v : t.to_array())
    s += (s.empty() ? "" : " ") + format_real(v);
  return s;
}

PhantomConfig
load_phantom_config(const std::string & path, bool full_size)
{
  PhantomConfig cfg = path.empty() ? PhantomConfig::standard() : workflow::phantom_config_from_json(nlohmann::json::parse(read_text(path)));
  if (full_size)
  {
    // clinical-sized grids over the same field of view
    const Volume::Dims full{ 512, 512, 128 };
    for (int a = 0; a < 3; ++a)
    {
      const double f = static_cast<double>(cfg.volume_dims[a]) / static_cast<double>(full[a]);
      cfg.ct_spacing[a] *= f;
      cfg.pet_spacing[a] *= f;
      cfg.interventional_spacing[a] *= f;
    }
    cfg.volume_dims = full;
  }
  cfg.validate();
  return cfg;
}

void
wait_until(std::chrono::steady_clock::time_point t)
{
  while (!g_Stop && std::chrono::steady_clock::now() < t)
    std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(t - std::chrono::steady_clock::now(),
                                                                              std::chrono::milliseconds(50)));
}

// Streams poses at the config rate until interrupted or duration elapses (<= 0: forever).
int
stream_phantom(const PhantomConfig & cfg, const Trajectory & traj, std::uint16_t port, double duration)
{
  igtl::TrackerServerOptions o;
  o.port = port;
  igtl::TrackerServer server(o);
  server.start();
  std::cerr << "streaming NeedleSensor poses on port " << server.port() << " at " << cfg.stream_rate << " Hz\n";
  PoseGenerator gen(cfg);
  const auto    start = std::chrono::steady_clock::now();
  const double  dt = 1.0 / cfg.stream_rate;
  for (long k = 0; !g_Stop; ++k)
  {
    const double t = k * dt;
    if (duration > 0.0 && t >= duration)
      break;
    wait_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(t)));
    const PoseSample p = gen.pose_at(traj(t), t);
    server.publish_pose("NeedleSensor", t, RigidTransform{ p.rotation, p.position });
  }
  std::cerr << "published " << server.published() << " messages, dropped " << server.total_dropped() << "\n";
  server.stop();
  return 0;
}

int
stream_file(const fs::path & path, std::uint16_t port, double rate, bool loop, double duration)
{
  const auto poses = parse_pose_lines(read_text(path));
  if (poses.empty())
    throw std::runtime_error("pose file is empty");
  igtl::TrackerServerOptions o;
  o.port = port;
  igtl::TrackerServer server(o);
  server.start();
  std::cerr << "replaying " << poses.size() << " poses on port " << server.port() << "\n";
  const auto start = std::chrono::steady_clock::now();
  double     t = 0.0;
  for (std::size_t k = 0; !g_Stop; ++k)
  {
    if (k == poses.size())
    {
      if (!loop)
        break;
      k = 0;
    }
    if (duration > 0.0 && t >= duration)
      break;
    wait_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(t)));
    const PoseSample & p = poses[k];
    server.publish_pose("NeedleSensor", t, RigidTransform{ orthonormalize(p.rotation), p.position });
    if (rate > 0.0)
      t += 1.0 / rate;
    else if (k + 1 < poses.size())
      t += std::max(0.0, poses[k + 1].timestamp - p.timestamp);
    else
      t += 0.025;
  }
  server.stop();
  return 0;
}

} // namespace

int
main(int argc, char ** argv)
{
  CLI::App app{ "PET/CT-guided needle navigation engine" };
  app.require_subcommand(1);

  // volume
  auto *      vol = app.add_subcommand("volume", "Inspect volumes");
  auto *      vol_info = vol->add_subcommand("info", "Print geometry and intensity range");
  std::string vol_path;
  vol_info->add_option("path", vol_path, "NRRD file")->required();
  auto *      vol_slice = vol->add_subcommand("slice", "Render one windowed slice to PNG");
  std::string slice_axis = "axial", slice_out;
  long        slice_index = -1;
  double      slice_window = 400.0, slice_level = 40.0;
  vol_slice->add_option("path", vol_path, "NRRD file")->required();
  vol_slice->add_option("--axis", slice_axis, "axial|coronal|sagittal");
  vol_slice->add_option("--index", slice_index, "slice index (default: middle)");
  vol_slice->add_option("--window", slice_window);
  vol_slice->add_option("--level", slice_level);
  vol_slice->add_option("--out", slice_out, "PNG path")->required();
  vol->require_subcommand(1);

  // register
  auto *      reg = app.add_subcommand("register", "Mutual-information registration of two volumes");
  std::string reg_fixed, reg_moving, reg_out;
  bool        reg_deformable = false;
  int         reg_bins = 32;
  reg->add_option("--fixed", reg_fixed)->required();
  reg->add_option("--moving", reg_moving)->required();
  reg->add_flag("--deformable", reg_deformable, "add B-spline refinement");
  reg->add_option("--bins", reg_bins);
  reg->add_option("--out", reg_out, "transform text file");

  // register-landmarks
  auto *      lm = app.add_subcommand("register-landmarks", "Point-based rigid registration");
  std::string lm_pairs;
  lm->add_option("--pairs", lm_pairs, "lines: tracker xyz image xyz [label]")->required();

  // pivot-calibrate
  auto *      piv = app.add_subcommand("pivot-calibrate", "Needle tip offset from a pivoting pose file");
  std::string piv_poses;
  piv->add_option("--poses", piv_poses, "lines: 9 rotation, 3 position, timestamp")->required();

  // tracker-serve
  auto *        ts = app.add_subcommand("tracker-serve", "Serve tracking poses over the wire protocol");
  std::uint16_t ts_port = 0;
  std::string   ts_source = "sim", ts_file, ts_config;
  double        ts_rate = 0.0, ts_duration = 0.0;
  bool          ts_loop = false;
  ts->add_option("--port", ts_port, "listen port (default NAV_TRACKER_PORT or 18944)");
  ts->add_option("--source", ts_source, "sim|file")->check(CLI::IsMember({ "sim", "file" }));
  ts->add_option("--file", ts_file, "pose file for --source file");
  ts->add_option("--config", ts_config, "phantom config JSON for --source sim");
  ts->add_option("--rate", ts_rate, "replay rate in Hz (file source; default: file timestamps)");
  ts->add_flag("--loop", ts_loop, "repeat the pose file");
  ts->add_option("--duration", ts_duration, "seconds to run (default: until interrupted)");

  // phantom
  auto *      ph = app.add_subcommand("phantom", "Synthetic phantom tools");
  auto *      ph_gen = ph->add_subcommand("generate", "Write the three volumes and the truth file");
  std::string ph_config, ph_out = ".";
  bool        ph_full = false;
  ph_gen->add_option("--config", ph_config, "phantom config JSON (default: standard)");
  ph_gen->add_option("--out-dir", ph_out)->required();
  ph_gen->add_flag("--full-size", ph_full, "512x512x128 grids over the same field of view");
  auto *        ph_stream = ph->add_subcommand("stream", "Stream needle poses along a trajectory");
  std::uint16_t ph_port = 0;
  std::string   ph_traj = "builtin";
  double        ph_duration = 0.0;
  ph_stream->add_option("--config", ph_config, "phantom config JSON (default: standard)");
  ph_stream->add_option("--port", ph_port);
  ph_stream->add_option("--trajectory", ph_traj, "builtin or a file of 't x y z ax ay az' lines");
  ph_stream->add_option("--duration", ph_duration);
  auto *      ph_cfg = ph->add_subcommand("config", "Print the standard config as JSON");
  ph->require_subcommand(1);

  // session
  auto *        ses = app.add_subcommand("session", "Workflow session");
  auto *        demo = ses->add_subcommand("run-demo", "Scripted full procedure against the simulator");
  double        demo_noise = 0.0;
  std::uint64_t demo_seed = 1;
  std::string   demo_out, demo_config;
  bool          demo_deformable = false;
  demo->add_option("--noise", demo_noise, "pose noise sigma, mm");
  demo->add_option("--seed", demo_seed);
  demo->add_option("--config", demo_config, "phantom config JSON (default: standard)");
  demo->add_option("--out-dir", demo_out, "where volumes and the session file go");
  demo->add_flag("--deformable", demo_deformable);
  auto *        serve = ses->add_subcommand("serve", "Run the HTTP/WebSocket service");
  std::uint16_t serve_port = 0;
  std::string   serve_load, serve_bind = "0.0.0.0";
  double        serve_duration = 0.0;
  serve->add_option("--port", serve_port, "default NAV_HTTP_PORT or 8080");
  serve->add_option("--bind", serve_bind);
  serve->add_option("--load", serve_load, "session file to resume");
  serve->add_option("--duration", serve_duration, "seconds to run (default: until interrupted)");
  ses->require_subcommand(1);

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try
  {
    if (vol_info->parsed())
    {
      const Volume v = load_volume(vol_path);
      const auto   [lo, hi] = v.intensity_range();
      std::cout << "modality: " << to_string(v.modality()) << "\n"
                << "dims:     " << v.dims()[0] << " " << v.dims()[1] << " " << v.dims()[2] << "\n"
                << "spacing:  " << v3s(v.spacing()) << "\n"
                << "origin:   " << v3s(v.origin()) << "\n"
                << "type:     " << (v.scalar_type() == ScalarType::Int16 ? "int16" : "float32") << "\n"
                << "range:    " << lo << " " << hi << "\n";
      return 0;
    }
    if (vol_slice->parsed())
    {
      const Volume    v = load_volume(vol_path);
      const SliceAxis axis = slice_axis_from_string(slice_axis);
      const int       fixed = axis == SliceAxis::Axial ? 2 : axis == SliceAxis::Coronal ? 1 : 0;
      const auto      index = slice_index < 0 ? v.dims()[fixed] / 2 : static_cast<std::size_t>(slice_index);
      const Image2D   img = extract_slice(v, axis, index, WindowLevel(slice_window, slice_level));
      std::vector<std::uint8_t> rgb;
      for (double p : img.pixels)
        for (int c = 0; c < 3; ++c)
          rgb.push_back(static_cast<std::uint8_t>(std::lround(p * 255.0)));
      std::ofstream(slice_out, std::ios::binary) << workflow::encode_png_rgb(img.width, img.height, rgb);
      return 0;
    }
    if (reg->parsed())
    {
      const Volume       fixed = load_volume(reg_fixed);
      const Volume       moving = load_volume(reg_moving);
      RegistrationConfig cfg;
      cfg.bins = reg_bins;
      cfg.validate();
      const RegistrationReport rigid = register_rigid_mi(fixed, moving, RigidTransform::identity(), cfg);
      std::cout << "rigid: initial MI " << rigid.initial_mi << " bits, final MI " << rigid.final_mi << " bits"
                << (rigid.converged ? "" : " (not converged)") << "\n";
      print_transform(std::cout, rigid.final_transform);
      std::optional<RegistrationReport> def;
      if (reg_deformable)
      {
        def = register_bspline_mi(fixed, moving, rigid.final_transform, cfg);
        std::cout << "deformable: initial MI " << def->initial_mi << " bits, final MI " << def->final_mi << " bits\n";
      }
      if (!reg_out.empty())
      {
        std::ofstream out(reg_out);
        out << "# fixed world -> moving world, row-major rotation then translation\n"
            << "rigid = " << transform_line(rigid.final_transform) << "\n"
            << "initial_mi = " << format_real(rigid.initial_mi) << "\n"
            << "final_mi = " << format_real(def ? def->final_mi : rigid.final_mi) << "\n";
        if (def && def->grid)
        {
          const auto & g = *def->grid;
          out << "grid_dims = " << g.dims()[0] << " " << g.dims()[1] << " " << g.dims()[2] << "\n"
              << "grid_origin = " << format_real(g.origin()[0]) << " " << format_real(g.origin()[1]) << " "
              << format_real(g.origin()[2]) << "\n"
              << "grid_spacing = " << format_real(g.spacing()[0]) << " " << format_real(g.spacing()[1]) << " "
              << format_real(g.spacing()[2]) << "\n";
          out << "grid_displacements =";
          for (const Vec3 & d : g.displacements())
            out << " " << format_real(d[0]) << " " << format_real(d[1]) << " " << format_real(d[2]);
          out << "\n";
        }
      }
      return 0;
    }
    if (lm->parsed())
    {
      const auto pairs = parse_pair_lines(read_text(lm_pairs));
      const auto r = register_landmarks(pairs);
      std::cout << "tracker -> image transform:\n";
      print_transform(std::cout, r.transform);
      std::cout << "rmse: " << r.rmse << " mm\n";
      for (std::size_t i = 0; i < pairs.size(); ++i)
        std::cout << "  " << (pairs[i].label.empty() ? std::to_string(i + 1) : pairs[i].label) << ": "
                  << r.per_pair_residuals[i] << " mm\n";
      return 0;
    }
    if (piv->parsed())
    {
      const auto  poses = parse_pose_lines(read_text(piv_poses));
      PivotBuffer buf;
      for (const auto & p : poses)
        buf.accumulate(p);
      const PivotResult r = pivot_calibrate(buf);
      std::cout << "tip offset (sensor): " << v3s(r.tip_offset) << "\n"
                << "pivot point (tracker): " << v3s(r.pivot_point) << "\n"
                << "rms residual: " << r.rms_residual << " mm over " << r.n_poses << " poses\n";
      return 0;
    }
    if (ts->parsed())
    {
      const std::uint16_t port = ts->count("--port") ? ts_port : igtl::tracker_port_from_env();
      if (ts_source == "file")
      {
        if (ts_file.empty())
          throw std::invalid_argument("--source file needs --file");
        return stream_file(ts_file, port, ts_rate, ts_loop, ts_duration);
      }
      const PhantomConfig cfg = load_phantom_config(ts_config, false);
      return stream_phantom(cfg, builtin_trajectory(make_ground_truth(cfg)), port, ts_duration);
    }
    if (ph_gen->parsed())
    {
      const PhantomConfig cfg = load_phantom_config(ph_config, ph_full);
      const auto          t0 = std::chrono::steady_clock::now();
      const PhantomVolumes v = generate_phantom(cfg);
      fs::create_directories(ph_out);
      save_volume(v.comp_ct, fs::path(ph_out) / "comp_ct.nrrd");
      save_volume(v.comp_pet, fs::path(ph_out) / "comp_pet.nrrd");
      save_volume(v.interventional_ct, fs::path(ph_out) / "interventional_ct.nrrd");
      write_truth_file(v.truth, fs::path(ph_out) / "truth.txt");
      std::cout << "wrote comp_ct.nrrd comp_pet.nrrd interventional_ct.nrrd truth.txt to " << ph_out << " in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
      return 0;
    }
    if (ph_stream->parsed())
    {
      const PhantomConfig cfg = load_phantom_config(ph_config, false);
      const Trajectory    traj =
        ph_traj == "builtin" ? builtin_trajectory(make_ground_truth(cfg)) : trajectory_from_text(read_text(ph_traj));
      const std::uint16_t port = ph_stream->count("--port") ? ph_port : igtl::tracker_port_from_env();
      return stream_phantom(cfg, traj, port, ph_duration);
    }
    if (ph_cfg->parsed())
    {
      std::cout << workflow::phantom_config_to_json(PhantomConfig::standard()).dump(2) << "\n";
      return 0;
    }
    if (demo->parsed())
    {
      workflow::DemoOptions o;
      o.phantom = load_phantom_config(demo_config, false);
      o.phantom.pose_noise_sigma = demo_noise;
      o.phantom.seed = demo_seed;
      o.out_dir = demo_out;
      o.registration = demo_deformable ? workflow::RegistrationMode::Deformable : workflow::RegistrationMode::Rigid;
      o.progress = [](const std::string & s) { std::cerr << "[demo] " << s << "\n"; };
      const auto rep = workflow::run_demo(o);
      std::cout << rep.summary();
      return 0;
    }
    if (serve->parsed())
    {
      auto session = serve_load.empty() ? std::make_shared<workflow::WorkflowSession>()
                                        : std::shared_ptr<workflow::WorkflowSession>(workflow::WorkflowSession::load(serve_load));
      workflow::HttpServiceOptions o;
      o.bind_address = serve_bind;
      o.port = serve->count("--port") ? serve_port : workflow::http_port_from_env();
      workflow::HttpService svc(session, o);
      svc.start();
      std::cerr << "session " << session->id() << " serving on " << serve_bind << ":" << svc.port() << "\n";
      const auto until = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                              std::chrono::duration<double>(serve_duration));
      while (!g_Stop && (serve_duration <= 0.0 || std::chrono::steady_clock::now() < until))
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      svc.stop();
      return 0;
    }
  }
  catch (const std::exception & e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
