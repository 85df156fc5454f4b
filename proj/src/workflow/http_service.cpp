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

#include "petnav/workflow/http_service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <list>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <png.h>
#include <poll.h>
#include <sys/socket.h>

#include "petnav/igtl/tracker.hpp"
#include "petnav/numeric_text.hpp"
#include "petnav/workflow/json_io.hpp"

namespace petnav::workflow
{

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = boost::beast::http;
namespace websocket = boost::beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

std::uint16_t
http_port_from_env()
{
  const char * v = std::getenv("NAV_HTTP_PORT");
  if (!v || !*v)
    return kDefaultHttpPort;
  char *     end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p < 0 || p > 65535)
    throw std::invalid_argument(std::string("NAV_HTTP_PORT is not a port number: ") + v);
  return static_cast<std::uint16_t>(p);
}

int
status_for(SessionError::Kind kind) noexcept
{
  switch (kind)
  {
    case SessionError::Kind::Precondition:
    case SessionError::Kind::Gating:
    case SessionError::Kind::StalePose:
      return 409;
    case SessionError::Kind::LoadFailed:
    case SessionError::Kind::InvalidInput:
    case SessionError::Kind::Calibration:
    case SessionError::Kind::SchemaVersion:
      return 422;
    case SessionError::Kind::Registration:
    case SessionError::Kind::Io:
      return 500;
  }
  return 500;
}

namespace
{

const char *
kind_name(SessionError::Kind kind)
{
  switch (kind)
  {
    case SessionError::Kind::Precondition: return "precondition";
    case SessionError::Kind::Gating: return "gating";
    case SessionError::Kind::StalePose: return "stale_pose";
    case SessionError::Kind::LoadFailed: return "load_failed";
    case SessionError::Kind::InvalidInput: return "invalid_input";
    case SessionError::Kind::Calibration: return "calibration";
    case SessionError::Kind::Registration: return "registration";
    case SessionError::Kind::Io: return "io";
    case SessionError::Kind::SchemaVersion: return "schema_version";
  }
  return "error";
}

std::string
percent_decode(const std::string & s)
{
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
  {
    if (s[i] == '+')
      out += ' ';
    else if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
             std::isxdigit(static_cast<unsigned char>(s[i + 2])))
    {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    }
    else
      out += s[i];
  }
  return out;
}

HttpResponse
json_response(int status, const json & j)
{
  return { status, "application/json", j.dump() };
}

HttpResponse
error_response(int status, const std::string & kind, const std::string & message)
{
  return json_response(status, { { "error", kind }, { "message", message } });
}

json
v3(const Vec3 & v)
{
  return json::array({ v[0], v[1], v[2] });
}

json
rigid_json(const RigidTransform & t)
{
  const auto a = t.to_array();
  return json(std::vector<double>(a.begin(), a.end()));
}

json
report_json(const RegistrationReport & r)
{
  json j = { { "transform", rigid_json(r.final_transform) },
             { "initial_mi", r.initial_mi },
             { "final_mi", r.final_mi },
             { "iterations", r.iterations },
             { "converged", r.converged } };
  if (r.grid)
    j["grid_dims"] = json::array({ r.grid->dims()[0], r.grid->dims()[1], r.grid->dims()[2] });
  return j;
}

json
registration_json(const RegistrationRecord & r)
{
  json j = { { "mode", to_string(r.mode) }, { "rigid", report_json(r.rigid) } };
  if (r.deformable)
    j["deformable"] = report_json(*r.deformable);
  return j;
}

json
pivot_json(const PivotResult & p)
{
  return { { "tip_offset", v3(p.tip_offset) },
           { "pivot_point", v3(p.pivot_point) },
           { "rms_residual", p.rms_residual },
           { "n_poses", p.n_poses } };
}

json
plan_json(const BiopsyPlan & p)
{
  return { { "entry", v3(p.entry) }, { "target", v3(p.target) }, { "direction", v3(p.direction) }, { "length", p.length } };
}

json
body_json(const HttpRequest & req)
{
  if (req.body.empty())
    return json::object();
  json j = json::parse(req.body);
  if (!j.is_object())
    throw json::type_error::create(302, "request body must be a JSON object", nullptr);
  return j;
}

Vec3
vec3_field(const json & j, const char * key)
{
  if (!j.contains(key))
    throw std::invalid_argument(std::string("missing field: ") + key);
  return vec3_from_json(j.at(key));
}

PoseSample
pose_from_json(const json & j)
{
  PoseSample p;
  const auto & r = j.at("rotation");
  if (!r.is_array() || r.size() != 9)
    throw std::invalid_argument("rotation must hold 9 row-major numbers");
  for (int i = 0; i < 9; ++i)
    p.rotation(i / 3, i % 3) = real_from_json(r[i]);
  p.position = vec3_from_json(j.at("position"));
  p.timestamp = j.contains("timestamp") ? real_from_json(j.at("timestamp")) : 0.0;
  return p;
}

double
query_real(const HttpRequest & req, const std::string & key, double fallback)
{
  const auto it = req.query.find(key);
  if (it == req.query.end() || it->second.empty())
    return fallback;
  return parse_real(it->second);
}

std::string
query_text(const HttpRequest & req, const std::string & key, const std::string & fallback)
{
  const auto it = req.query.find(key);
  return it == req.query.end() || it->second.empty() ? fallback : it->second;
}

std::shared_ptr<const Volume>
volume_by_name(const LoadedVolumes & v, const std::string & name)
{
  if (name == "comp_ct")
    return v.comp_ct;
  if (name == "comp_pet")
    return v.comp_pet;
  if (name == "interventional_ct")
    return v.interventional_ct;
  throw std::invalid_argument("unknown volume: " + name);
}

bool
in_comp_frame(const std::string & name)
{
  return name != "interventional_ct";
}

WindowLevel
default_window(const Volume & v)
{
  if (v.modality() == Modality::PET)
  {
    const double hi = std::max(v.intensity_range().second, 1e-6);
    return { hi, hi / 2.0 };
  }
  return { 400.0, 40.0 };
}

std::uint8_t
to_byte(double v)
{
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

HttpResponse
render_slice(WorkflowSession & session, const HttpRequest & req)
{
  const LoadedVolumes vols = session.volumes();
  const std::string   base_name = query_text(req, "volume", "interventional_ct");
  const auto          base = volume_by_name(vols, base_name);
  if (!base)
    return error_response(409, "precondition", "volumes are not loaded");

  const SliceAxis axis = slice_axis_from_string(query_text(req, "axis", "axial"));
  const int       fixed = axis == SliceAxis::Axial ? 2 : axis == SliceAxis::Coronal ? 1 : 0;
  const double    index_real = query_real(req, "index", static_cast<double>(base->dims()[fixed] / 2));
  if (!(index_real >= 0.0) || index_real != std::floor(index_real))
    throw std::invalid_argument("index must be a non-negative integer");
  const auto index = static_cast<std::size_t>(index_real);

  const WindowLevel dwl = default_window(*base);
  const WindowLevel wl(query_real(req, "window", dwl.window), query_real(req, "level", dwl.level));
  const Image2D     gray = extract_slice(*base, axis, index, wl);

  Image2D      overlay = gray;
  double       opacity = 0.0;
  const std::string overlay_name = query_text(req, "overlay", "none");
  if (overlay_name != "none")
  {
    const auto ov = volume_by_name(vols, overlay_name);
    opacity = std::clamp(query_real(req, "opacity", 0.5), 0.0, 1.0);
    const auto              reg = session.registration();
    std::optional<SpatialMapping> to_comp;
    if (reg)
      to_comp = reg->mapping();
    const double      outside = ov->intensity_range().first;
    const auto        pts = slice_world_points(*base, axis, index);
    Image2D           raw;
    raw.width = gray.width;
    raw.height = gray.height;
    raw.pixels.resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
      std::optional<Vec3> q = pts[i];
      if (to_comp && in_comp_frame(base_name) != in_comp_frame(overlay_name))
        q = in_comp_frame(overlay_name) ? to_comp->map(pts[i]) : std::optional<Vec3>(to_comp->rigid.inverse().apply(pts[i]));
      std::optional<double> v;
      if (q)
        v = ov->sample_trilinear(*q);
      raw.pixels[i] = v.value_or(outside);
    }
    const WindowLevel owl0 = default_window(*ov);
    const WindowLevel owl(query_real(req, "overlay_window", owl0.window), query_real(req, "overlay_level", owl0.level));
    overlay = apply_window(raw, owl);
  }

  const RgbImage            rgb = blend_overlay(gray, overlay, opacity, Colormap::Hot);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(rgb.pixels.size() * 3);
  for (const auto & px : rgb.pixels)
    for (double c : px)
      bytes.push_back(to_byte(c));
  return { 200, "image/png", encode_png_rgb(rgb.width, rgb.height, bytes) };
}

HttpResponse
with_session(WorkflowSession & session, json result)
{
  return json_response(200, { { "result", std::move(result) }, { "session", json::parse(session.status_json()) } });
}

HttpResponse
dispatch(WorkflowSession & s, const HttpRequest & req)
{
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  const std::string & p = req.path;

  if (p == "/session" && get)
    return json_response(200, json::parse(s.status_json()));
  if (p == "/slice" && get)
    return render_slice(s, req);
  if (!post)
  {
    static const char * known[] = { "/session", "/slice", "/session/volumes", "/session/registration",
                                    "/session/tracking", "/session/tracking/disconnect", "/session/calibration/start",
                                    "/session/calibration/poses", "/session/calibration/run", "/session/calibration/skip",
                                    "/session/fiducial", "/session/fiducials/clear", "/session/plan",
                                    "/session/guidance/stop", "/session/save" };
    for (const char * k : known)
      if (p == k)
        return error_response(405, "method_not_allowed", req.method + " " + p);
    return error_response(404, "not_found", p);
  }

  const json b = body_json(req);
  if (p == "/session/volumes")
  {
    s.set_volumes(b.at("comp_ct").get<std::string>(), b.at("comp_pet").get<std::string>(),
                  b.at("interventional_ct").get<std::string>());
    return with_session(s, json::object());
  }
  if (p == "/session/registration")
  {
    const auto mode = registration_mode_from_string(b.value("mode", std::string("rigid")));
    return with_session(s, registration_json(s.run_registration(mode)));
  }
  if (p == "/session/tracking")
  {
    const std::string host = b.value("host", std::string("127.0.0.1"));
    const int         port = b.contains("port") ? b.at("port").get<int>() : igtl::tracker_port_from_env();
    if (port <= 0 || port > 65535)
      throw std::invalid_argument("port out of range");
    s.connect_tracking(host, static_cast<std::uint16_t>(port));
    return with_session(s, { { "host", host }, { "port", port } });
  }
  if (p == "/session/tracking/disconnect")
  {
    s.disconnect_tracking();
    return with_session(s, json::object());
  }
  if (p == "/session/calibration/start")
  {
    s.begin_calibration();
    return with_session(s, json::object());
  }
  if (p == "/session/calibration/poses")
  {
    const json & arr = b.at("poses");
    if (!arr.is_array())
      throw std::invalid_argument("poses must be an array");
    std::vector<PoseSample> poses;
    for (const auto & j : arr)
      poses.push_back(pose_from_json(j));
    s.add_calibration_poses(poses);
    return with_session(s, { { "accepted", poses.size() } });
  }
  if (p == "/session/calibration/run")
    return with_session(s, pivot_json(s.run_calibration()));
  if (p == "/session/calibration/skip")
  {
    s.skip_calibration();
    return with_session(s, json::object());
  }
  if (p == "/session/fiducial")
  {
    const auto rec = s.record_fiducial(vec3_field(b, "image_point"), b.value("label", std::string()));
    json       r = { { "image_point", v3(rec.pair.image_point) },
                     { "tracker_point", v3(rec.pair.tracker_point) },
                     { "label", rec.pair.label },
                     { "n_poses_averaged", rec.n_poses_averaged } };
    if (const auto reg = s.patient_registration())
      r["rmse"] = reg->rmse;
    return with_session(s, r);
  }
  if (p == "/session/fiducials/clear")
  {
    s.clear_fiducials();
    return with_session(s, json::object());
  }
  if (p == "/session/plan")
    return with_session(s, plan_json(s.set_plan(vec3_field(b, "entry"), vec3_field(b, "target"))));
  if (p == "/session/guidance/stop")
  {
    s.stop_guidance();
    return with_session(s, json::object());
  }
  if (p == "/session/save")
  {
    const std::string path = b.at("path").get<std::string>();
    s.save(path);
    return with_session(s, { { "path", path } });
  }
  if (p == "/session" || p == "/slice")
    return error_response(405, "method_not_allowed", req.method + " " + p);
  return error_response(404, "not_found", p);
}

} // namespace

HttpRequest
parse_target(const std::string & method, const std::string & target, std::string body)
{
  HttpRequest r;
  r.method = method;
  r.body = std::move(body);
  const auto q = target.find('?');
  r.path = percent_decode(target.substr(0, q));
  if (q == std::string::npos)
    return r;
  std::size_t pos = q + 1;
  while (pos <= target.size())
  {
    const auto amp = std::min(target.find('&', pos), target.size());
    const std::string item = target.substr(pos, amp - pos);
    if (!item.empty())
    {
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        r.query[percent_decode(item)] = "";
      else
        r.query[percent_decode(item.substr(0, eq))] = percent_decode(item.substr(eq + 1));
    }
    pos = amp + 1;
  }
  return r;
}

HttpResponse
handle_request(WorkflowSession & session, const HttpRequest & req)
{
  try
  {
    return dispatch(session, req);
  }
  catch (const SessionError & e)
  {
    return error_response(status_for(e.kind()), kind_name(e.kind()), e.what());
  }
  catch (const json::exception & e)
  {
    return error_response(400, "bad_request", e.what());
  }
  catch (const std::invalid_argument & e)
  {
    return error_response(422, "invalid_input", e.what());
  }
  catch (const VolumeError & e)
  {
    return error_response(422, "invalid_input", e.what());
  }
  catch (const std::exception & e)
  {
    return error_response(500, "internal", e.what());
  }
}

std::string
encode_png_rgb(std::size_t width, std::size_t height, const std::vector<std::uint8_t> & rgb)
{
  if (rgb.size() != width * height * 3 || width == 0 || height == 0)
    throw std::invalid_argument("RGB buffer does not match the image size");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png)
    throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png)))
  {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(
    png, &out,
    [](png_structp p, png_bytep data, png_size_t n) {
      static_cast<std::string *>(png_get_io_ptr(p))->append(reinterpret_cast<const char *>(data), n);
    },
    nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---------------------------------------------------------------------------

struct HttpService::Impl
{
  struct Connection
  {
    std::shared_ptr<tcp::socket>            socket;
    std::shared_ptr<igtl::DropOldestQueue>  queue; // set once upgraded to WebSocket
    std::thread                             thread;
    std::atomic<bool>                       finished{ false };
  };

  net::io_context             ioc;
  tcp::acceptor               acceptor{ ioc };
  std::atomic<bool>           running{ false };
  std::thread                 accept_thread;
  std::thread                 ticker_thread;
  mutable std::mutex          mutex;
  std::condition_variable     cv;
  std::list<std::unique_ptr<Connection>> connections;

  void
  reap_locked()
  {
    for (auto it = connections.begin(); it != connections.end();)
    {
      if ((*it)->finished)
      {
        if ((*it)->thread.joinable())
          (*it)->thread.join();
        it = connections.erase(it);
      }
      else
        ++it;
    }
  }
};

HttpService::HttpService(std::shared_ptr<WorkflowSession> session, HttpServiceOptions opts)
  : m_Impl(std::make_unique<Impl>())
  , m_Session(std::move(session))
  , m_Options(std::move(opts))
{
  if (!m_Session)
    throw std::invalid_argument("HttpService needs a session");
  if (!(m_Options.guidance_rate > 0.0))
    throw std::invalid_argument("guidance_rate must be positive");
}

HttpService::~HttpService()
{
  stop();
}

std::size_t
HttpService::subscriber_count() const
{
  std::lock_guard lock(m_Impl->mutex);
  std::size_t     n = 0;
  for (const auto & c : m_Impl->connections)
    if (c->queue && !c->finished)
      ++n;
  return n;
}

void
HttpService::start()
{
  if (m_Impl->running)
    return;
  auto & im = *m_Impl;
  try
  {
    const tcp::endpoint ep(net::ip::make_address(m_Options.bind_address), m_Options.port);
    im.acceptor.open(ep.protocol());
    im.acceptor.set_option(net::socket_base::reuse_address(true));
    im.acceptor.bind(ep);
    im.acceptor.listen();
    im.acceptor.non_blocking(true);
    m_Port = im.acceptor.local_endpoint().port();
  }
  catch (const boost::system::system_error & e)
  {
    boost::system::error_code ignored;
    im.acceptor.close(ignored);
    throw SessionError(SessionError::Kind::Io, "cannot bind HTTP service on " + m_Options.bind_address + ":" +
                                                 std::to_string(m_Options.port) + ": " + e.what());
  }
  im.running = true;

  auto serve = [this](Impl::Connection * conn) {
    auto &             sock = *conn->socket;
    beast::flat_buffer buffer;
    boost::system::error_code ec;
    while (m_Impl->running)
    {
      http::request_parser<http::string_body> parser;
      parser.body_limit(16 * 1024 * 1024);
      http::read(sock, buffer, parser, ec);
      if (ec)
        break;
      auto req = parser.release();
      const std::string target(req.target());
      if (websocket::is_upgrade(req))
      {
        if (parse_target("GET", target).path != "/guidance")
        {
          http::response<http::string_body> res{ http::status::not_found, req.version() };
          res.set(http::field::content_type, "application/json");
          res.body() = json({ { "error", "not_found" }, { "message", target } }).dump();
          res.prepare_payload();
          http::write(sock, res, ec);
          break;
        }
        websocket::stream<tcp::socket &> ws(sock);
        ws.accept(req, ec);
        if (ec)
          break;
        auto queue = std::make_shared<igtl::DropOldestQueue>(m_Options.subscriber_queue);
        {
          std::lock_guard lock(m_Impl->mutex);
          conn->queue = queue;
        }
        ws.text(true);
        while (auto item = queue->pop_wait())
        {
          ws.write(net::buffer(item->data(), item->size()), ec);
          if (ec)
            break;
        }
        break;
      }
      const HttpRequest hr = parse_target(std::string(req.method_string()), target, std::move(req.body()));
      const HttpResponse out = handle_request(*m_Session, hr);
      http::response<http::string_body> res{ static_cast<http::status>(out.status), req.version() };
      res.set(http::field::content_type, out.content_type);
      res.set(http::field::access_control_allow_origin, "*");
      res.keep_alive(req.keep_alive());
      res.body() = out.body;
      res.prepare_payload();
      http::write(sock, res, ec);
      if (ec || !res.keep_alive())
        break;
    }
    sock.shutdown(tcp::socket::shutdown_both, ec);
    sock.close(ec);
    if (conn->queue)
      conn->queue->close();
    conn->finished = true;
  };

  im.accept_thread = std::thread([this, serve] {
    auto & im = *m_Impl;
    while (im.running)
    {
      pollfd pfd{ im.acceptor.native_handle(), POLLIN, 0 };
      if (::poll(&pfd, 1, 100) <= 0)
        continue;
      auto                      sock = std::make_shared<tcp::socket>(im.ioc);
      boost::system::error_code ec;
      im.acceptor.accept(*sock, ec);
      if (ec)
        continue;
      sock->non_blocking(false, ec);
      sock->set_option(tcp::no_delay(true), ec);
      std::lock_guard lock(im.mutex);
      im.reap_locked();
      auto conn = std::make_unique<Impl::Connection>();
      conn->socket = sock;
      auto * raw = conn.get();
      conn->thread = std::thread(serve, raw);
      im.connections.push_back(std::move(conn));
    }
  });

  im.ticker_thread = std::thread([this] {
    auto &             im = *m_Impl;
    const auto         period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / m_Options.guidance_rate));
    auto               next = std::chrono::steady_clock::now() + period;
    std::uint64_t      seq = 0;
    std::unique_lock   lock(im.mutex);
    while (im.running)
    {
      im.cv.wait_until(lock, next, [&] { return !im.running; });
      if (!im.running)
        break;
      next += period;
      lock.unlock();
      std::optional<std::string> record;
      try
      {
        const WorkflowState st = m_Session->state();
        if (st.guidance_ready() && st[WorkflowStep::Guidance] != StepStatus::Complete)
        {
          const double        now = m_Session->now();
          const GuidanceState g = m_Session->guidance_tick(now);
          record = guidance_to_json(g, ++seq, now).dump();
        }
      }
      catch (const SessionError &)
      {
        // lost a race with a state change; try again next tick
      }
      lock.lock();
      if (record)
      {
        const igtl::Bytes bytes(record->begin(), record->end());
        for (auto & c : im.connections)
          if (c->queue && !c->finished)
            c->queue->push(bytes);
        ++m_Broadcast;
      }
    }
  });
}

void
HttpService::stop()
{
  auto & im = *m_Impl;
  if (!im.running.exchange(false))
    return;
  im.cv.notify_all();
  if (im.ticker_thread.joinable())
    im.ticker_thread.join();
  if (im.accept_thread.joinable())
    im.accept_thread.join();
  std::list<std::unique_ptr<Impl::Connection>> conns;
  {
    std::lock_guard lock(im.mutex);
    conns.swap(im.connections);
  }
  for (auto & c : conns)
  {
    if (c->queue)
      c->queue->close();
    ::shutdown(c->socket->native_handle(), SHUT_RDWR);
  }
  for (auto & c : conns)
    if (c->thread.joinable())
      c->thread.join();
  boost::system::error_code ec;
  im.acceptor.close(ec);
}

} // namespace petnav::workflow
