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

// Eigen first: the resolver headers pulled in below define a _res macro.
#include "petnav/workflow/demo.hpp"
#include "petnav/workflow/http_service.hpp"
#include "petnav/workflow/json_io.hpp"
#include "unit/session_fixture.hpp"

#include <png.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <httplib.h>
#include <json.hpp>

#include <cstring>
#include <future>


using namespace petnav;
using namespace petnav::workflow;
using nlohmann::json;
using petnav::testing::ManualClock;
using petnav::testing::phantom_files;

namespace
{

struct DecodedPng
{
  png_uint_32               width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

DecodedPng
decode_png(const std::string & bytes)
{
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()));
  img.format = PNG_FORMAT_RGB;
  DecodedPng out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  REQUIRE(png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr));
  return out;
}

HttpResponse
call(WorkflowSession & s, const std::string & method, const std::string & target, const json & body = nullptr)
{
  return handle_request(s, parse_target(method, target, body.is_null() ? std::string() : body.dump()));
}

json
volumes_body()
{
  const auto & f = phantom_files();
  return { { "comp_ct", f.ct.string() }, { "comp_pet", f.pet.string() }, { "interventional_ct", f.ict.string() } };
}

} // namespace

TEST_CASE("http: target parsing")
{
  const HttpRequest r = parse_target("GET", "/slice?volume=comp_pet&axis=axial&index=12&x=a%20b%2Bc&flag");
  CHECK(r.path == "/slice");
  CHECK(r.query.at("volume") == "comp_pet");
  CHECK(r.query.at("index") == "12");
  CHECK(r.query.at("x") == "a b+c");
  CHECK(r.query.at("flag").empty());
  CHECK(parse_target("GET", "/session").query.empty());
}

TEST_CASE("http: error kinds map to status codes")
{
  CHECK(status_for(SessionError::Kind::Precondition) == 409);
  CHECK(status_for(SessionError::Kind::Gating) == 409);
  CHECK(status_for(SessionError::Kind::StalePose) == 409);
  CHECK(status_for(SessionError::Kind::InvalidInput) == 422);
  CHECK(status_for(SessionError::Kind::LoadFailed) == 422);
  CHECK(status_for(SessionError::Kind::SchemaVersion) == 422);
  CHECK(status_for(SessionError::Kind::Registration) == 500);
}

TEST_CASE("http: request dispatch without a transport")
{
  ManualClock     clock;
  WorkflowSession s(petnav::testing::fast_session_config(), clock.fn());

  HttpResponse r = call(s, "GET", "/session");
  CHECK(r.status == 200);
  CHECK(json::parse(r.body).at("steps").size() == kStepCount);

  CHECK(call(s, "GET", "/nowhere").status == 404);
  CHECK(call(s, "POST", "/nowhere", json::object()).status == 404);
  CHECK(call(s, "GET", "/session/plan").status == 405);
  CHECK(call(s, "DELETE", "/session").status == 405);

  r = handle_request(s, parse_target("POST", "/session/plan", "{broken"));
  CHECK(r.status == 400);

  r = call(s, "POST", "/session/plan", { { "entry", { 0, 0, 0 } }, { "target", { 0, 0, 50 } } });
  CHECK(r.status == 409);
  CHECK(json::parse(r.body).at("error") == "precondition");

  CHECK(call(s, "GET", "/slice").status == 409);
  CHECK(call(s, "POST", "/session/registration", { { "mode", "rigid" } }).status == 409);
  CHECK(call(s, "POST", "/session/registration", { { "mode", "warp" } }).status == 422);

  json bad_vols = volumes_body();
  bad_vols["comp_pet"] = "/no/such/file.nrrd";
  r = call(s, "POST", "/session/volumes", bad_vols);
  CHECK(r.status == 422);
  CHECK(json::parse(r.body).at("error") == "load_failed");

  r = call(s, "POST", "/session/volumes", volumes_body());
  REQUIRE(r.status == 200);
  const json ok = json::parse(r.body);
  CHECK(ok.contains("result"));
  CHECK(ok.contains("session"));

  r = call(s, "POST", "/session/plan", { { "entry", { 1, 2, 3 } }, { "target", { 1, 2, 3.5 } } });
  CHECK(r.status == 422);
  r = call(s, "POST", "/session/plan", { { "entry", { 1, 2, 3 } } });
  CHECK(r.status == 422);
  r = call(s, "POST", "/session/plan", { { "entry", { 0, -40, 0 } }, { "target", { 10, 5, -5 } } });
  CHECK(r.status == 200);

  CHECK(call(s, "POST", "/session/guidance/stop", json::object()).status == 409);
  CHECK(call(s, "POST", "/session/fiducial", { { "image_point", { 0, 0, 0 } } }).status == 409);

  SUBCASE("slices")
  {
    r = call(s, "GET", "/slice?volume=interventional_ct&axis=axial&index=32");
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "image/png");
    DecodedPng png = decode_png(r.body);
    CHECK(png.width == 64);
    CHECK(png.height == 64);
    bool gray = true;
    for (std::size_t i = 0; i < png.rgb.size(); i += 3)
      gray = gray && png.rgb[i] == png.rgb[i + 1] && png.rgb[i + 1] == png.rgb[i + 2];
    CHECK(gray);

    // Corner voxel is air: black under the default soft-tissue window.
    CHECK(png.rgb[0] == 0);

    r = call(s, "GET", "/slice?volume=comp_ct&axis=sagittal&index=37&overlay=comp_pet&opacity=0.6");
    REQUIRE(r.status == 200);
    png = decode_png(r.body);
    bool colored = false;
    for (std::size_t i = 0; i < png.rgb.size(); i += 3)
      colored = colored || png.rgb[i] != png.rgb[i + 2];
    CHECK(colored);

    CHECK(call(s, "GET", "/slice?axis=oblique").status == 422);
    CHECK(call(s, "GET", "/slice?axis=axial&index=64").status == 422);
    CHECK(call(s, "GET", "/slice?axis=axial&index=-1").status == 422);
    CHECK(call(s, "GET", "/slice?volume=mri").status == 422);
    CHECK(call(s, "GET", "/slice?window=0").status == 422);
  }

  SUBCASE("calibration batches over json")
  {
    json poses = json::array();
    const PhantomConfig cfg = PhantomConfig::standard();
    PoseGenerator       gen(cfg);
    for (const Mat3 & rot : pivot_rotations(40, 0.6, 2))
    {
      const PoseSample p = gen.pose_for_tracker_tip(Vec3(1, 2, 3), rot, 0.0);
      json             rj = json::array();
      for (int i = 0; i < 9; ++i)
        rj.push_back(p.rotation(i / 3, i % 3));
      poses.push_back({ { "rotation", rj }, { "position", { p.position.x(), p.position.y(), p.position.z() } } });
    }
    CHECK(call(s, "POST", "/session/calibration/poses", { { "poses", poses } }).status == 200);
    r = call(s, "POST", "/session/calibration/run", json::object());
    REQUIRE(r.status == 200);
    const json res = json::parse(r.body).at("result");
    CHECK((vec3_from_json(res.at("tip_offset")) - cfg.tip_offset).norm() < 1e-6);

    json bad = { { "poses", json::array({ { { "rotation", { 1, 2, 3 } }, { "position", { 0, 0, 0 } } } }) } };
    CHECK(call(s, "POST", "/session/calibration/poses", bad).status == 422);
  }

  SUBCASE("save through the api")
  {
    const auto path = phantom_files().dir / "api_session.json";
    CHECK(call(s, "POST", "/session/save", { { "path", path.string() } }).status == 200);
    CHECK(std::filesystem::exists(path));
    CHECK(call(s, "POST", "/session/save", { { "path", "/proc/forbidden/x.json" } }).status == 500);
  }
}

TEST_CASE("http: live server")
{
  ManualClock clock;
  auto        session = std::make_shared<WorkflowSession>(petnav::testing::fast_session_config(), clock.fn());
  HttpServiceOptions opts;
  opts.bind_address = "127.0.0.1";
  opts.port = 0;
  HttpService service(session, opts);
  service.start();
  REQUIRE(service.port() != 0);

  httplib::Client cli("127.0.0.1", service.port());
  auto            res = cli.Get("/session");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("steps").size() == kStepCount);

  res = cli.Post("/session/volumes", volumes_body().dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);

  res = cli.Post("/session/plan", R"({"entry":[1,1,1],"target":[1,1,1]})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 422);

  res = cli.Get("/slice?volume=comp_pet&axis=coronal&index=30");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  CHECK(decode_png(res->body).width == 64);

  res = cli.Get("/missing");
  REQUIRE(res);
  CHECK(res->status == 404);

  // A second service cannot take the same port.
  HttpServiceOptions clash = opts;
  clash.port = service.port();
  HttpService other(session, clash);
  CHECK_THROWS_AS(other.start(), SessionError);

  service.stop();
}

TEST_CASE("http: guidance websocket during a paced demo")
{
  namespace beast = boost::beast;
  namespace ws = beast::websocket;
  using tcp = boost::asio::ip::tcp;

  std::promise<std::uint16_t>  port_promise;
  std::unique_ptr<HttpService> service;

  DemoOptions opts;
  opts.pace = 3.0;
  opts.on_session = [&](const std::shared_ptr<WorkflowSession> & s) {
    HttpServiceOptions so;
    so.bind_address = "127.0.0.1";
    so.port = 0;
    so.guidance_rate = 20.0;
    service = std::make_unique<HttpService>(s, so);
    service->start();
    port_promise.set_value(service->port());
  };

  auto demo = std::async(std::launch::async, [&] { return run_demo(opts); });
  const std::uint16_t port = port_promise.get_future().get();

  boost::asio::io_context ioc;
  tcp::resolver           resolver(ioc);
  ws::stream<tcp::socket> sock(ioc);
  boost::asio::connect(sock.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
  sock.handshake("127.0.0.1", "/guidance");

  // Read on a helper thread; the demo's end closes the service.
  std::vector<json> records;
  std::thread       reader([&] {
    beast::flat_buffer buf;
    beast::error_code  ec;
    while (true)
    {
      sock.read(buf, ec);
      if (ec)
        break;
      records.push_back(json::parse(beast::buffers_to_string(buf.data())));
      buf.consume(buf.size());
    }
  });

  const DemoReport rep = demo.get();
  service->stop();
  reader.join();

  CHECK(rep.true_tre_mm < 1.0);
  REQUIRE(records.size() > 10);
  std::uint64_t last_seq = 0;
  double        last_depth = INFINITY;
  bool          monotone = true, seq_ok = true;
  std::size_t   valid = 0, inserting = 0;
  for (const auto & r : records)
  {
    for (const char * key : { "seq", "time", "tip_x", "tip_y", "tip_z", "depth_remaining", "lateral_deviation",
                              "angle_deviation", "pose_age", "valid" })
      CHECK(r.contains(key));
    seq_ok = seq_ok && r.at("seq").get<std::uint64_t>() > last_seq;
    last_seq = r.at("seq").get<std::uint64_t>();
    if (!r.at("valid").get<bool>())
      continue;
    ++valid;
    // Ticks between planning and insertion report wherever the needle was
    // left after the fiducial touches.
    const double pose_time = r.at("time").get<double>() - r.at("pose_age").get<double>();
    if (pose_time <= rep.insertion_start_time)
      continue;
    ++inserting;
    const double d = r.at("depth_remaining").get<double>();
    monotone = monotone && d <= last_depth + 1e-3;
    last_depth = d;
  }
  CHECK(seq_ok);
  CHECK(valid > 10);
  CHECK(inserting > 10);
  CHECK(monotone);
  CHECK(std::abs(last_depth) < 1.0);
}

TEST_CASE("http: non-guidance websocket upgrades are refused")
{
  namespace beast = boost::beast;
  namespace ws = beast::websocket;
  using tcp = boost::asio::ip::tcp;

  auto               session = std::make_shared<WorkflowSession>();
  HttpServiceOptions so;
  so.bind_address = "127.0.0.1";
  so.port = 0;
  HttpService service(session, so);
  service.start();

  boost::asio::io_context ioc;
  tcp::resolver           resolver(ioc);
  ws::stream<tcp::socket> sock(ioc);
  boost::asio::connect(sock.next_layer(), resolver.resolve("127.0.0.1", std::to_string(service.port())));
  beast::error_code ec;
  sock.handshake("127.0.0.1", "/other", ec);
  CHECK(ec);
  service.stop();
}
