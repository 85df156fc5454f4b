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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "petnav/nrrd_io.hpp"
#include "petnav/phantom.hpp"
#include "petnav/transforms.hpp"
#include "petnav/volume.hpp"

using namespace petnav;

namespace
{

Volume
ramp_volume(Volume::Dims d, Vec3 spacing = Vec3::Ones(), Vec3 origin = Vec3::Zero(), Mat3 dir = Mat3::Identity())
{
  std::vector<double> data(d[0] * d[1] * d[2]);
  for (std::size_t n = 0; n < data.size(); ++n)
    data[n] = static_cast<double>(n);
  return Volume(d, spacing, origin, dir, std::move(data));
}

// Naive eight-corner interpolation straight from the definition.
double
brute_trilinear(const Volume & v, const Vec3 & idx)
{
  const int    i0 = static_cast<int>(std::floor(idx[0]));
  const int    j0 = static_cast<int>(std::floor(idx[1]));
  const int    k0 = static_cast<int>(std::floor(idx[2]));
  const double fx = idx[0] - i0, fy = idx[1] - j0, fz = idx[2] - k0;
  double       sum = 0.0;
  for (int c = 0; c < 8; ++c)
  {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
    if (w == 0.0)
      continue;
    sum += w * v.at(i0 + dx, j0 + dy, k0 + dz);
  }
  return sum;
}

std::filesystem::path
temp_file(const std::string & name)
{
  return std::filesystem::temp_directory_path() / ("petnav_test_" + std::to_string(::getpid()) + "_" + name);
}

} // namespace

TEST_CASE("volume rejects bad geometry")
{
  CHECK_THROWS_AS(Volume({ 2, 2, 2 }, Vec3(1, 0, 1), Vec3::Zero(), Mat3::Identity(), std::vector<double>(8)), VolumeError);
  CHECK_THROWS_AS(Volume({ 2, 2, 2 }, Vec3::Ones(), Vec3::Zero(), Mat3::Identity(), std::vector<double>(7)), VolumeError);
  Mat3 skew = Mat3::Identity();
  skew(0, 1) = 0.1;
  CHECK_THROWS_AS(Volume({ 2, 2, 2 }, Vec3::Ones(), Vec3::Zero(), skew, std::vector<double>(8)), VolumeError);
}

TEST_CASE("world to index")
{
  SUBCASE("origin maps to zero")
  {
    const Volume v = ramp_volume({ 4, 4, 4 }, Vec3(1.5, 1.5, 2.0), Vec3(-3, 2, 7));
    CHECK(v.world_to_index(Vec3(-3, 2, 7)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("anisotropic spacing")
  {
    const Volume v = ramp_volume({ 4, 4, 4 }, Vec3(1.5, 1.5, 2.0));
    CHECK((v.world_to_index(Vec3(3, 3, 4)) - Vec3(2, 2, 2)).norm() < 1e-12);
  }
  SUBCASE("rotated direction matches a direct solve")
  {
    const Mat3   r = axis_angle(Vec3::UnitZ(), M_PI / 2);
    const Vec3   sp(1.5, 0.7, 2.0), org(10, -4, 3);
    const Volume v = ramp_volume({ 5, 6, 7 }, sp, org, r);
    const Mat3   a = r * sp.asDiagonal();
    const Vec3   p(3.3, -1.2, 8.8);
    const Vec3   oracle = a.fullPivLu().solve(p - org);
    CHECK((v.world_to_index(p) - oracle).norm() < 1e-12);
  }
  SUBCASE("round trip property")
  {
    std::mt19937_64                        rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 200; ++trial)
    {
      const Mat3   r = axis_angle(Vec3(u(rng), u(rng), u(rng)) + Vec3(0, 0, 1.5), u(rng) * M_PI);
      const Vec3   sp(0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng)));
      const Volume v = ramp_volume({ 8, 9, 10 }, sp, 50 * Vec3(u(rng), u(rng), u(rng)), r);
      const Vec3   idx(8 * std::abs(u(rng)), 9 * std::abs(u(rng)), 10 * std::abs(u(rng)));
      CHECK((v.world_to_index(v.index_to_world(idx)) - idx).norm() < 1e-9);
      const Vec3 p = v.index_to_world(idx);
      CHECK((v.index_to_world(v.world_to_index(p)) - p).norm() < 1e-9);
    }
  }
}

TEST_CASE("trilinear sampling")
{
  const Volume v = ramp_volume({ 6, 5, 4 }, Vec3(2, 1, 3), Vec3(1, 1, 1));

  SUBCASE("voxel centers are exact")
  {
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = 0; i < 6; ++i)
          CHECK(*v.sample_trilinear(v.index_to_world(Vec3(i, j, k))) == v.at(i, j, k));
  }
  SUBCASE("midpoint between 0 and 10")
  {
    const Volume two({ 2, 1, 1 }, Vec3::Ones(), Vec3::Zero(), Mat3::Identity(), { 0.0, 10.0 });
    CHECK(*two.sample_trilinear(Vec3(0.5, 0, 0)) == doctest::Approx(5.0));
  }
  SUBCASE("random interior points against the eight-corner oracle")
  {
    std::mt19937_64                        rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double>                    data(6 * 5 * 4);
    for (auto & d : data)
      d = 1000.0 * u(rng) - 500.0;
    const Volume rnd({ 6, 5, 4 }, Vec3(2, 1, 3), Vec3(1, 1, 1), Mat3::Identity(), data);
    for (int n = 0; n < 1000; ++n)
    {
      const Vec3 idx(4.999 * u(rng), 3.999 * u(rng), 2.999 * u(rng));
      CHECK(*rnd.sample_index(idx) == doctest::Approx(brute_trilinear(rnd, idx)).epsilon(1e-12));
      CHECK(std::abs(*rnd.sample_trilinear(rnd.index_to_world(idx)) - brute_trilinear(rnd, idx)) < 1e-9);
    }
  }
  SUBCASE("linear along axes between adjacent centers")
  {
    for (double f = 0.0; f <= 1.0; f += 0.125)
      CHECK(*v.sample_index(Vec3(2 + f, 3, 1)) == doctest::Approx((1 - f) * v.at(2, 3, 1) + f * v.at(3, 3, 1)));
  }
  SUBCASE("outside returns no value")
  {
    CHECK_FALSE(v.sample_index(Vec3(-0.01, 0, 0)).has_value());
    CHECK_FALSE(v.sample_index(Vec3(0, 4.01, 0)).has_value());
    CHECK(v.sample_index(Vec3(5, 4, 3)).has_value());
  }
}

TEST_CASE("slices and windowing")
{
  SUBCASE("constant volume at the level gives 0.5")
  {
    const Volume c({ 3, 3, 3 }, Vec3::Ones(), Vec3::Zero(), Mat3::Identity(), std::vector<double>(27, 40.0));
    for (auto axis : { SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal })
      for (double p : extract_slice(c, axis, 1, WindowLevel(400, 40)).pixels)
        CHECK(p == doctest::Approx(0.5));
  }
  SUBCASE("index at dims is out of range")
  {
    const Volume v = ramp_volume({ 3, 4, 5 });
    CHECK_THROWS_AS(extract_slice(v, SliceAxis::Axial, 5, WindowLevel()), VolumeError);
    CHECK_THROWS_AS(extract_slice(v, SliceAxis::Coronal, 4, WindowLevel()), VolumeError);
    CHECK_THROWS_AS(extract_slice(v, SliceAxis::Sagittal, 3, WindowLevel()), VolumeError);
    CHECK_NOTHROW(extract_slice(v, SliceAxis::Axial, 4, WindowLevel()));
  }
  SUBCASE("ramp rows follow the window formula")
  {
    const Volume  v = ramp_volume({ 4, 3, 2 });
    const Image2D s = extract_slice(v, SliceAxis::Axial, 1, WindowLevel(10.0, 15.0));
    REQUIRE(s.width == 4);
    REQUIRE(s.height == 3);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x)
      {
        const double raw = static_cast<double>(x + 4 * (y + 3 * 1));
        CHECK(s.at(x, y) == doctest::Approx(std::clamp((raw - 10.0) / 10.0, 0.0, 1.0)));
      }
  }
  SUBCASE("output always in the unit interval")
  {
    std::mt19937_64                        rng(5);
    std::uniform_real_distribution<double> u(-3000, 3000);
    std::vector<double>                    data(5 * 5 * 5);
    for (auto & d : data)
      d = u(rng);
    const Volume v({ 5, 5, 5 }, Vec3::Ones(), Vec3::Zero(), Mat3::Identity(), data);
    for (int t = 0; t < 50; ++t)
    {
      const WindowLevel wl(1.0 + std::abs(u(rng)), u(rng));
      for (double p : extract_slice(v, SliceAxis::Coronal, t % 5, wl).pixels)
        CHECK((p >= 0.0 && p <= 1.0));
    }
  }
  SUBCASE("window must be positive")
  {
    CHECK_THROWS_AS(WindowLevel(0.0, 0.0), VolumeError);
  }
}

TEST_CASE("overlay blending")
{
  Image2D base{ 2, 1, { 0.2, 0.9 } };
  Image2D over{ 2, 1, { 0.5, 1.0 } };
  SUBCASE("opacity 0 is the grayscale base")
  {
    const RgbImage out = blend_overlay(base, over, 0.0);
    for (int c = 0; c < 3; ++c)
    {
      CHECK(out.pixels[0][c] == doctest::Approx(0.2));
      CHECK(out.pixels[1][c] == doctest::Approx(0.9));
    }
  }
  SUBCASE("opacity 1 is the colormapped overlay")
  {
    const RgbImage out = blend_overlay(base, over, 1.0);
    CHECK(out.pixels[0][0] == doctest::Approx(1.0));
    CHECK(out.pixels[0][1] == doctest::Approx(0.5));
    CHECK(out.pixels[0][2] == doctest::Approx(0.0));
    CHECK(out.pixels[1][2] == doctest::Approx(1.0));
  }
  SUBCASE("opacity 0.5 is the channel-wise average")
  {
    const RgbImage out = blend_overlay(base, over, 0.5);
    const auto     hot = apply_colormap(Colormap::Hot, 0.5);
    for (int c = 0; c < 3; ++c)
      CHECK(out.pixels[0][c] == doctest::Approx(0.5 * 0.2 + 0.5 * hot[c]));
  }
  SUBCASE("shape and opacity checks")
  {
    CHECK_THROWS_AS(blend_overlay(base, Image2D{ 1, 1, { 0.0 } }, 0.5), VolumeError);
    CHECK_THROWS_AS(blend_overlay(base, over, 1.5), VolumeError);
  }
}

TEST_CASE("nrrd reading")
{
  SUBCASE("2x2x2 int16 file")
  {
    std::string doc = "NRRD0004\ntype: short\ndimension: 3\nsizes: 2 2 2\nspacings: 1 1 1\nencoding: raw\nendian: little\n\n";
    for (int i = 0; i < 8; ++i)
    {
      doc += static_cast<char>(i);
      doc += '\0';
    }
    const Volume v = parse_nrrd(doc);
    CHECK(v.data()[7] == 7.0);
    CHECK(v.scalar_type() == ScalarType::Int16);
  }
  SUBCASE("full-size clinical header")
  {
    const std::string doc = "NRRD0004\ntype: short\ndimension: 3\nsizes: 512 512 127\n"
                            "space directions: (1.5,0,0) (0,1.5,0) (0,0,2.0)\nspace origin: (0,0,0)\n"
                            "encoding: raw\nendian: little\n\n";
    const NrrdHeader h = parse_nrrd_header(doc);
    CHECK(h.dims == Volume::Dims{ 512, 512, 127 });
    CHECK((h.spacing - Vec3(1.5, 1.5, 2.0)).norm() < 1e-12);
  }
  SUBCASE("payload shorter than the header says")
  {
    std::string doc = "NRRD0004\ntype: float\ndimension: 3\nsizes: 2 2 2\nencoding: raw\nendian: little\n\n";
    doc += std::string(7 * 4, '\0');
    try
    {
      (void)parse_nrrd(doc);
      FAIL("expected a dimension mismatch");
    }
    catch (const NrrdError & e)
    {
      CHECK(e.kind() == NrrdError::Kind::DimensionMismatch);
    }
  }
  SUBCASE("malformed headers")
  {
    CHECK_THROWS_AS(parse_nrrd("NOTNRRD\n\n"), NrrdError);
    CHECK_THROWS_AS(parse_nrrd("NRRD0004\ntype: float\ndimension: 2\nsizes: 2 2\nencoding: raw\n\n"), NrrdError);
    CHECK_THROWS_AS(parse_nrrd("NRRD0004\ntype: float\ndimension: 3\nsizes: 2 2 2\nencoding: gzip\n\n"), NrrdError);
  }
}

TEST_CASE("nrrd round trip")
{
  SUBCASE("random small volumes are bit-exact")
  {
    std::mt19937_64                        rng(17);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 30; ++t)
    {
      const Volume::Dims d{ std::size_t(1 + t % 4), std::size_t(2 + t % 3), std::size_t(1 + t % 5) };
      std::vector<double> data(d[0] * d[1] * d[2]);
      const bool          ints = t % 2 == 0;
      for (auto & x : data)
        x = ints ? std::round(3000 * u(rng)) : static_cast<double>(static_cast<float>(100 * u(rng)));
      const Mat3   r = axis_angle(Vec3(u(rng), u(rng), 1.0), u(rng));
      const Volume v(d, Vec3(0.5 + std::abs(u(rng)), 1.0, 2.0 + u(rng)), Vec3(u(rng), u(rng), u(rng)) * 100, r, data,
                     ints ? Modality::CT : Modality::PET, ints ? ScalarType::Int16 : ScalarType::Float32);
      const Volume back = parse_nrrd(serialize_nrrd(v));
      CHECK(back.dims() == v.dims());
      CHECK(back.data() == v.data());
      CHECK(back.modality() == v.modality());
      CHECK(back.scalar_type() == v.scalar_type());
      CHECK((back.spacing() - v.spacing()).norm() < 1e-12);
      CHECK((back.origin() - v.origin()).norm() < 1e-12);
      CHECK((back.direction() - v.direction()).norm() < 1e-12);
      CHECK(serialize_nrrd(back) == serialize_nrrd(v));
    }
  }
  SUBCASE("phantom volume through a file")
  {
    PhantomConfig cfg = PhantomConfig::standard();
    cfg.volume_dims = { 24, 24, 24 };
    const PhantomVolumes ph = generate_phantom(cfg);
    const auto           path = temp_file("ct.nrrd");
    save_volume(ph.interventional_ct, path);
    const Volume back = load_volume(path);
    CHECK(back.data() == ph.interventional_ct.data());
    CHECK(back.modality() == Modality::InterventionalCT);
    std::filesystem::remove(path);
  }
  SUBCASE("unwritable and missing paths")
  {
    const Volume v = ramp_volume({ 2, 2, 2 });
    CHECK_THROWS_AS(save_volume(v, "/nonexistent-dir/x/y.nrrd"), NrrdError);
    CHECK_THROWS_AS(load_volume("/nonexistent-dir/y.nrrd"), NrrdError);
  }
}
