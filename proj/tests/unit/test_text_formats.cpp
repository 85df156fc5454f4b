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

#include <random>

#include "petnav/numeric_text.hpp"
#include "petnav/text_formats.hpp"

using namespace petnav;

TEST_CASE("text: numbers")
{
  std::vector<double> v;
  CHECK(split_numbers("  1 -2.5\t3e2 ", v));
  CHECK(v == std::vector<double>{ 1.0, -2.5, 300.0 });
  CHECK_FALSE(split_numbers("1 two 3", v));
  CHECK(split_numbers("", v));
  CHECK(v.empty());

  CHECK(parse_real("0.1") == 0.1);
  CHECK_THROWS_AS(parse_real(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_real("1.5mm"), std::invalid_argument);
  CHECK_THROWS_AS(parse_real("1e999"), std::invalid_argument);

  std::mt19937_64                        rng(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i)
  {
    const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(parse_real(format_real(x)) == x);
  }
}

TEST_CASE("text: pose lines")
{
  PoseSample p;
  p.rotation = euler_zyx(0.1, 0.2, 0.3);
  p.position = Vec3(1.25, -3.5, 1e-7);
  p.timestamp = 12.75;
  const std::string line = format_pose_line(p);
  const auto        back = parse_pose_lines("# header\n\n" + line + "\n");
  REQUIRE(back.size() == 1);
  CHECK(back[0].rotation == p.rotation);
  CHECK(back[0].position == p.position);
  CHECK(back[0].timestamp == p.timestamp);

  // Row-major order: the second number is R(0,1).
  const auto rm = parse_pose_lines("1 2 3 4 5 6 7 8 9 10 11 12 13\n");
  CHECK(rm[0].rotation(0, 1) == 2.0);
  CHECK(rm[0].rotation(1, 0) == 4.0);
  CHECK(rm[0].position == Vec3(10, 11, 12));

  try
  {
    parse_pose_lines("1 0 0 0 1 0 0 0 1 0 0 0 0\n1 0 0\n");
    FAIL("expected a parse error");
  }
  catch (const std::invalid_argument & e)
  {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("text: landmark pair lines")
{
  const auto pairs = parse_pair_lines("# tracker image label\n"
                                      "0 0 0  10 20 30  F1\n"
                                      "1 2 3  4 5 6\n");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].tracker_point == Vec3(0, 0, 0));
  CHECK(pairs[0].image_point == Vec3(10, 20, 30));
  CHECK(pairs[0].label == "F1");
  CHECK(pairs[1].label.empty());
  CHECK_THROWS_AS(parse_pair_lines("1 2 3 4 5\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_pair_lines("1 2 3 4 5 x6\n"), std::invalid_argument);
}
