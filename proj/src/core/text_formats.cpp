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

#include "petnav/text_formats.hpp"

#include <sstream>
#include <stdexcept>

#include "petnav/numeric_text.hpp"

namespace petnav
{

namespace
{

bool
skip_line(const std::string & line)
{
  const auto p = line.find_first_not_of(" \t\r");
  return p == std::string::npos || line[p] == '#';
}

[[noreturn]] void
bad_line(std::size_t n, const std::string & why)
{
  throw std::invalid_argument("line " + std::to_string(n) + ": " + why);
}

} // namespace

bool
split_numbers(const std::string & line, std::vector<double> & out)
{
  out.clear();
  std::istringstream is(line);
  std::string        tok;
  while (is >> tok)
  {
    try
    {
      out.push_back(parse_real(tok));
    }
    catch (const std::invalid_argument &)
    {
      return false;
    }
  }
  return true;
}

std::vector<PoseSample>
parse_pose_lines(const std::string & text)
{
  std::vector<PoseSample> poses;
  std::istringstream      in(text);
  std::string             line;
  std::vector<double>     v;
  for (std::size_t n = 1; std::getline(in, line); ++n)
  {
    if (skip_line(line))
      continue;
    if (!split_numbers(line, v))
      bad_line(n, "not a number");
    if (v.size() != 13)
      bad_line(n, "expected 13 numbers, got " + std::to_string(v.size()));
    PoseSample p;
    for (int i = 0; i < 9; ++i)
      p.rotation(i / 3, i % 3) = v[i];
    p.position = Vec3(v[9], v[10], v[11]);
    p.timestamp = v[12];
    poses.push_back(p);
  }
  return poses;
}

std::string
format_pose_line(const PoseSample & p)
{
  std::string s;
  for (int i = 0; i < 9; ++i)
    s += format_real(p.rotation(i / 3, i % 3)) + " ";
  for (int i = 0; i < 3; ++i)
    s += format_real(p.position[i]) + " ";
  return s + format_real(p.timestamp);
}

std::vector<LandmarkPair>
parse_pair_lines(const std::string & text)
{
  std::vector<LandmarkPair> pairs;
  std::istringstream        in(text);
  std::string               line;
  for (std::size_t n = 1; std::getline(in, line); ++n)
  {
    if (skip_line(line))
      continue;
    std::istringstream is(line);
    std::string        tok;
    std::vector<double> v;
    std::string        label;
    while (is >> tok)
    {
      if (v.size() < 6)
      {
        try
        {
          v.push_back(parse_real(tok));
        }
        catch (const std::invalid_argument &)
        {
          bad_line(n, "not a number: " + tok);
        }
      }
      else if (label.empty())
        label = tok;
      else
        bad_line(n, "trailing text after label");
    }
    if (v.size() != 6)
      bad_line(n, "expected 6 numbers, got " + std::to_string(v.size()));
    LandmarkPair p;
    p.tracker_point = Vec3(v[0], v[1], v[2]);
    p.image_point = Vec3(v[3], v[4], v[5]);
    p.label = label;
    pairs.push_back(p);
  }
  return pairs;
}

} // namespace petnav
