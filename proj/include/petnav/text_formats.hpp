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

// Whitespace-separated numeric line formats used by the command-line
// tools. Blank lines and lines starting with '#' are ignored.

#include <string>
#include <vector>

#include "petnav/landmark_registration.hpp"
#include "petnav/pivot_calibration.hpp"

namespace petnav
{

/** 9 row-major rotation, 3 position, 1 timestamp per line. Throws std::invalid_argument with the line number. */
std::vector<PoseSample> parse_pose_lines(const std::string & text);
std::string             format_pose_line(const PoseSample & p);

/** tracker x y z, image x y z, optional label. */
std::vector<LandmarkPair> parse_pair_lines(const std::string & text);

/** Splits a line into numbers; false if any token is not a number. */
bool split_numbers(const std::string & line, std::vector<double> & out);

} // namespace petnav
