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

// JSON forms of session documents, configs and live guidance records.
// Session files write every real as a 17-significant-digit string so a
// save/load/save cycle reproduces the file byte for byte.

#include <json.hpp>

#include "petnav/phantom.hpp"
#include "petnav/workflow/session.hpp"

namespace petnav::workflow
{

nlohmann::json  document_to_json(const SessionDocument & doc);
SessionDocument document_from_json(const std::string & text);

nlohmann::json config_to_json(const SessionConfig & c);
SessionConfig  config_from_json(const nlohmann::json & j);

/** Flat numeric record for the live guidance stream. */
nlohmann::json guidance_to_json(const GuidanceState & g, std::uint64_t seq = 0, double time = 0.0);

/** Phantom configs use plain JSON numbers; absent keys keep PhantomConfig::standard(). */
nlohmann::json phantom_config_to_json(const PhantomConfig & c);
PhantomConfig  phantom_config_from_json(const nlohmann::json & j);

nlohmann::json real_json(double v);
double         real_from_json(const nlohmann::json & j);
nlohmann::json vec3_json(const Vec3 & v);
Vec3           vec3_from_json(const nlohmann::json & j);

} // namespace petnav::workflow
