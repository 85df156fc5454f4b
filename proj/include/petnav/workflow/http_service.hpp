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

// HTTP + WebSocket front end for one WorkflowSession. JSON request and
// response bodies; /slice renders PNG; /guidance streams GuidanceState
// records from a fixed-rate ticker.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "petnav/workflow/session.hpp"

namespace petnav::workflow
{

constexpr std::uint16_t kDefaultHttpPort = 8080;

/** NAV_HTTP_PORT, or 8080. Throws std::invalid_argument on a malformed value. */
std::uint16_t http_port_from_env();

struct HttpRequest
{
  std::string                        method; // "GET", "POST"
  std::string                        path;   // without the query string
  std::map<std::string, std::string> query;
  std::string                        body;
};

struct HttpResponse
{
  int         status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/** Splits "/a/b?x=1&y=2" and percent-decodes the query. */
HttpRequest parse_target(const std::string & method, const std::string & target, std::string body = {});

/** Transport-independent dispatch; never throws. */
HttpResponse handle_request(WorkflowSession & session, const HttpRequest & req);

/** HTTP status for a session error kind. */
int status_for(SessionError::Kind kind) noexcept;

/** RGB8 PNG bytes. */
std::string encode_png_rgb(std::size_t width, std::size_t height, const std::vector<std::uint8_t> & rgb);

struct HttpServiceOptions
{
  std::string   bind_address = "0.0.0.0";
  std::uint16_t port = kDefaultHttpPort; // 0 picks an ephemeral port
  double        guidance_rate = 20.0;    // Hz
  std::size_t   subscriber_queue = 64;   // per WebSocket client, oldest dropped
};

class HttpService
{
public:
  HttpService(std::shared_ptr<WorkflowSession> session, HttpServiceOptions opts = {});
  ~HttpService();

  HttpService(const HttpService &) = delete;
  HttpService & operator=(const HttpService &) = delete;

  /** Binds and starts serving. Throws SessionError(Io) on bind failure. */
  void start();
  void stop();

  std::uint16_t port() const noexcept { return m_Port; }
  std::size_t   subscriber_count() const;
  std::uint64_t records_broadcast() const noexcept { return m_Broadcast.load(); }

private:
  struct Impl;
  std::unique_ptr<Impl>            m_Impl;
  std::shared_ptr<WorkflowSession> m_Session;
  HttpServiceOptions               m_Options;
  std::uint16_t                    m_Port = 0;
  std::atomic<std::uint64_t>       m_Broadcast{ 0 };
};

} // namespace petnav::workflow
