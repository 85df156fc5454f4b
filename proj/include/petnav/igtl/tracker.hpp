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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "petnav/igtl/messages.hpp"

namespace petnav::igtl
{

/** Default tracker port, overridable with NAV_TRACKER_PORT. */
inline constexpr std::uint16_t kDefaultTrackerPort = 18944;
std::uint16_t tracker_port_from_env();

class TransportError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/**
 * Bounded FIFO that evicts its oldest entry when full. Tracking data is
 * state, so a lagging consumer should see the newest poses.
 */
class DropOldestQueue
{
public:
  explicit DropOldestQueue(std::size_t capacity);

  /** Returns true if an older entry was evicted. */
  bool push(Bytes item);

  /** Blocks until an item is available or the queue is closed. */
  std::optional<Bytes> pop_wait();
  std::optional<Bytes> try_pop();

  void close();

  std::size_t size() const;
  std::size_t capacity() const noexcept { return m_Capacity; }
  std::size_t dropped() const;

private:
  const std::size_t       m_Capacity;
  mutable std::mutex      m_Mutex;
  std::condition_variable m_Cv;
  std::deque<Bytes>       m_Items;
  std::size_t             m_Dropped = 0;
  bool                    m_Closed = false;
};

struct TrackerServerOptions
{
  std::uint16_t port = kDefaultTrackerPort; // 0 picks an ephemeral port
  std::string   bind_address = "0.0.0.0";
  std::size_t   client_queue_capacity = 64;
  int           send_buffer_bytes = 0; // 0 keeps the OS default
};

/**
 * Accepts any number of clients and fans out every published message to
 * each one through its own DropOldestQueue and writer thread. A failed
 * client is disconnected without affecting the others.
 */
class TrackerServer
{
public:
  explicit TrackerServer(TrackerServerOptions opts = {});
  ~TrackerServer();

  TrackerServer(const TrackerServer &) = delete;
  TrackerServer & operator=(const TrackerServer &) = delete;

  /** Binds and starts accepting. Throws TransportError on bind failure. */
  void start();
  void stop();

  std::uint16_t port() const noexcept { return m_Port; }

  void publish(const Bytes & message);
  void publish_pose(const std::string & device, double timestamp, const RigidTransform & pose);

  std::size_t client_count() const;
  /** Blocks until at least n clients are connected or the timeout expires. */
  bool wait_for_clients(std::size_t n, std::chrono::milliseconds timeout) const;
  std::size_t total_dropped() const;
  std::uint64_t published() const noexcept { return m_Published.load(); }

private:
  struct Client;

  void accept_loop();
  void reap_finished();

  TrackerServerOptions                 m_Options;
  std::uint16_t                        m_Port = 0;
  int                                  m_ListenFd = -1;
  std::atomic<bool>                    m_Running{ false };
  std::thread                          m_AcceptThread;
  mutable std::mutex                   m_ClientsMutex;
  mutable std::condition_variable      m_ClientsCv;
  std::vector<std::shared_ptr<Client>> m_Clients;
  std::atomic<std::uint64_t>           m_Published{ 0 };
  std::size_t                          m_DroppedFromClosed = 0;
};

struct TrackerClientOptions
{
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultTrackerPort;
  std::chrono::milliseconds initial_backoff{ 100 };
  std::chrono::milliseconds max_backoff{ 5000 };
  std::chrono::milliseconds connect_timeout{ 1000 };
};

struct TrackerClientCallbacks
{
  std::function<void(const TransformMessage &)> on_transform;
  std::function<void(const StatusMessage &)>    on_status;
  std::function<void(const UnknownMessage &)>   on_unknown;
  std::function<void(const std::string &)>      on_error;     // connect failures, protocol errors
  std::function<void(bool connected)>           on_connection;
};

/**
 * Connects, decodes and delivers messages on a single reader thread (so
 * callbacks never run concurrently). Reconnects with exponential backoff
 * from initial_backoff up to max_backoff after any failure.
 */
class TrackerClient
{
public:
  TrackerClient(TrackerClientOptions opts, TrackerClientCallbacks callbacks);
  ~TrackerClient();

  TrackerClient(const TrackerClient &) = delete;
  TrackerClient & operator=(const TrackerClient &) = delete;

  void start();
  void stop();

  bool          connected() const noexcept { return m_Connected.load(); }
  std::uint64_t connect_count() const noexcept { return m_ConnectCount.load(); }
  std::uint64_t error_count() const noexcept { return m_ErrorCount.load(); }
  std::uint64_t messages_received() const noexcept { return m_Received.load(); }

  /** Delay before the n-th consecutive retry (n starts at 0). */
  static std::chrono::milliseconds backoff_delay(std::size_t n, std::chrono::milliseconds initial,
                                                 std::chrono::milliseconds cap);

private:
  void run();
  bool sleep_for(std::chrono::milliseconds d);
  void report_error(const std::string & msg);

  TrackerClientOptions       m_Options;
  TrackerClientCallbacks     m_Callbacks;
  std::thread                m_Thread;
  std::atomic<bool>          m_Running{ false };
  std::atomic<bool>          m_Connected{ false };
  std::atomic<std::uint64_t> m_ConnectCount{ 0 };
  std::atomic<std::uint64_t> m_ErrorCount{ 0 };
  std::atomic<std::uint64_t> m_Received{ 0 };
  std::mutex                 m_Mutex;
  std::condition_variable    m_Cv;
  int                        m_Fd = -1;
};

} // namespace petnav::igtl
