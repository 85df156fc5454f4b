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
#include "petnav/igtl/tracker.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>

namespace petnav::igtl
{

namespace
{

constexpr int kPollMs = 50;

std::string
errno_text(const char * what)
{
  return std::string(what) + ": " + std::strerror(errno);
}

bool
send_all(int fd, const std::uint8_t * data, std::size_t n)
{
  while (n > 0)
  {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0)
    {
      if (errno == EINTR)
        continue;
      return false;
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

void
set_nodelay(int fd)
{
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

} // namespace

std::uint16_t
tracker_port_from_env()
{
  const char * v = std::getenv("NAV_TRACKER_PORT");
  if (!v || !*v)
    return kDefaultTrackerPort;
  char *     end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p <= 0 || p > 65535)
    throw std::invalid_argument(std::string("NAV_TRACKER_PORT is not a valid port: ") + v);
  return static_cast<std::uint16_t>(p);
}

// ---------------------------------------------------------------- queue

DropOldestQueue::DropOldestQueue(std::size_t capacity)
  : m_Capacity(capacity)
{
  if (capacity == 0)
    throw std::invalid_argument("queue capacity must be positive");
}

bool
DropOldestQueue::push(Bytes item)
{
  bool evicted = false;
  {
    std::lock_guard lock(m_Mutex);
    if (m_Closed)
      return false;
    if (m_Items.size() == m_Capacity)
    {
      m_Items.pop_front();
      ++m_Dropped;
      evicted = true;
    }
    m_Items.push_back(std::move(item));
  }
  m_Cv.notify_one();
  return evicted;
}

std::optional<Bytes>
DropOldestQueue::pop_wait()
{
  std::unique_lock lock(m_Mutex);
  m_Cv.wait(lock, [&] { return m_Closed || !m_Items.empty(); });
  if (m_Items.empty())
    return std::nullopt;
  Bytes b = std::move(m_Items.front());
  m_Items.pop_front();
  return b;
}

std::optional<Bytes>
DropOldestQueue::try_pop()
{
  std::lock_guard lock(m_Mutex);
  if (m_Items.empty())
    return std::nullopt;
  Bytes b = std::move(m_Items.front());
  m_Items.pop_front();
  return b;
}

void
DropOldestQueue::close()
{
  {
    std::lock_guard lock(m_Mutex);
    m_Closed = true;
    m_Items.clear();
  }
  m_Cv.notify_all();
}

std::size_t
DropOldestQueue::size() const
{
  std::lock_guard lock(m_Mutex);
  return m_Items.size();
}

std::size_t
DropOldestQueue::dropped() const
{
  std::lock_guard lock(m_Mutex);
  return m_Dropped;
}

// ---------------------------------------------------------------- server

struct TrackerServer::Client
{
  explicit Client(int f, std::size_t capacity)
    : fd(f)
    , queue(capacity)
  {}

  int               fd;
  DropOldestQueue   queue;
  std::thread       writer;
  std::atomic<bool> finished{ false };
};

TrackerServer::TrackerServer(TrackerServerOptions opts)
  : m_Options(std::move(opts))
{
  if (m_Options.client_queue_capacity == 0)
    throw std::invalid_argument("client queue capacity must be positive");
}

TrackerServer::~TrackerServer()
{
  stop();
}

void
TrackerServer::start()
{
  if (m_Running)
    return;
  m_ListenFd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (m_ListenFd < 0)
    throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(m_ListenFd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(m_Options.port);
  if (::inet_pton(AF_INET, m_Options.bind_address.c_str(), &addr.sin_addr) != 1)
  {
    ::close(m_ListenFd);
    m_ListenFd = -1;
    throw TransportError("invalid bind address " + m_Options.bind_address);
  }
  if (::bind(m_ListenFd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) < 0 || ::listen(m_ListenFd, 16) < 0)
  {
    const std::string msg = errno_text("bind") + " (port " + std::to_string(m_Options.port) + ")";
    ::close(m_ListenFd);
    m_ListenFd = -1;
    throw TransportError(msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(m_ListenFd, reinterpret_cast<sockaddr *>(&addr), &len);
  m_Port = ntohs(addr.sin_port);

  m_Running = true;
  m_AcceptThread = std::thread([this] { accept_loop(); });
}

void
TrackerServer::accept_loop()
{
  while (m_Running)
  {
    pollfd pfd{ m_ListenFd, POLLIN, 0 };
    const int r = ::poll(&pfd, 1, kPollMs);
    if (r <= 0 || !(pfd.revents & POLLIN))
      continue;
    const int fd = ::accept(m_ListenFd, nullptr, nullptr);
    if (fd < 0)
      continue;
    set_nodelay(fd);
    if (m_Options.send_buffer_bytes > 0)
      ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &m_Options.send_buffer_bytes, sizeof(int));

    auto client = std::make_shared<Client>(fd, m_Options.client_queue_capacity);
    client->writer = std::thread([c = client.get()] {
      while (auto msg = c->queue.pop_wait())
      {
        if (!send_all(c->fd, msg->data(), msg->size()))
          break;
      }
      c->finished = true;
      c->queue.close();
    });
    {
      std::lock_guard lock(m_ClientsMutex);
      m_Clients.push_back(std::move(client));
    }
    m_ClientsCv.notify_all();
  }
}

void
TrackerServer::reap_finished()
{
  std::vector<std::shared_ptr<Client>> dead;
  {
    std::lock_guard lock(m_ClientsMutex);
    auto it = std::partition(m_Clients.begin(), m_Clients.end(), [](const auto & c) { return !c->finished; });
    dead.assign(it, m_Clients.end());
    m_Clients.erase(it, m_Clients.end());
    for (const auto & c : dead)
      m_DroppedFromClosed += c->queue.dropped();
  }
  for (auto & c : dead)
  {
    c->writer.join();
    ::close(c->fd);
  }
}

void
TrackerServer::stop()
{
  if (!m_Running.exchange(false))
    return;
  if (m_AcceptThread.joinable())
    m_AcceptThread.join();
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lock(m_ClientsMutex);
    clients.swap(m_Clients);
  }
  for (auto & c : clients)
  {
    c->queue.close();
    ::shutdown(c->fd, SHUT_RDWR);
    c->writer.join();
    ::close(c->fd);
  }
  ::close(m_ListenFd);
  m_ListenFd = -1;
  m_ClientsCv.notify_all();
}

void
TrackerServer::publish(const Bytes & message)
{
  reap_finished();
  std::lock_guard lock(m_ClientsMutex);
  for (auto & c : m_Clients)
    c->queue.push(message);
  ++m_Published;
}

void
TrackerServer::publish_pose(const std::string & device, double timestamp, const RigidTransform & pose)
{
  publish(encode_transform(device, timestamp, pose));
}

std::size_t
TrackerServer::client_count() const
{
  std::lock_guard lock(m_ClientsMutex);
  return static_cast<std::size_t>(
    std::count_if(m_Clients.begin(), m_Clients.end(), [](const auto & c) { return !c->finished; }));
}

bool
TrackerServer::wait_for_clients(std::size_t n, std::chrono::milliseconds timeout) const
{
  std::unique_lock lock(m_ClientsMutex);
  return m_ClientsCv.wait_for(lock, timeout, [&] { return m_Clients.size() >= n; });
}

std::size_t
TrackerServer::total_dropped() const
{
  std::lock_guard lock(m_ClientsMutex);
  std::size_t n = m_DroppedFromClosed;
  for (const auto & c : m_Clients)
    n += c->queue.dropped();
  return n;
}

// ---------------------------------------------------------------- client

TrackerClient::TrackerClient(TrackerClientOptions opts, TrackerClientCallbacks callbacks)
  : m_Options(std::move(opts))
  , m_Callbacks(std::move(callbacks))
{}

TrackerClient::~TrackerClient()
{
  stop();
}

std::chrono::milliseconds
TrackerClient::backoff_delay(std::size_t n, std::chrono::milliseconds initial, std::chrono::milliseconds cap)
{
  auto d = initial;
  for (std::size_t i = 0; i < n && d < cap; ++i)
    d *= 2;
  return std::min(d, cap);
}

void
TrackerClient::start()
{
  if (m_Running.exchange(true))
    return;
  m_Thread = std::thread([this] { run(); });
}

void
TrackerClient::stop()
{
  if (!m_Running.exchange(false))
    return;
  m_Cv.notify_all();
  if (m_Thread.joinable())
    m_Thread.join();
}

bool
TrackerClient::sleep_for(std::chrono::milliseconds d)
{
  std::unique_lock lock(m_Mutex);
  m_Cv.wait_for(lock, d, [&] { return !m_Running.load(); });
  return m_Running;
}

void
TrackerClient::report_error(const std::string & msg)
{
  ++m_ErrorCount;
  if (m_Callbacks.on_error)
    m_Callbacks.on_error(msg);
}

namespace
{

// Non-blocking connect bounded by timeout; returns fd or -1 with message.
int
connect_with_timeout(const std::string & host, std::uint16_t port, std::chrono::milliseconds timeout,
                     std::string & err)
{
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo * res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
  {
    err = "cannot resolve " + host + ": " + ::gai_strerror(rc);
    return -1;
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0)
  {
    err = errno_text("socket");
    ::freeaddrinfo(res);
    return -1;
  }
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0 && errno == EINPROGRESS)
  {
    pollfd pfd{ fd, POLLOUT, 0 };
    rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc <= 0)
    {
      err = "connect to " + host + ":" + std::to_string(port) + " timed out";
      ::close(fd);
      return -1;
    }
    int       so = 0;
    socklen_t len = sizeof(so);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &so, &len);
    if (so != 0)
    {
      err = "connect to " + host + ":" + std::to_string(port) + ": " + std::strerror(so);
      ::close(fd);
      return -1;
    }
  }
  else if (rc < 0)
  {
    err = errno_text("connect");
    ::close(fd);
    return -1;
  }
  ::fcntl(fd, F_SETFL, flags);
  set_nodelay(fd);
  return fd;
}

} // namespace

void
TrackerClient::run()
{
  std::size_t failures = 0;
  while (m_Running)
  {
    std::string err;
    const int   fd = connect_with_timeout(m_Options.host, m_Options.port, m_Options.connect_timeout, err);
    if (fd < 0)
    {
      report_error(err);
      if (!sleep_for(backoff_delay(failures++, m_Options.initial_backoff, m_Options.max_backoff)))
        break;
      continue;
    }

    failures = 0;
    ++m_ConnectCount;
    m_Connected = true;
    if (m_Callbacks.on_connection)
      m_Callbacks.on_connection(true);

    StreamDecoder                    decoder;
    std::array<std::uint8_t, 16384>  buf{};
    while (m_Running)
    {
      pollfd pfd{ fd, POLLIN, 0 };
      const int r = ::poll(&pfd, 1, kPollMs);
      if (r < 0 && errno != EINTR)
      {
        report_error(errno_text("poll"));
        break;
      }
      if (r <= 0)
        continue;
      const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
      if (n == 0)
      {
        report_error("tracker server closed the connection");
        break;
      }
      if (n < 0)
      {
        if (errno == EINTR)
          continue;
        report_error(errno_text("recv"));
        break;
      }
      decoder.feed(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
      bool protocolFailure = false;
      try
      {
        while (auto msg = decoder.next())
        {
          ++m_Received;
          if (auto * t = std::get_if<TransformMessage>(&*msg))
          {
            try
            {
              t->validate();
            }
            catch (const ProtocolError & e)
            {
              report_error(std::string("dropped pose: ") + e.what());
              continue;
            }
            if (m_Callbacks.on_transform)
              m_Callbacks.on_transform(*t);
          }
          else if (auto * s = std::get_if<StatusMessage>(&*msg))
          {
            if (m_Callbacks.on_status)
              m_Callbacks.on_status(*s);
          }
          else if (m_Callbacks.on_unknown)
          {
            m_Callbacks.on_unknown(std::get<UnknownMessage>(*msg));
          }
        }
      }
      catch (const ProtocolError & e)
      {
        report_error(std::string("protocol error: ") + e.what());
        protocolFailure = true;
      }
      if (protocolFailure)
        break;
    }
    ::close(fd);
    m_Connected = false;
    if (m_Callbacks.on_connection)
      m_Callbacks.on_connection(false);
    if (m_Running && !sleep_for(backoff_delay(failures++, m_Options.initial_backoff, m_Options.max_backoff)))
      break;
  }
}

} // namespace petnav::igtl
