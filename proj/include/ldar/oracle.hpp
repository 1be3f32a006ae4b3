// SPDX-License-Identifier: Apache-2.0
//
// External answering oracle. One JSON record per line in each direction:
//   request  {"id": ..., "selection": [indices], "meta": {...}}
//   response {"id": ..., "correct": true|false}
// spoken either over a child process's stdin/stdout or as an HTTP POST body.
#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ldar/environ.hpp"
#include "ldar/errors.hpp"

namespace ldar {

struct OracleRequest {
  std::string id;
  std::vector<std::size_t> selection;
  nlohmann::json meta = nlohmann::json::object();
};

inline std::string encode_request(const OracleRequest& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["selection"] = r.selection;
  j["meta"] = r.meta;
  return j.dump();
}

// Parses one response line and checks it answers `expected_id`.
inline bool decode_response(const std::string& line, const std::string& expected_id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("oracle: malformed response: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("oracle: response is not an object");
  if (!j.contains("correct") || !j["correct"].is_boolean()) throw ProtocolError("oracle: response lacks boolean 'correct'");
  if (!j.contains("id") || !j["id"].is_string()) throw ProtocolError("oracle: response lacks string 'id'");
  if (j["id"].get<std::string>() != expected_id)
    throw ProtocolError("oracle: response id '" + j["id"].get<std::string>() + "' does not match request '" +
                        expected_id + "'");
  return j["correct"].get<bool>();
}

class OracleTransport {
 public:
  virtual ~OracleTransport() = default;
  virtual bool round_trip(const OracleRequest& request) = 0;
};

// Child process started through /bin/sh -c. Requests are serialized: one
// line out, one line back.
class SubprocessTransport : public OracleTransport {
 public:
  SubprocessTransport(std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : command_(std::move(command)), timeout_(timeout) {
    start();
  }
  ~SubprocessTransport() override { stop(); }
  SubprocessTransport(const SubprocessTransport&) = delete;
  SubprocessTransport& operator=(const SubprocessTransport&) = delete;

  bool round_trip(const OracleRequest& request) override {
    std::lock_guard lock(mu_);
    if (pid_ <= 0) throw OracleError("oracle: process is not running");
    const std::string line = encode_request(request) + "\n";
    write_all(line);
    return decode_response(read_line(), request.id);
  }

 private:
  void start() {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw OracleError("oracle: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw OracleError("oracle: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    // A dead child must surface as an error, not kill us with SIGPIPE.
    signal(SIGPIPE, SIG_IGN);
  }

  void stop() {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      if (waitpid(pid_, &status, WNOHANG) == 0) {
        kill(pid_, SIGTERM);
        waitpid(pid_, &status, 0);
      }
      pid_ = -1;
    }
  }

  std::string exit_description() {
    int status = 0;
    const pid_t r = waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) return "oracle exited with status " + std::to_string(WEXITSTATUS(status));
      if (WIFSIGNALED(status)) return "oracle killed by signal " + std::to_string(WTERMSIG(status));
    }
    return "oracle closed its output";
  }

  void write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw OracleError("oracle: write failed (" + exit_description() + ")");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw OracleError("oracle: timed out waiting for a response");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int pr = poll(&pfd, 1, static_cast<int>(left.count()));
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw OracleError("oracle: poll failed");
      }
      if (pr == 0) throw OracleError("oracle: timed out waiting for a response");
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw OracleError("oracle: read failed");
      }
      if (n == 0) {
        // Give the child a moment to be reaped so the exit status is known.
        for (int i = 0; i < 50 && pid_ > 0; ++i) {
          int status = 0;
          if (waitpid(pid_, &status, WNOHANG) == pid_) {
            pid_ = -1;
            if (WIFEXITED(status) && WEXITSTATUS(status) != 0)
              throw OracleError("oracle: process exited with status " + std::to_string(WEXITSTATUS(status)));
            if (WIFSIGNALED(status))
              throw OracleError("oracle: process killed by signal " + std::to_string(WTERMSIG(status)));
            throw OracleError("oracle: process exited before answering");
          }
          usleep(10000);
        }
        throw OracleError("oracle: process closed its output");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
  std::mutex mu_;
};

// POSTs the request record to `url` (scheme://host[:port]/path).
class HttpTransport : public OracleTransport {
 public:
  HttpTransport(const std::string& url, std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError("oracle url must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    base_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    timeout_ = timeout;
  }

  bool round_trip(const OracleRequest& request) override {
    httplib::Client client(base_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_).count() % 1000000;
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_connection_timeout(secs, usecs);
    auto res = client.Post(path_, encode_request(request) + "\n", "application/json");
    if (!res) throw OracleError("oracle: HTTP request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw OracleError("oracle: HTTP status " + std::to_string(res->status));
    std::string body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return decode_response(body, request.id);
  }

 private:
  std::string base_;
  std::string path_;
  std::chrono::milliseconds timeout_{60000};
};

// Caches answers by (instance id, sorted distinct selection) and bounds the
// number of concurrent requests to the transport.
class OracleClient {
 public:
  explicit OracleClient(std::unique_ptr<OracleTransport> transport, std::ptrdiff_t max_in_flight = 4)
      : transport_(std::move(transport)), slots_(std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(max_in_flight, 64))) {}

  static std::unique_ptr<OracleClient> subprocess(const std::string& command,
                                                  std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    return std::make_unique<OracleClient>(std::make_unique<SubprocessTransport>(command, timeout));
  }

  static std::unique_ptr<OracleClient> http(const std::string& url,
                                            std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    return std::make_unique<OracleClient>(std::make_unique<HttpTransport>(url, timeout));
  }

  bool query(const Instance& inst, std::span<const std::size_t> selection) {
    std::vector<std::size_t> canon(selection.begin(), selection.end());
    std::sort(canon.begin(), canon.end());
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
    auto key = std::make_pair(inst.id, canon);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    OracleRequest req;
    req.id = inst.id;
    req.selection = canon;
    req.meta = {{"n_passages", inst.size()}, {"token_ratio", token_ratio(inst, canon)}};
    slots_.acquire();
    bool answer = false;
    try {
      answer = transport_->round_trip(req);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    std::lock_guard lock(mu_);
    ++round_trips_;
    cache_.emplace(std::move(key), answer);
    return answer;
  }

  std::size_t round_trips() const {
    std::lock_guard lock(mu_);
    return round_trips_;
  }

 private:
  std::unique_ptr<OracleTransport> transport_;
  std::counting_semaphore<64> slots_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::vector<std::size_t>>, bool> cache_;
  std::size_t round_trips_ = 0;
};

// r(q, R, y): 1 when the simulated (or external) judge answers correctly.
// The simulated result is flipped with probability flip_prob.
inline int reward(const Instance& inst, std::span<const std::size_t> selection, Rng& rng,
                  OracleClient* oracle = nullptr) {
  bool correct = false;
  if (inst.reward_model.kind == RewardKind::external || oracle != nullptr) {
    if (oracle == nullptr) throw OracleError("instance '" + inst.id + "' needs an external oracle");
    check_selection(inst, selection);
    correct = oracle->query(inst, selection);
  } else {
    correct = rule_satisfied(inst, selection);
  }
  if (inst.reward_model.flip_prob > 0.0 && rng.bernoulli(inst.reward_model.flip_prob)) correct = !correct;
  return correct ? 1 : 0;
}

}  // namespace ldar
