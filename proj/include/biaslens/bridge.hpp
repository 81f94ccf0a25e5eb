#pragma once

#include <sys/types.h>

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "biaslens/model.hpp"

namespace biaslens::bridge {

/// Largest frame accepted in either direction, excluding the newline.
inline constexpr std::size_t kMaxFrameBytes = std::size_t{16} << 20;
/// Significant digits used for every number on the wire.
inline constexpr int kWireDigits = 9;

/// A newline-delimited byte stream.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Next line without its terminator; nullopt on clean end of stream.
  virtual std::optional<std::string> read_line() = 0;
};

/// Line channel over a pair of POSIX file descriptors (pipe ends or one socket).
class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, bool owns = true);
  ~FdChannel() override;
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line() override;

 private:
  int read_fd_;
  int write_fd_;
  bool owns_;
  std::string buffer_;
};

// Wire encoding helpers. Vectors are written as JSON arrays of decimal
// numbers with kWireDigits significant digits.
std::string format_number(double v);
std::string format_vector(const Vector& v);
/// Value a vector takes after one trip through the wire encoding.
Vector wire_round(const Vector& v);

std::string info_request();
std::string encode_request(std::string_view text);
std::string layer_request(int layer, const Vector& v);
std::string logprobs_request(std::string_view prompt, std::string_view continuation);
std::string shutdown_request();
std::string error_frame(std::string_view message);

/// Parses a `{"vec":[...]}` (or `{"error":...}`) reply, enforcing `dim`.
Vector parse_vector_reply(std::string_view frame, int dim);

/// A model whose calls are forwarded over a bridge connection.
/// One request is in flight at a time.
class BridgeModel final : public LayerwiseModel {
 public:
  explicit BridgeModel(std::unique_ptr<LineChannel> channel, pid_t child = -1);
  ~BridgeModel() override;

  const ModelInfo& info() const override { return info_; }
  Vector encode(std::string_view text) override;
  Vector layer_forward(int layer, const Vector& activation) override;
  std::vector<double> token_logprobs(std::string_view prompt, std::string_view continuation) override;
  bool deterministic() const override { return deterministic_; }
  std::string fingerprint() const override;

  /// Sends `shutdown` and waits for the acknowledgement.
  void shutdown();

 private:
  std::string call(const std::string& request);

  std::unique_ptr<LineChannel> channel_;
  pid_t child_;
  ModelInfo info_;
  bool deterministic_ = false;
  bool closed_ = false;
  std::mutex mutex_;
};

/// Connects to a peer. Endpoints: `exec:<program> [args...]` spawns a child
/// and talks over its stdio; `tcp:<host>:<port>` opens a socket.
std::unique_ptr<BridgeModel> bridge_connect(const std::string& endpoint);

/// Serves `model` over `channel` until `shutdown` or end of stream.
void serve(LayerwiseModel& model, LineChannel& channel);

/// Accepts one TCP connection on `port` (0 picks a free port; the chosen
/// port is passed to `on_listen`) and serves it.
void serve_tcp_once(LayerwiseModel& model, int port, const std::function<void(int)>& on_listen = {});

}  // namespace biaslens::bridge
