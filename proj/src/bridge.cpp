#include "biaslens/bridge.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <json.hpp>

namespace biaslens::bridge {

using nlohmann::json;

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw ProtocolError(what + ": " + std::strerror(errno));
}

void ignore_sigpipe() {
  static const bool once = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

json parse_frame(std::string_view frame) {
  json j = json::parse(frame, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw ProtocolError("malformed frame: " + std::string(frame.substr(0, 120)));
  }
  if (auto it = j.find("error"); it != j.end()) {
    throw ProtocolError("peer error: " + (it->is_string() ? it->get<std::string>() : it->dump()));
  }
  return j;
}

Vector vector_from_json(const json& arr, int dim, const char* field) {
  if (!arr.is_array()) throw ProtocolError(std::string("frame field '") + field + "' is not an array");
  if (dim >= 0 && static_cast<int>(arr.size()) != dim) {
    throw ProtocolError(std::string("protocol violation: '") + field + "' has dimension " +
                        std::to_string(arr.size()) + ", expected " + std::to_string(dim));
  }
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ProtocolError(std::string("non-numeric entry in '") + field + "'");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    if (!std::isfinite(v(static_cast<Eigen::Index>(i)))) throw ProtocolError("non-finite vector entry");
  }
  return v;
}

}  // namespace

FdChannel::FdChannel(int read_fd, int write_fd, bool owns) : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {
  ignore_sigpipe();
}

FdChannel::~FdChannel() {
  if (!owns_) return;
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
}

void FdChannel::write_line(std::string_view line) {
  if (line.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds 16 MiB limit");
  if (line.find('\n') != std::string_view::npos) throw ProtocolError("frame contains an embedded newline");
  if (write_fd_ < 0) throw ProtocolError("channel closed for writing");
  std::string out(line);
  out.push_back('\n');
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::write(write_fd_, out.data() + done, out.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("bridge write failed");
    }
    done += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdChannel::read_line() {
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (buffer_.size() > kMaxFrameBytes) throw ProtocolError("incoming frame exceeds 16 MiB limit");
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("bridge read failed");
    }
    if (n == 0) {
      if (!buffer_.empty()) throw ProtocolError("stream ended inside a frame");
      return std::nullopt;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::string format_number(double v) {
  if (!std::isfinite(v)) throw ProtocolError("cannot encode non-finite number");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", kWireDigits, v);
  return buf;
}

std::string format_vector(const Vector& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += format_number(v(i));
  }
  out.push_back(']');
  return out;
}

Vector wire_round(const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::strtod(format_number(v(i)).c_str(), nullptr);
  return out;
}

std::string info_request() { return R"({"op":"info"})"; }
std::string shutdown_request() { return R"({"op":"shutdown"})"; }

std::string encode_request(std::string_view text) {
  return json{{"op", "encode"}, {"text", std::string(text)}}.dump();
}

std::string layer_request(int layer, const Vector& v) {
  return R"({"op":"layer","l":)" + std::to_string(layer) + R"(,"vec":)" + format_vector(v) + "}";
}

std::string logprobs_request(std::string_view prompt, std::string_view continuation) {
  return json{{"op", "logprobs"}, {"prompt", std::string(prompt)}, {"continuation", std::string(continuation)}}.dump();
}

std::string error_frame(std::string_view message) { return json{{"error", std::string(message)}}.dump(); }

Vector parse_vector_reply(std::string_view frame, int dim) {
  const json j = parse_frame(frame);
  auto it = j.find("vec");
  if (it == j.end()) throw ProtocolError("protocol violation: reply lacks 'vec'");
  return vector_from_json(*it, dim, "vec");
}

BridgeModel::BridgeModel(std::unique_ptr<LineChannel> channel, pid_t child)
    : channel_(std::move(channel)), child_(child) {
  const json j = parse_frame(call(info_request()));
  auto layers = j.find("layers");
  auto dim = j.find("dim");
  if (layers == j.end() || dim == j.end() || !layers->is_number_integer() || !dim->is_number_integer()) {
    throw ProtocolError("protocol violation: info reply lacks integer 'layers'/'dim'");
  }
  info_.n_layers = layers->get<int>();
  info_.hidden_dim = dim->get<int>();
  info_.name = j.value("name", std::string("bridge"));
  deterministic_ = j.value("deterministic", false);
  if (info_.n_layers < 1 || info_.hidden_dim < 1) {
    throw ProtocolError("protocol violation: info reports non-positive layers/dim");
  }
}

BridgeModel::~BridgeModel() {
  try {
    shutdown();
  } catch (...) {
  }
  channel_.reset();
  if (child_ > 0) {
    int status = 0;
    ::waitpid(child_, &status, 0);
  }
}

std::string BridgeModel::call(const std::string& request) {
  std::lock_guard lock(mutex_);
  if (closed_) throw ProtocolError("bridge connection already shut down");
  channel_->write_line(request);
  auto reply = channel_->read_line();
  if (!reply) throw ProtocolError("peer closed the connection");
  return std::move(*reply);
}

Vector BridgeModel::encode(std::string_view text) {
  return parse_vector_reply(call(encode_request(text)), info_.hidden_dim);
}

Vector BridgeModel::layer_forward(int layer, const Vector& activation) {
  if (activation.size() != info_.hidden_dim) {
    throw InvalidArgument("layer_forward: activation dimension " + std::to_string(activation.size()) +
                          " != " + std::to_string(info_.hidden_dim));
  }
  return parse_vector_reply(call(layer_request(layer, activation)), info_.hidden_dim);
}

std::vector<double> BridgeModel::token_logprobs(std::string_view prompt, std::string_view continuation) {
  const json j = parse_frame(call(logprobs_request(prompt, continuation)));
  auto it = j.find("lp");
  if (it == j.end()) throw ProtocolError("protocol violation: reply lacks 'lp'");
  const Vector v = vector_from_json(*it, -1, "lp");
  return {v.data(), v.data() + v.size()};
}

std::string BridgeModel::fingerprint() const {
  return "bridge:" + info_.name + ":" + std::to_string(info_.n_layers) + "x" + std::to_string(info_.hidden_dim);
}

void BridgeModel::shutdown() {
  if (closed_) return;
  const std::string reply = call(shutdown_request());
  closed_ = true;
  const json j = parse_frame(reply);
  if (!j.value("ok", false)) throw ProtocolError("protocol violation: shutdown not acknowledged");
}

namespace {

std::unique_ptr<BridgeModel> spawn_child(const std::string& command) {
  const auto args = whitespace_tokens(command);
  if (args.empty()) throw ProtocolError("exec endpoint has no program");
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) sys_fail("pipe");
  if (::pipe(from_child) != 0) sys_fail("pipe");
  const pid_t pid = ::fork();
  if (pid < 0) sys_fail("fork");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    std::fprintf(stderr, "bridge: exec %s failed: %s\n", argv[0], std::strerror(errno));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  auto channel = std::make_unique<FdChannel>(from_child[0], to_child[1]);
  try {
    return std::make_unique<BridgeModel>(std::move(channel), pid);
  } catch (...) {
    int status = 0;
    ::kill(pid, SIGTERM);
    ::waitpid(pid, &status, 0);
    throw;
  }
}

std::unique_ptr<BridgeModel> connect_tcp(const std::string& spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos) throw ProtocolError("tcp endpoint must be host:port");
  const std::string host = spec.substr(0, colon);
  const std::string port = spec.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ProtocolError("cannot resolve " + spec + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError("cannot connect to " + spec);
  return std::make_unique<BridgeModel>(std::make_unique<FdChannel>(fd, fd));
}

}  // namespace

std::unique_ptr<BridgeModel> bridge_connect(const std::string& endpoint) {
  ignore_sigpipe();
  if (endpoint.rfind("exec:", 0) == 0) return spawn_child(endpoint.substr(5));
  if (endpoint.rfind("tcp:", 0) == 0) return connect_tcp(endpoint.substr(4));
  throw ProtocolError("unknown endpoint scheme (use exec:... or tcp:host:port): " + endpoint);
}

namespace {

std::string handle(LayerwiseModel& model, const json& req, bool& stop) {
  const auto& info = model.info();
  const std::string op = req.value("op", std::string());
  if (op == "info") {
    return json{{"layers", info.n_layers},
                {"dim", info.hidden_dim},
                {"name", info.name},
                {"deterministic", model.deterministic()}}
        .dump();
  }
  if (op == "encode") {
    auto t = req.find("text");
    if (t == req.end() || !t->is_string()) return error_frame("encode: missing 'text'");
    return R"({"vec":)" + format_vector(model.encode(t->get<std::string>())) + "}";
  }
  if (op == "layer") {
    auto l = req.find("l");
    auto v = req.find("vec");
    if (l == req.end() || !l->is_number_integer() || v == req.end()) return error_frame("layer: needs 'l' and 'vec'");
    const Vector a = vector_from_json(*v, info.hidden_dim, "vec");
    return R"({"vec":)" + format_vector(model.layer_forward(l->get<int>(), a)) + "}";
  }
  if (op == "logprobs") {
    const auto lp = model.token_logprobs(req.value("prompt", std::string()), req.value("continuation", std::string()));
    std::string out = R"({"lp":[)";
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (i) out.push_back(',');
      out += format_number(lp[i]);
    }
    return out + "]}";
  }
  if (op == "shutdown") {
    stop = true;
    return R"({"ok":true})";
  }
  return error_frame("unknown op '" + op + "'");
}

}  // namespace

void serve(LayerwiseModel& model, LineChannel& channel) {
  bool stop = false;
  while (!stop) {
    auto line = channel.read_line();
    if (!line) return;
    std::string reply;
    json req = json::parse(*line, nullptr, false);
    if (req.is_discarded() || !req.is_object()) {
      reply = error_frame("malformed frame");
    } else {
      try {
        reply = handle(model, req, stop);
      } catch (const std::exception& e) {
        reply = error_frame(e.what());
      }
    }
    channel.write_line(reply);
  }
}

void serve_tcp_once(LayerwiseModel& model, int port, const std::function<void(int)>& on_listen) {
  ignore_sigpipe();
  const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (lfd < 0) sys_fail("socket");
  int yes = 1;
  ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(lfd, 1) != 0) {
    ::close(lfd);
    sys_fail("bind/listen");
  }
  socklen_t len = sizeof addr;
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &len);
  if (on_listen) on_listen(ntohs(addr.sin_port));
  const int cfd = ::accept(lfd, nullptr, nullptr);
  ::close(lfd);
  if (cfd < 0) sys_fail("accept");
  FdChannel channel(cfd, cfd);
  serve(model, channel);
}

}  // namespace biaslens::bridge
