#include <doctest.h>

#include <json.hpp>
#include <future>
#include <thread>
#include <unistd.h>

#include "biaslens/bridge.hpp"
#include "biaslens/error.hpp"
#include "biaslens/model.hpp"
#include "biaslens/rng.hpp"
#include "support/fixtures.hpp"

using namespace biaslens;
using namespace biaslens::bridge;

#ifndef BIASLENS_TOY_PEER
#error "BIASLENS_TOY_PEER must name the toy peer executable"
#endif

namespace {

struct PipePair {
  int to_peer[2];
  int from_peer[2];
  PipePair() {
    REQUIRE(::pipe(to_peer) == 0);
    REQUIRE(::pipe(from_peer) == 0);
  }
  std::unique_ptr<FdChannel> client() { return std::make_unique<FdChannel>(from_peer[0], to_peer[1]); }
  std::unique_ptr<FdChannel> server() { return std::make_unique<FdChannel>(to_peer[0], from_peer[1]); }
};

// Serves a model on a background thread for the lifetime of the object.
class LoopbackPeer {
 public:
  explicit LoopbackPeer(LayerwiseModel& model) {
    auto ch = pipes_.server();
    thread_ = std::thread([&model, ch = std::move(ch)]() mutable { serve(model, *ch); });
  }
  ~LoopbackPeer() { thread_.join(); }
  std::unique_ptr<FdChannel> client() { return pipes_.client(); }

 private:
  PipePair pipes_;
  std::thread thread_;
};

// Answers each request with a canned reply chosen by op.
class ScriptedPeer {
 public:
  explicit ScriptedPeer(std::function<std::string(const nlohmann::json&)> reply) {
    auto ch = pipes_.server();
    thread_ = std::thread([reply = std::move(reply), ch = std::move(ch)]() mutable {
      while (auto line = ch->read_line()) {
        const auto req = nlohmann::json::parse(*line);
        ch->write_line(reply(req));
        if (req.value("op", "") == "shutdown") break;
      }
    });
  }
  ~ScriptedPeer() { thread_.join(); }
  std::unique_ptr<FdChannel> client() { return pipes_.client(); }

 private:
  PipePair pipes_;
  std::thread thread_;
};

}  // namespace

TEST_CASE("wire encoding") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-2.5e-12) == "-2.5e-12");
  Rng rng(51);
  for (int i = 0; i < 500; ++i) {
    const Vector v = fixtures::random_gaussian(rng, 8, std::pow(10.0, rng.uniform(-8, 8)));
    const Vector once = wire_round(v);
    CHECK(wire_round(once) == once);
    CHECK(parse_vector_reply(R"({"vec":)" + format_vector(v) + "}", 8) == once);
    CHECK(((once - v).array().abs() <= 5e-9 * v.array().abs()).all());
  }
  CHECK_THROWS_AS(format_vector(Vector::Constant(2, std::nan(""))), ProtocolError);
}

TEST_CASE("reply parsing") {
  CHECK_THROWS_AS(parse_vector_reply(R"({"vec":[1,2]})", 3), ProtocolError);
  CHECK_THROWS_AS(parse_vector_reply(R"({"vec":[1,"x",3]})", 3), ProtocolError);
  CHECK_THROWS_AS(parse_vector_reply("not json", 3), ProtocolError);
  try {
    (void)parse_vector_reply(error_frame("boom"), 3);
    FAIL("expected a peer error");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("boom") != std::string::npos);
  }
}

TEST_CASE("loopback bridge reproduces the toy model") {
  ToyLm local(42, 4, 16);
  LoopbackPeer peer(local);
  BridgeModel remote(peer.client());
  CHECK(remote.info().n_layers == 4);
  CHECK(remote.info().hidden_dim == 16);
  CHECK(remote.deterministic());
  const auto a = forward_all(local, "the nurse prepared the chart");
  const auto b = forward_all(remote, "the nurse prepared the chart");
  REQUIRE(a.size() == b.size());
  for (std::size_t l = 0; l < a.size(); ++l) CHECK((a[l] - b[l]).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(forward_all(remote, "the nurse prepared the chart") == b);
  const auto lp = remote.token_logprobs("the nurse", "said hello");
  const auto lp_local = local.token_logprobs("the nurse", "said hello");
  REQUIRE(lp.size() == lp_local.size());
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(std::abs(lp[i] - lp_local[i]) <= 1e-6);
  // Peer-side failures come back as errors, not crashes.
  CHECK_THROWS_AS(remote.layer_forward(4, a[0]), ProtocolError);
  CHECK_THROWS_AS(remote.layer_forward(1, Vector::Ones(15)), InvalidArgument);
  remote.shutdown();
}

TEST_CASE("info reply is echoed") {
  ScriptedPeer peer([](const nlohmann::json& req) -> std::string {
    const std::string op = req.value("op", "");
    if (op == "info") return R"({"layers":4,"dim":16})";
    if (op == "encode") return R"({"vec":[)" + std::string("1,1,1,1,1,1,1,1,1,1,1,1,1,1,1") + "]}";
    if (op == "shutdown") return R"({"ok":true})";
    return "{}";
  });
  BridgeModel remote(peer.client());
  CHECK(remote.info().n_layers == 4);
  CHECK(remote.info().hidden_dim == 16);
  CHECK_FALSE(remote.deterministic());
  CHECK_THROWS_AS(remote.encode("hello"), ProtocolError);
  remote.shutdown();
}

TEST_CASE("malformed info is rejected") {
  ScriptedPeer peer([](const nlohmann::json&) -> std::string { return R"({"layers":"four"})"; });
  CHECK_THROWS_AS(BridgeModel(peer.client()), ProtocolError);
}

TEST_CASE("tcp bridge") {
  ToyLm local(7, 3, 8);
  std::promise<int> port;
  auto port_future = port.get_future();
  std::thread server([&] { serve_tcp_once(local, 0, [&](int p) { port.set_value(p); }); });
  {
    auto remote = bridge_connect("tcp:127.0.0.1:" + std::to_string(port_future.get()));
    CHECK(remote->info().hidden_dim == 8);
    CHECK((remote->encode("hello there") - local.encode("hello there")).cwiseAbs().maxCoeff() <= 1e-6);
  }
  server.join();
}

TEST_CASE("exec bridge") {
  auto remote = bridge_connect(std::string("exec:") + BIASLENS_TOY_PEER + " --seed 42 --layers 4 --dim 16");
  ToyLm local(42, 4, 16);
  const auto a = forward_all(local, "hello world");
  const auto b = forward_all(*remote, "hello world");
  for (std::size_t l = 0; l < a.size(); ++l) CHECK((a[l] - b[l]).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK_THROWS_AS(bridge_connect("exec:/nonexistent/peer"), ProtocolError);
  CHECK_THROWS_AS(bridge_connect("carrier-pigeon:home"), ProtocolError);
}
