// Serves a ToyLm over the bridge protocol, either on stdio or on one TCP
// connection. Used to exercise BridgeModel against a real child process.
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "biaslens/bridge.hpp"
#include "biaslens/model.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ToyLm bridge peer"};
  std::uint64_t seed = 42;
  int layers = 4;
  int dim = 16;
  int listen_port = -1;
  app.add_option("--seed", seed);
  app.add_option("--layers", layers);
  app.add_option("--dim", dim);
  app.add_option("--listen", listen_port, "serve one TCP connection on this port (0 = any) instead of stdio");
  CLI11_PARSE(app, argc, argv);

  try {
    biaslens::ToyLm model(seed, layers, dim);
    if (listen_port >= 0) {
      biaslens::bridge::serve_tcp_once(model, listen_port, [](int port) {
        std::printf("%d\n", port);
        std::fflush(stdout);
      });
    } else {
      biaslens::bridge::FdChannel channel(0, 1, false);
      biaslens::bridge::serve(model, channel);
    }
  } catch (const std::exception& e) {
    std::cerr << "biaslens-toy-peer: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
