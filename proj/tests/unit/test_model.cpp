#include <doctest.h>

#include "biaslens/error.hpp"
#include "biaslens/model.hpp"
#include "biaslens/rng.hpp"
#include "support/fixtures.hpp"

using namespace biaslens;

TEST_CASE("toy model construction") {
  ToyLm a(42, 4, 16), b(42, 4, 16), c(43, 4, 16);
  CHECK(a.encode("hello") == b.encode("hello"));
  CHECK(a.encode("hello") != c.encode("hello"));
  CHECK_THROWS_AS(ToyLm(42, 0, 16), InvalidArgument);
  CHECK_THROWS_AS(ToyLm(42, 4, 1), InvalidArgument);
  CHECK(a.info().n_layers == 4);
  CHECK(a.info().hidden_dim == 16);
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("toy encode") {
  ToyLm m(42, 4, 16);
  CHECK(m.encode("a").size() == 16);
  CHECK(m.encode("a b") != m.encode("b a"));
  CHECK_THROWS_AS(m.encode(""), InvalidArgument);
  CHECK_THROWS_AS(m.encode("   \t "), InvalidArgument);
  CHECK(m.encode("a  b") == m.encode("a b"));
}

TEST_CASE("forward_all chains layer_forward") {
  ToyLm m(42, 4, 16);
  const auto acts = forward_all(m, "the doctor is in");
  REQUIRE(acts.size() == 4);
  CHECK(acts[0] == m.encode("the doctor is in"));
  CHECK(acts[3] == m.layer_forward(3, m.layer_forward(2, m.layer_forward(1, m.encode("the doctor is in")))));
  CHECK(forward_all(m, "the doctor is in") == acts);
  CHECK_THROWS_AS(m.layer_forward(0, acts[0]), InvalidArgument);
  CHECK_THROWS_AS(m.layer_forward(4, acts[0]), InvalidArgument);
  CHECK_THROWS_AS(m.layer_forward(1, Vector::Ones(3)), InvalidArgument);
}

TEST_CASE("toy activations stay bounded") {
  for (std::uint64_t seed : {1ULL, 42ULL, 1234ULL}) {
    ToyLm m(seed, 6, 12);
    Rng rng(seed);
    const double c = 5 * m.residual_bound();
    for (int i = 0; i < 1000; ++i) {
      Vector a = fixtures::random_gaussian(rng, 12, rng.uniform(0.01, 10.0));
      const double n1 = a.norm();
      for (int l = 1; l < 6; ++l) {
        const Vector next = m.apply_layer(l, a);
        CHECK((next - a).norm() <= m.residual_bound() + 1e-9);
        a = next;
      }
      CHECK(a.norm() <= 2 * n1 + c);
    }
  }
}

TEST_CASE("toy log probabilities") {
  ToyLm m(42, 4, 16);
  const auto lp = m.token_logprobs("the nurse said", "she was tired");
  REQUIRE(lp.size() == 3);
  for (double x : lp) {
    CHECK(std::isfinite(x));
    CHECK(x <= 0.0);
  }
  CHECK(m.token_logprobs("the nurse said", "she was tired") == lp);
  CHECK_THROWS_AS(m.token_logprobs("the nurse said", ""), InvalidArgument);
}

TEST_CASE("models without log probabilities say so") {
  fixtures::FixedModel m(Vector::Ones(3), 1);
  CHECK_THROWS_AS(m.token_logprobs("a", "b"), Error);
}

TEST_CASE("whitespace tokens") {
  CHECK(whitespace_tokens("  a bb\tc\n") == std::vector<std::string>{"a", "bb", "c"});
  CHECK(whitespace_tokens("").empty());
}
