#include <doctest.h>

#include "biaslens/binary_io.hpp"
#include "biaslens/cav.hpp"
#include "biaslens/error.hpp"
#include "biaslens/rng.hpp"
#include "support/fixtures.hpp"

using namespace biaslens;
using doctest::Approx;

namespace {

// Two 2-D blobs separated by the line x0 = 0 with a gap of at least 1.
std::pair<Matrix, std::vector<int>> blobs(std::uint64_t seed, int per_class) {
  Rng rng(seed);
  Matrix x(2 * per_class, 2);
  std::vector<int> y;
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 1 : 0;
    const double along = 0.5 + std::abs(rng.normal());
    x(i, 0) = label == 1 ? along : -along;
    x(i, 1) = 2.0 * rng.normal();
    y.push_back(label);
  }
  return {x, y};
}

}  // namespace

TEST_CASE("sigmoid and logit") {
  CHECK(sigmoid(0.0) == 0.5);
  for (double p : {0.01, 0.3, 0.5, 0.999}) CHECK(sigmoid(logit(p)) == Approx(p).epsilon(1e-12));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
  CHECK_THROWS_AS(logit(1.0), InvalidArgument);
}

TEST_CASE("stratified split") {
  std::vector<int> labels(150, 1);
  labels.resize(250, 0);
  const auto s = stratified_split(labels, 11, 0.2);
  CHECK(s.train.size() + s.test.size() == 250);
  int test_pos = 0;
  for (auto i : s.test) test_pos += labels[i];
  CHECK(test_pos == 30);
  CHECK(s.test.size() == 50);
  std::vector<int> seen(250, 0);
  for (auto i : s.train) ++seen[i];
  for (auto i : s.test) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  std::vector<int> flipped(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) flipped[i] = 1 - labels[i];
  const auto f = stratified_split(flipped, 11, 0.2);
  CHECK(f.train == s.train);
  CHECK(f.test == s.test);
}

TEST_CASE("separable blobs reach perfect test accuracy") {
  const auto [x, y] = blobs(1, 100);
  const auto c = train_layer_classifier(x, y, 5);
  CHECK(c.test_accuracy == 1.0);
  CHECK(c.train_accuracy == 1.0);
  // Any separating line agrees with the learned one on every sample.
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const bool predicted = x.row(i).dot(c.w) + c.b > 0;
    CHECK(predicted == (x(i, 0) > 0));
  }
}

TEST_CASE("loss never increases across accepted steps") {
  const auto [x, y] = blobs(2, 60);
  const auto c = train_layer_classifier(x, y, 3);
  REQUIRE(c.loss_history.size() >= 2);
  for (std::size_t i = 1; i < c.loss_history.size(); ++i) CHECK(c.loss_history[i] <= c.loss_history[i - 1]);
  CHECK(c.iterations <= 2000);
}

TEST_CASE("label flip negates the classifier") {
  Rng rng(8);
  Matrix x(80, 3);
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y.push_back(x(i, 0) + 0.5 * x(i, 1) + 0.3 * rng.normal() > 0 ? 1 : 0);
  }
  std::vector<int> flipped(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
  const auto a = train_layer_classifier(x, y, 4);
  const auto b = train_layer_classifier(x, flipped, 4);
  CHECK((a.w + b.w).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(std::abs(a.b + b.b) <= 1e-4);
}

TEST_CASE("training errors") {
  const auto [x, y] = blobs(3, 20);
  std::vector<int> ones(y.size(), 1);
  CHECK_THROWS_AS(train_layer_classifier(x, ones, 1), InvalidArgument);
  const auto [xs, ys] = blobs(3, 5);
  CHECK_THROWS_AS(train_layer_classifier(xs, ys, 1), InvalidArgument);
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(train_layer_classifier(bad, y, 1), InvalidArgument);
  CHECK_THROWS_AS(train_layer_classifier(x, std::vector<int>(3, 1), 1), InvalidArgument);
}

TEST_CASE("cav stack on toy activations") {
  ToyLm m(42, 4, 16);
  const auto set = fixtures::separable_activation_set(5, m, 150, 1.0, 1.0);
  const auto stack = derive_cav_stack(set, 9);
  REQUIRE(stack.cavs.size() == 4);
  for (int l = 1; l <= 4; ++l) {
    CHECK(stack.layer(l).layer == l);
    CHECK(std::abs(stack.layer(l).direction.norm() - 1.0) <= 1e-12);
  }
  CHECK(stack.mean_test_accuracy() >= 0.99);
  const auto again = derive_cav_stack(set, 9, 4);
  CHECK(again.cavs == stack.cavs);
}

TEST_CASE("cav confidence") {
  Cav c;
  c.layer = 1;
  c.direction = Vector::Unit(3, 0);
  c.scale = 2.0;
  c.bias = -1.0;
  Vector a(3);
  a << 0.5, 7.0, -3.0;
  CHECK(cav_confidence(c, a) == 0.5);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const double d = rng.uniform(0.01, 3.0);
    const Vector moved = a + d * c.direction;
    CHECK(cav_confidence(c, moved) > cav_confidence(c, a));
    CHECK(cav_confidence(c, moved) == Approx(sigmoid(c.scale * c.direction.dot(a) + c.scale * d + c.bias)).epsilon(1e-12));
    Vector ortho = fixtures::random_gaussian(rng, 3);
    ortho -= c.direction * c.direction.dot(ortho);
    CHECK(std::abs(cav_confidence(c, moved + ortho) - cav_confidence(c, moved)) <= 1e-9);
  }
}

TEST_CASE("cav persistence") {
  fixtures::TempDir dir("blcv");
  ToyLm m(42, 3, 8);
  const auto stack = derive_cav_stack(fixtures::separable_activation_set(6, m, 40, 1.0, 0.5), 2);
  save_cavs(stack, dir.path() / "c.blcv");
  const auto back = load_cavs(dir.path() / "c.blcv");
  CHECK(back.cavs == stack.cavs);
  for (const auto& c : back.cavs) CHECK(std::abs(c.direction.norm() - 1.0) <= 1e-9);

  const auto bytes = serialize_cavs(stack);
  auto newer = bytes;
  newer[4] ^= 0x02;
  CHECK_THROWS_AS(deserialize_cavs(newer), FormatError);
  auto flipped = bytes;
  flipped[20] ^= 0x01;
  try {
    (void)deserialize_cavs(flipped);
    FAIL("expected checksum error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::Checksum);
    CHECK(e.offset() == bytes.size() - 8);
  }
}
