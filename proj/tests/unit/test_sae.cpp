#include <doctest.h>

#include "biaslens/binary_io.hpp"
#include "biaslens/error.hpp"
#include "biaslens/numerics.hpp"
#include "biaslens/rng.hpp"
#include "biaslens/sae.hpp"
#include "support/fixtures.hpp"

using namespace biaslens;
using doctest::Approx;

namespace {

SaeEncoder identity_like(Vector theta) {
  SaeEncoder e;
  e.w.resize(3, 2);
  e.w << 1, 0, 0, 1, 1, 1;
  e.b = Vector::Zero(3);
  e.theta = std::move(theta);
  return e;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("jumprelu examples") {
  CHECK(sae_encode(identity_like(Vector::Zero(3)), vec({2, 3})) == vec({2, 3, 5}));
  CHECK(sae_encode(identity_like(vec({0, 0, 10})), vec({2, 3})) == vec({2, 3, 0}));
  // Strict threshold: a pre-activation equal to theta is dropped.
  CHECK(sae_encode(identity_like(vec({2, 0, 0})), vec({2, 3})) == vec({0, 3, 5}));
  CHECK_THROWS_AS(sae_encode(identity_like(Vector::Zero(3)), vec({1, 2, 3})), InvalidArgument);
}

TEST_CASE("encoder matches a naive loop") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    SaeEncoder e;
    e.w.resize(8, 3);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 3; ++c) e.w(r, c) = rng.normal();
    e.b = fixtures::random_gaussian(rng, 8, 0.3);
    e.theta = Vector(8);
    for (int i = 0; i < 8; ++i) e.theta(i) = rng.uniform(0, 0.5);
    const Vector a = fixtures::random_gaussian(rng, 3);
    const Vector z = sae_encode(e, a);
    const Vector pre = e.w * a + e.b;
    for (int r = 0; r < 8; ++r) {
      double h = e.b(r);
      for (int c = 0; c < 3; ++c) h += e.w(r, c) * a(c);
      const double want = h > e.theta(r) ? h : 0.0;
      CHECK(std::abs(z(r) - want) <= 1e-9);
      CHECK((z(r) == 0.0 || z(r) == pre(r)));
    }
  }
}

TEST_CASE("encoder is positively homogeneous without bias or threshold") {
  Rng rng(22);
  auto sae = generate_synthetic_sae(3, 24, 6, 4).encoder;
  sae.theta.setZero();
  for (int i = 0; i < 20; ++i) {
    const Vector a = fixtures::random_gaussian(rng, 6);
    const double alpha = rng.uniform(0.1, 10);
    CHECK((sae_encode(sae, Vector(alpha * a)) - alpha * sae_encode(sae, a)).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("encoder validation") {
  auto e = identity_like(Vector::Zero(3));
  e.theta(0) = -1;
  CHECK_THROWS_AS(e.validate(), InvalidArgument);
  SaeEncoder square;
  square.w = Matrix::Identity(2, 2);
  square.b = Vector::Zero(2);
  square.theta = Vector::Zero(2);
  CHECK_THROWS_AS(square.validate(), InvalidArgument);
}

TEST_CASE("concept vector examples") {
  CHECK(concept_vector("c", vec({1, 2}), vec({1, 2})).values == Vector::Zero(2));
  CHECK(concept_vector("c", vec({1, 0}), vec({0, 1})).values == vec({-1, 1}));
  CHECK(concept_vector("c", vec({3, 4, 0}), vec({0, 3, 4})).values.isApprox(vec({-0.6, -0.2, 0.8}), 1e-12));
  try {
    (void)concept_vector("c", Vector::Zero(2), vec({1, 0}));
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("original") != std::string::npos);
  }
  CHECK_THROWS_AS(concept_vector("c", vec({1, 0}), Vector::Zero(2)), InvalidArgument);
  CHECK_THROWS_AS(concept_vector("c", vec({1, 0}), vec({1, 0, 0})), InvalidArgument);
}

TEST_CASE("concept vector properties") {
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const Vector z1 = fixtures::random_gaussian(rng, 10).cwiseAbs();
    const Vector z2 = fixtures::random_gaussian(rng, 10).cwiseAbs();
    const Vector cv = concept_vector("c", z1, z2).values;
    CHECK(cv.norm() >= 0.0);
    CHECK(cv.norm() <= 2.0 + 1e-12);
    const double a = rng.uniform(0.01, 100), b = rng.uniform(0.01, 100);
    CHECK((concept_vector("c", Vector(a * z1), Vector(b * z2)).values - cv).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK(concept_vector("c", vec({1, 0}), vec({-2, 0})).values.norm() == Approx(2.0));
}

TEST_CASE("salience variants") {
  // Steering adds +10 on the relevant dims on top of shared noise.
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 64;
    Mask relevant(k, false);
    for (int i = 0; i < 8; ++i) relevant[static_cast<std::size_t>(rng.below(k))] = true;
    Vector z_ori = fixtures::random_gaussian(rng, k, 3.0).cwiseAbs();
    Vector z_steer = z_ori;
    for (int i = 0; i < k; ++i)
      if (relevant[static_cast<std::size_t>(i)]) z_steer(i) += 10.0;
    const auto v = salience_variants(z_ori, z_steer, relevant);
    CHECK(v.normalized_difference >= v.difference);
    CHECK(v.difference >= v.steered);
  }
  const Vector z = fixtures::random_gaussian(rng, 16).cwiseAbs();
  const auto same = salience_variants(z, z, Mask(16, true));
  CHECK(same.original == Approx(0.5));
  CHECK(same.difference == Approx(0.5));
  CHECK(same.normalized_difference == Approx(0.5));
}

TEST_CASE("synthetic sae") {
  const auto s = generate_synthetic_sae(5, 96, 16, 10);
  CHECK(s.encoder.features() == 96);
  CHECK(s.encoder.input_dim() == 16);
  CHECK(std::count(s.relevant.begin(), s.relevant.end(), true) == 10);
  CHECK(generate_synthetic_sae(5, 96, 16, 10).encoder == s.encoder);
  CHECK_THROWS_AS(generate_synthetic_sae(5, 96, 16, 0), InvalidArgument);
  CHECK_THROWS_AS(generate_synthetic_sae(5, 16, 16, 4), InvalidArgument);

  const Vector z = sae_encode(s.encoder, s.concept_direction);
  int rel_on = 0, irr_on = 0;
  for (int i = 0; i < 96; ++i) {
    if (z(i) == 0.0) continue;
    (s.relevant[static_cast<std::size_t>(i)] ? rel_on : irr_on)++;
  }
  CHECK(rel_on >= 9);
  CHECK(irr_on <= 8);
}

TEST_CASE("sae persistence") {
  fixtures::TempDir dir("blsa");
  const auto enc = generate_synthetic_sae(9, 40, 8, 5).encoder;
  save_sae(enc, dir.path() / "e.blsa");
  CHECK(load_sae(dir.path() / "e.blsa") == enc);
  CHECK(load_sae(dir.path() / "e.blsa").content_hash() == enc.content_hash());
  auto bytes = serialize_sae(enc);
  bytes.pop_back();
  try {
    (void)deserialize_sae(bytes);
    FAIL("expected truncation");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::Truncated);
  }
}
