#include "biaslens/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biaslens/binary_io.hpp"
#include "biaslens/hash.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

void SaeEncoder::validate() const {
  const auto k = w.rows();
  const auto d = w.cols();
  if (d < 1) throw InvalidArgument("SAE: input dimension must be positive");
  if (k <= d) {
    throw InvalidArgument("SAE: encoder must be overcomplete (k=" + std::to_string(k) + ", d=" + std::to_string(d) + ")");
  }
  if (b.size() != k || theta.size() != k) throw InvalidArgument("SAE: bias/threshold length must equal k");
  if (!w.allFinite() || !b.allFinite() || !theta.allFinite()) throw InvalidArgument("SAE: non-finite parameters");
  if ((theta.array() < 0.0).any()) throw InvalidArgument("SAE: thresholds must be non-negative");
}

std::string SaeEncoder::content_hash() const { return hex64(fnv1a(serialize_sae(*this))); }

Vector sae_encode(const SaeEncoder& enc, const Vector& a) {
  if (a.size() != enc.w.cols()) {
    throw InvalidArgument("sae_encode: activation dimension " + std::to_string(a.size()) + " != SAE input dimension " +
                          std::to_string(enc.w.cols()));
  }
  const Vector h = enc.w * a + enc.b;
  return (h.array() > enc.theta.array()).select(h, 0.0);
}

ConceptVector concept_vector(const std::string& concept_name, const Vector& z_ori, const Vector& z_steer,
                             ConceptProvenance provenance) {
  if (z_ori.size() != z_steer.size()) {
    throw InvalidArgument("concept_vector: code dimensions differ (" + std::to_string(z_ori.size()) + " vs " +
                          std::to_string(z_steer.size()) + ")");
  }
  if (!(z_ori.norm() > 0.0)) throw InvalidArgument("concept_vector: SAE produced an all-zero code for the original activation");
  if (!(z_steer.norm() > 0.0)) throw InvalidArgument("concept_vector: SAE produced an all-zero code for the steered activation");
  return ConceptVector{concept_name, l2_normalize(z_steer) - l2_normalize(z_ori), std::move(provenance)};
}

SalienceVariants salience_variants(const Vector& z_ori, const Vector& z_steer, const Mask& relevant) {
  if (z_ori.size() != z_steer.size()) throw InvalidArgument("salience_variants: code dimensions differ");
  const Vector diff = z_steer - z_ori;
  const Vector norm_diff = l2_normalize(z_steer) - l2_normalize(z_ori);
  return {salience_auc(z_ori, relevant), salience_auc(z_steer, relevant), salience_auc(diff, relevant),
          salience_auc(norm_diff, relevant)};
}

namespace {

Vector random_unit(Rng& rng, int d) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v.normalized();
}

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

SyntheticSae generate_synthetic_sae(std::uint64_t seed, int k, int d, int n_relevant, const SyntheticSaeOptions& options) {
  if (d < 2) throw InvalidArgument("synthetic SAE: d must be >= 2");
  if (k <= d) throw InvalidArgument("synthetic SAE: k must exceed d");
  if (n_relevant < 1) throw InvalidArgument("synthetic SAE: n_relevant must be >= 1 (salience needs a non-empty mask)");
  if (n_relevant > k) throw InvalidArgument("synthetic SAE: n_relevant exceeds k");

  Rng rng(mix64(seed ^ 0x736165ULL));
  SyntheticSae out;
  out.concept_direction = random_unit(rng, d);
  const Vector& u = out.concept_direction;

  // Relevant features sit at random positions.
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  out.relevant.assign(static_cast<std::size_t>(k), false);
  for (int i = 0; i < n_relevant; ++i) out.relevant[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  SaeEncoder& enc = out.encoder;
  enc.w.resize(k, d);
  for (int r = 0; r < k; ++r) {
    Vector row;
    if (out.relevant[static_cast<std::size_t>(r)]) {
      row = (u + options.relevant_noise * random_unit(rng, d)).normalized();
    } else {
      Vector g = random_unit(rng, d);
      g -= g.dot(u) * u;
      const double leak = rng.uniform(-options.irrelevant_leak, options.irrelevant_leak);
      row = std::sqrt(1.0 - leak * leak) * g.normalized() + leak * u;
    }
    enc.w.row(r) = row.unaryExpr(&to_float).transpose();
  }
  enc.b = Vector::Zero(k);
  enc.theta = Vector::Constant(k, to_float(options.threshold));
  return out;
}

namespace {
constexpr std::string_view kSaeMagic = "BLSA";
constexpr std::uint16_t kSaeVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_sae(const SaeEncoder& enc) {
  enc.validate();
  io::ByteWriter w;
  w.magic(kSaeMagic);
  w.u16(kSaeVersion);
  w.u32(static_cast<std::uint32_t>(enc.w.rows()));
  w.u32(static_cast<std::uint32_t>(enc.w.cols()));
  for (Eigen::Index r = 0; r < enc.w.rows(); ++r)
    for (Eigen::Index c = 0; c < enc.w.cols(); ++c) w.f32(static_cast<float>(enc.w(r, c)));
  for (Eigen::Index i = 0; i < enc.b.size(); ++i) w.f32(static_cast<float>(enc.b(i)));
  for (Eigen::Index i = 0; i < enc.theta.size(); ++i) w.f32(static_cast<float>(enc.theta(i)));
  w.seal();
  return w.bytes();
}

SaeEncoder deserialize_sae(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kSaeMagic);
  r.expect_version(kSaeVersion);
  const auto header_at = r.offset();
  const std::uint64_t k = r.u32();
  const std::uint64_t d = r.u32();
  if (d < 1 || k <= d) {
    throw FormatError(FormatError::Kind::Shape, header_at,
                      "SAE header shape k=" + std::to_string(k) + ", d=" + std::to_string(d) + " is not overcomplete");
  }
  r.expect_exact_remaining(4 * (k * d + 2 * k));
  r.verify_trailing_checksum();
  SaeEncoder enc;
  enc.w.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (Eigen::Index row = 0; row < enc.w.rows(); ++row)
    for (Eigen::Index c = 0; c < enc.w.cols(); ++c) enc.w(row, c) = r.f32();
  enc.b.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < enc.b.size(); ++i) enc.b(i) = r.f32();
  const auto theta_at = r.offset();
  enc.theta.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < enc.theta.size(); ++i) enc.theta(i) = r.f32();
  if (!enc.w.allFinite() || !enc.b.allFinite() || !enc.theta.allFinite() || (enc.theta.array() < 0.0).any()) {
    throw FormatError(FormatError::Kind::Shape, theta_at, "SAE parameters are non-finite or thresholds negative");
  }
  return enc;
}

void save_sae(const SaeEncoder& enc, const std::filesystem::path& path) { io::write_file(path, serialize_sae(enc)); }

SaeEncoder load_sae(const std::filesystem::path& path) { return deserialize_sae(io::read_file(path)); }

}  // namespace biaslens
