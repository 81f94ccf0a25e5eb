#include "biaslens/cav.hpp"

#include <cmath>
#include <numeric>

#include "biaslens/binary_io.hpp"
#include "biaslens/hash.hpp"
#include "biaslens/parallel.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("logit: probability must lie in (0, 1)");
  return std::log(p) - std::log1p(-p);
}

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Objective {
  const Matrix& x;
  const Eigen::VectorXd& y;
  double ridge;

  double n() const { return static_cast<double>(x.rows()); }

  double loss(const Vector& w, double b) const {
    const Eigen::ArrayXd z = ((x * w).array() + b);
    double ce = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) ce += softplus(z(i)) - y(i) * z(i);
    return ce / n() + 0.5 * ridge / n() * w.squaredNorm();
  }

  void gradient(const Vector& w, double b, Vector& gw, double& gb) const {
    const Eigen::ArrayXd z = ((x * w).array() + b);
    Eigen::VectorXd r(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) r(i) = sigmoid(z(i)) - y(i);
    gw = (x.transpose() * r) / n() + (ridge / n()) * w;
    gb = r.mean();
  }
};

double accuracy(const Matrix& x, const std::vector<int>& y, const Vector& w, double b) {
  if (y.empty()) return 0.0;
  const Eigen::VectorXd z = (x * w).array() + b;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int pred = sigmoid(z(static_cast<Eigen::Index>(i))) >= 0.5 ? 1 : 0;
    hits += (pred == y[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

Split stratified_split(std::span<const int> labels, std::uint64_t seed, double test_fraction) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(seed ^ 0x73706c6974ULL));
  rng.shuffle(order.begin(), order.end());

  std::size_t count[2] = {0, 0};
  for (int l : labels) ++count[l ? 1 : 0];
  std::size_t quota[2];
  for (int c = 0; c < 2; ++c) {
    auto q = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(count[c])));
    quota[c] = std::clamp<std::size_t>(q, count[c] > 1 ? 1 : 0, count[c] > 0 ? count[c] - 1 : 0);
  }
  Split split;
  std::size_t taken[2] = {0, 0};
  for (std::size_t i : order) {
    const int c = labels[i] ? 1 : 0;
    if (taken[c] < quota[c]) {
      split.test.push_back(i);
      ++taken[c];
    } else {
      split.train.push_back(i);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

LayerClassifier train_layer_classifier(const Matrix& activations, std::span<const int> labels,
                                       std::uint64_t split_seed, const TrainOptions& options) {
  if (activations.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw InvalidArgument("train_layer_classifier: " + std::to_string(activations.rows()) + " activations but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (activations.cols() < 1) throw InvalidArgument("train_layer_classifier: zero-dimensional activations");
  if (!activations.allFinite()) throw InvalidArgument("train_layer_classifier: non-finite activations");
  std::size_t count[2] = {0, 0};
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("train_layer_classifier: labels must be 0 or 1");
    ++count[l];
  }
  if (count[0] == 0 || count[1] == 0) {
    throw InvalidArgument("train_layer_classifier: degenerate input, only one class present");
  }
  const auto min_class = static_cast<std::size_t>(options.min_per_class);
  if (count[0] < min_class || count[1] < min_class) {
    throw InvalidArgument("train_layer_classifier: need at least " + std::to_string(min_class) +
                          " samples per class (got " + std::to_string(count[0]) + " / " + std::to_string(count[1]) + ")");
  }

  const Split split = stratified_split(labels, split_seed, options.test_fraction);
  const Matrix x_train = gather_rows(activations, split.train);
  const Matrix x_test = gather_rows(activations, split.test);
  std::vector<int> y_train, y_test;
  for (auto i : split.train) y_train.push_back(labels[i]);
  for (auto i : split.test) y_test.push_back(labels[i]);
  Eigen::VectorXd y(static_cast<Eigen::Index>(y_train.size()));
  for (std::size_t i = 0; i < y_train.size(); ++i) y(static_cast<Eigen::Index>(i)) = y_train[i];

  const Objective obj{x_train, y, options.ridge};
  LayerClassifier out;
  Vector w = Vector::Zero(activations.cols());
  double b = 0.0;
  double loss = obj.loss(w, b);
  out.loss_history.push_back(loss);

  Vector gw;
  double gb = 0.0;
  double step = 1.0;
  constexpr double kArmijo = 1e-4;
  for (int it = 0; it < options.max_iterations; ++it) {
    obj.gradient(w, b, gw, gb);
    const double gmax = std::max(gw.cwiseAbs().maxCoeff(), std::abs(gb));
    if (gmax < options.grad_tol) {
      out.converged = true;
      break;
    }
    const double gsq = gw.squaredNorm() + gb * gb;
    step = std::min(step * 2.0, 1e8);
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt) {
      const Vector w_new = w - step * gw;
      const double b_new = b - step * gb;
      const double loss_new = obj.loss(w_new, b_new);
      if (loss_new <= loss - kArmijo * step * gsq) {
        w = w_new;
        b = b_new;
        loss = loss_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) break;  // no further descent at machine precision
    out.loss_history.push_back(loss);
  }

  out.w = std::move(w);
  out.b = b;
  out.train_accuracy = accuracy(x_train, y_train, out.w, out.b);
  out.test_accuracy = accuracy(x_test, y_test, out.w, out.b);
  return out;
}

double Cav::score(const Vector& a) const {
  if (a.size() != direction.size()) {
    throw InvalidArgument("cav_confidence: activation dimension " + std::to_string(a.size()) + " != CAV dimension " +
                          std::to_string(direction.size()));
  }
  return scale * direction.dot(a) + bias;
}

double cav_confidence(const Cav& cav, const Vector& a) { return sigmoid(cav.score(a)); }

void CavStack::validate() const {
  model_info.validate();
  if (static_cast<int>(cavs.size()) != model_info.n_layers) {
    throw InvalidArgument("CAV stack has " + std::to_string(cavs.size()) + " entries for " +
                          std::to_string(model_info.n_layers) + " layers");
  }
  for (std::size_t i = 0; i < cavs.size(); ++i) {
    const auto& c = cavs[i];
    if (c.layer != static_cast<int>(i) + 1) throw InvalidArgument("CAV stack layers must be 1..n in order");
    if (c.direction.size() != model_info.hidden_dim) throw InvalidArgument("CAV direction has wrong dimension");
    if (std::abs(c.direction.norm() - 1.0) > 1e-9) throw InvalidArgument("CAV direction is not unit norm");
    if (!(c.scale > 0.0)) throw InvalidArgument("CAV scale must be positive");
  }
}

std::string CavStack::content_hash() const { return hex64(fnv1a(serialize_cavs(*this))); }

double CavStack::mean_test_accuracy() const {
  double acc = 0.0;
  for (const auto& c : cavs) acc += c.test_accuracy;
  return cavs.empty() ? 0.0 : acc / static_cast<double>(cavs.size());
}

CavStack derive_cav_stack(const ActivationSet& set, std::uint64_t split_seed, int jobs, const TrainOptions& options) {
  set.validate();
  const int n = set.model_info.n_layers;
  CavStack stack;
  stack.concept_name = set.concept_name;
  stack.model_info = set.model_info;
  stack.cavs.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    const int layer = static_cast<int>(i) + 1;
    try {
      const auto [x, y] = set.layer_data(layer);
      const auto clf = train_layer_classifier(x, y, split_seed, options);
      const double s = clf.w.norm();
      if (!(s > 0.0)) throw InvalidArgument("classifier weight vector is zero");
      stack.cavs[i] = Cav{layer, clf.w / s, s, clf.b, clf.train_accuracy, clf.test_accuracy};
    } catch (const std::exception& e) {
      throw Error("layer " + std::to_string(layer) + ": " + e.what());
    }
  });
  return stack;
}

namespace {
constexpr std::string_view kCavMagic = "BLCV";
constexpr std::uint16_t kCavVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_cavs(const CavStack& stack) {
  stack.validate();
  io::ByteWriter w;
  w.magic(kCavMagic);
  w.u16(kCavVersion);
  w.u32(static_cast<std::uint32_t>(stack.model_info.n_layers));
  w.u32(static_cast<std::uint32_t>(stack.model_info.hidden_dim));
  for (const auto& c : stack.cavs) {
    w.u32(static_cast<std::uint32_t>(c.layer));
    w.f64(c.scale);
    w.f64(c.bias);
    w.f64(c.train_accuracy);
    w.f64(c.test_accuracy);
    for (Eigen::Index i = 0; i < c.direction.size(); ++i) w.f64(c.direction(i));
  }
  w.seal();
  return w.bytes();
}

CavStack deserialize_cavs(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCavMagic);
  r.expect_version(kCavVersion);
  const auto header_at = r.offset();
  CavStack stack;
  stack.model_info.n_layers = static_cast<int>(r.u32());
  stack.model_info.hidden_dim = static_cast<int>(r.u32());
  stack.model_info.name = "loaded";
  if (stack.model_info.n_layers < 1 || stack.model_info.hidden_dim < 1) {
    throw FormatError(FormatError::Kind::Shape, header_at, "non-positive n_layers/hidden_dim in header");
  }
  const std::uint64_t per_layer = 4 + 4 * 8 + 8 * static_cast<std::uint64_t>(stack.model_info.hidden_dim);
  r.expect_exact_remaining(per_layer * static_cast<std::uint64_t>(stack.model_info.n_layers));
  r.verify_trailing_checksum();
  for (int l = 1; l <= stack.model_info.n_layers; ++l) {
    const auto at = r.offset();
    Cav c;
    c.layer = static_cast<int>(r.u32());
    c.scale = r.f64();
    c.bias = r.f64();
    c.train_accuracy = r.f64();
    c.test_accuracy = r.f64();
    c.direction.resize(stack.model_info.hidden_dim);
    for (int i = 0; i < stack.model_info.hidden_dim; ++i) c.direction(i) = r.f64();
    if (c.layer != l || !(c.scale > 0.0) || std::abs(c.direction.norm() - 1.0) > 1e-9) {
      throw FormatError(FormatError::Kind::Shape, at, "layer entry " + std::to_string(l) + " is inconsistent");
    }
    stack.cavs.push_back(std::move(c));
  }
  return stack;
}

void save_cavs(const CavStack& stack, const std::filesystem::path& path) { io::write_file(path, serialize_cavs(stack)); }

CavStack load_cavs(const std::filesystem::path& path) { return deserialize_cavs(io::read_file(path)); }

}  // namespace biaslens
