#pragma once

// Reference implementations used only by the tests. Each one is written
// from first principles and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace oracle {

/// Exact W1 between two uniform empirical distributions as a min-cost
/// transport problem: every point of `a` supplies |b| units, every point of
/// `b` demands |a| units, and unit cost is |a_i - b_j|. Solved with
/// successive shortest paths (Bellman-Ford on the residual graph).
inline double wasserstein_lp(const std::vector<double>& a, const std::vector<double>& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  const int source = n + m;
  const int sink = source + 1;
  const int nodes = sink + 1;
  struct Edge {
    int to;
    int rev;
    int cap;
    double cost;
  };
  std::vector<std::vector<Edge>> g(static_cast<std::size_t>(nodes));
  auto add = [&](int u, int v, int cap, double cost) {
    g[u].push_back({v, static_cast<int>(g[v].size()), cap, cost});
    g[v].push_back({u, static_cast<int>(g[u].size()) - 1, 0, -cost});
  };
  for (int i = 0; i < n; ++i) add(source, i, m, 0.0);
  for (int j = 0; j < m; ++j) add(n + j, sink, n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) add(i, n + j, n * m, std::abs(a[i] - b[j]));

  double total = 0.0;
  int flow = 0;
  const double inf = std::numeric_limits<double>::infinity();
  while (flow < n * m) {
    std::vector<double> dist(static_cast<std::size_t>(nodes), inf);
    std::vector<int> prev_node(static_cast<std::size_t>(nodes), -1), prev_edge(static_cast<std::size_t>(nodes), -1);
    dist[source] = 0.0;
    for (int iter = 0; iter < nodes; ++iter) {
      bool changed = false;
      for (int u = 0; u < nodes; ++u) {
        if (dist[u] == inf) continue;
        for (int e = 0; e < static_cast<int>(g[u].size()); ++e) {
          const Edge& ed = g[u][e];
          if (ed.cap > 0 && dist[u] + ed.cost < dist[ed.to] - 1e-15) {
            dist[ed.to] = dist[u] + ed.cost;
            prev_node[ed.to] = u;
            prev_edge[ed.to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    int push = n * m - flow;
    for (int v = sink; v != source; v = prev_node[v]) push = std::min(push, g[prev_node[v]][prev_edge[v]].cap);
    for (int v = sink; v != source; v = prev_node[v]) {
      Edge& ed = g[prev_node[v]][prev_edge[v]];
      ed.cap -= push;
      g[v][ed.rev].cap += push;
      total += push * ed.cost;
    }
    flow += push;
  }
  return total / (static_cast<double>(n) * m);
}

/// Rank formula 1 - 6 sum d^2 / (n (n^2 - 1)), valid without ties.
inline double spearman_rank_formula(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) r[idx[k]] = static_cast<double>(k + 1);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

/// Two-sided tail of Student's t for integer degrees of freedom via the
/// closed-form finite series for A(t | nu) = P(|T| < |t|).
inline double student_t_two_sided_closed_form(double t, int nu) {
  const double theta = std::atan(std::abs(t) / std::sqrt(static_cast<double>(nu)));
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  double a;
  if (nu % 2 == 1) {
    double series = 0.0;
    if (nu > 1) {
      double term = c;
      series = term;
      for (int k = 3; k <= nu - 2; k += 2) {
        term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
        series += term;
      }
    }
    a = (2.0 / std::numbers::pi) * (theta + s * series);
  } else {
    double term = 1.0;
    double series = 1.0;
    for (int k = 2; k <= nu - 2; k += 2) {
      term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
      series += term;
    }
    a = s * series;
  }
  return std::clamp(1.0 - a, 0.0, 1.0);
}

struct TTest {
  double t;
  double p;
  int df;
};

inline TTest pooled_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
  double ssa = 0.0, ssb = 0.0;
  for (double v : a) ssa += (v - ma) * (v - ma);
  for (double v : b) ssb += (v - mb) * (v - mb);
  const int df = static_cast<int>(a.size() + b.size()) - 2;
  const double sp2 = (ssa + ssb) / df;
  const double t = (ma - mb) / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  return {t, student_t_two_sided_closed_form(t, df), df};
}

/// Trapezoid area under the capture curve: dims visited by descending value
/// (ties by ascending index), x = visited / n, y = relevant captured / R.
inline double salience_auc(const std::vector<double>& v, const std::vector<bool>& relevant) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] > v[j]; });
  const double total = static_cast<double>(std::count(relevant.begin(), relevant.end(), true));
  double area = 0.0, y_prev = 0.0, captured = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (relevant[order[k]]) captured += 1.0;
    const double y = captured / total;
    area += 0.5 * (y_prev + y) / static_cast<double>(n);
    y_prev = y;
  }
  return area;
}

}  // namespace oracle
