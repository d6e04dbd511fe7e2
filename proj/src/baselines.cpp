#include "rcm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

namespace {

double normalize(std::vector<double>& w) {
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0.0)) throw ZeroMassError("chain message has zero mass");
  for (double& v : w) v /= total;
  return std::log(total);
}

}  // namespace

std::size_t chain_memory_bytes(std::size_t num_vars, std::optional<std::size_t> max_count) {
  const std::size_t k = max_count ? std::min(*max_count, num_vars) : num_vars;
  std::size_t entries = 0;
  for (std::size_t d = 0; d <= num_vars; ++d) entries += std::min(d, k) + 1;
  return 2 * entries * sizeof(double);
}

InferenceResult chain_marginals(std::span<const Unary> unary, const CardinalityTable& table,
                                std::optional<std::size_t> max_count) {
  const std::size_t D = unary.size();
  if (D == 0) throw ArgumentError("chain_marginals needs at least one variable");
  if (table.n() != D) {
    throw ArgumentError("chain_marginals: table covers " + std::to_string(table.n()) +
                        " variables, model has " + std::to_string(D));
  }
  const std::size_t k = max_count ? std::min(*max_count, D) : D;
  for (std::size_t c = k + 1; c <= D; ++c) {
    if (table[c] != kNegInf) {
      throw ArgumentError("chain_marginals: table has mass at count " + std::to_string(c) +
                          " above max_count " + std::to_string(k));
    }
  }

  // Shifted linear unaries.
  std::vector<double> w0(D), w1(D);
  double unary_shift = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    const double s = std::max(unary[d].off, unary[d].on);
    if (s == kNegInf) throw ZeroMassError("variable " + std::to_string(d) + " has zero mass");
    w0[d] = std::exp(unary[d].off - s);
    w1[d] = std::exp(unary[d].on - s);
    unary_shift += s;
  }

  // forward[d]: distribution of the count among the first d variables.
  std::vector<std::vector<double>> forward(D + 1);
  forward[0] = {1.0};
  double forward_scale = 0.0;
  for (std::size_t d = 1; d <= D; ++d) {
    const auto& prev = forward[d - 1];
    std::vector<double> cur(std::min(d, k) + 1, 0.0);
    for (std::size_t c = 0; c < prev.size(); ++c) {
      cur[c] += prev[c] * w0[d - 1];
      if (c + 1 < cur.size()) cur[c + 1] += prev[c] * w1[d - 1];
    }
    forward_scale += normalize(cur);
    forward[d] = std::move(cur);
  }

  // backward[d][c]: mass of variables d+1..D given c ones among the first d.
  const double table_shift = table.max_value();
  std::vector<std::vector<double>> backward(D + 1);
  backward[D].resize(k + 1);
  for (std::size_t c = 0; c <= k; ++c) backward[D][c] = std::exp(table[c] - table_shift);
  std::vector<double> root = forward[D];
  for (std::size_t c = 0; c < root.size(); ++c) root[c] *= backward[D][c];
  const double root_scale = normalize(root);
  normalize(backward[D]);
  for (std::size_t d = D; d >= 1; --d) {
    const auto& next = backward[d];
    std::vector<double> cur(std::min(d - 1, k) + 1, 0.0);
    for (std::size_t c = 0; c < cur.size(); ++c) {
      cur[c] = w0[d - 1] * next[c];
      if (c + 1 < next.size()) cur[c] += w1[d - 1] * next[c + 1];
    }
    normalize(cur);
    backward[d - 1] = std::move(cur);
  }

  InferenceResult result;
  result.log_z = unary_shift + forward_scale + root_scale + table_shift;
  result.leaf_marginals.resize(D);
  for (std::size_t d = 1; d <= D; ++d) {
    const auto& f = forward[d - 1];
    const auto& b = backward[d];
    double on = 0.0, off = 0.0;
    for (std::size_t c = 0; c < f.size(); ++c) {
      off += f[c] * b[c];
      if (c + 1 < b.size()) on += f[c] * b[c + 1];
    }
    on *= w1[d - 1];
    off *= w0[d - 1];
    if (!(on + off > 0.0)) throw ZeroMassError("chain belief has zero mass");
    result.leaf_marginals[d - 1] = on / (on + off);
  }
  root.resize(D + 1, 0.0);
  result.count_marginals.push_back(CountDistribution{std::move(root)});
  return result;
}

InferenceResult quadratic_tree_marginals(const RCModel& model) {
  return marginals(model, Backend::Naive);
}

OracleResult brute_force(const RCModel& model) {
  const std::size_t D = model.num_vars();
  if (D > kBruteForceMaxVars) {
    throw ResourceError("brute_force refuses D = " + std::to_string(D) + " (limit " +
                        std::to_string(kBruteForceMaxVars) + ")");
  }
  const TreeSpec& tree = model.tree();
  const std::size_t num_configs = std::size_t{1} << D;
  const auto& order = tree.postorder();
  std::vector<std::size_t> counts(tree.num_nodes());

  auto score = [&](std::size_t config) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      s += ((config >> d) & 1) ? model.unary()[d].on : model.unary()[d].off;
    }
    for (int id : order) {
      const TreeNode& n = tree.node(id);
      std::size_t c = n.is_leaf() ? ((config >> n.var) & 1)
                                  : counts[static_cast<std::size_t>(n.left)] +
                                        counts[static_cast<std::size_t>(n.right)];
      counts[static_cast<std::size_t>(id)] = c;
      if (const auto& t = model.table(id)) s += (*t)[c];
    }
    return s;
  };

  // Pass 1: maximum score, in index order.
  double peak = kNegInf;
  for (std::size_t y = 0; y < num_configs; ++y) peak = std::max(peak, score(y));
  if (peak == kNegInf) throw ZeroMassError("model has zero mass");

  // Pass 2: weights relative to the peak; counts[] holds this config's counts.
  OracleResult out;
  InferenceResult& r = out.result;
  r.leaf_marginals.assign(D, 0.0);
  r.count_marginals.resize(tree.num_nodes());
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    r.count_marginals[id].probs.assign(tree.size(static_cast<int>(id)) + 1, 0.0);
  }
  const bool keep_joint = D <= kJointTableMaxVars;
  if (keep_joint) out.joint.assign(num_configs, 0.0);
  double total = 0.0;
  for (std::size_t y = 0; y < num_configs; ++y) {
    const double w = std::exp(score(y) - peak);
    if (keep_joint) out.joint[y] = w;
    if (w == 0.0) continue;
    total += w;
    for (std::size_t d = 0; d < D; ++d) {
      if ((y >> d) & 1) r.leaf_marginals[d] += w;
    }
    for (std::size_t id = 0; id < tree.num_nodes(); ++id) r.count_marginals[id].probs[counts[id]] += w;
  }
  for (double& v : r.leaf_marginals) v /= total;
  for (auto& cd : r.count_marginals) {
    for (double& v : cd.probs) v /= total;
  }
  for (double& v : out.joint) v /= total;
  r.log_z = peak + std::log(total);
  return out;
}

}  // namespace rcm
