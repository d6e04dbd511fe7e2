#include "rcm/convtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

namespace {

std::size_t idx(int id) { return static_cast<std::size_t>(id); }

// Scales w to sum 1 and returns the log of the removed normalizer.
double normalize_in_place(std::vector<double>& w, int node, const char* what) {
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ZeroMassError(std::string(what) + " at node " + std::to_string(node) + " has zero mass",
                        node);
  }
  const double inv = 1.0 / total;
  for (double& v : w) v *= inv;
  return std::log(total);
}

// Multiplies w by exp(table) after shifting the table by its maximum; returns
// the shift.
double apply_table(std::vector<double>& w, const CardinalityTable& table) {
  const double shift = table.max_value();
  for (std::size_t c = 0; c < w.size(); ++c) w[c] *= std::exp(table[c] - shift);
  return shift;
}

MessageVector leaf_message(const Unary& u, int node) {
  const double shift = std::max(u.off, u.on);
  if (shift == kNegInf) {
    throw ZeroMassError("leaf node " + std::to_string(node) + " has zero mass", node);
  }
  MessageVector m{{std::exp(u.off - shift), std::exp(u.on - shift)}, shift};
  m.log_scale += normalize_in_place(m.weights, node, "upward message");
  return m;
}

// Downward messages (excluding each node's own table and upward evidence),
// normalized. The root receives the all-ones message.
std::vector<std::vector<double>> downward_pass(const RCModel& model, const UpState& state,
                                               Backend backend) {
  const TreeSpec& tree = model.tree();
  std::vector<std::vector<double>> down(tree.num_nodes());
  const int root = tree.root();
  down[idx(root)].assign(tree.size(root) + 1, 1.0 / static_cast<double>(tree.size(root) + 1));
  const auto& order = tree.postorder();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int id = *it;
    const TreeNode& n = tree.node(id);
    if (n.is_leaf()) continue;
    // Everything known about this node's count apart from its children.
    std::vector<double> outside = down[idx(id)];
    if (const auto& t = model.table(id)) apply_table(outside, *t);
    normalize_in_place(outside, id, "downward message");
    for (auto [child, sibling] : {std::pair{n.left, n.right}, std::pair{n.right, n.left}}) {
      std::vector<double> msg = correlate(outside, state.up[idx(sibling)].weights, backend);
      normalize_in_place(msg, child, "downward message");
      down[idx(child)] = std::move(msg);
    }
  }
  return down;
}

}  // namespace

double CountDistribution::mean() const {
  double m = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) m += static_cast<double>(c) * probs[c];
  return m;
}

UpState upward_pass(const RCModel& model, Backend backend) {
  const TreeSpec& tree = model.tree();
  UpState state;
  state.up.resize(tree.num_nodes());
  for (int id : tree.postorder()) {
    const TreeNode& n = tree.node(id);
    MessageVector& out = state.up[idx(id)];
    if (n.is_leaf()) {
      out = leaf_message(model.unary()[idx(n.var)], id);
      continue;
    }
    const MessageVector& l = state.up[idx(n.left)];
    const MessageVector& r = state.up[idx(n.right)];
    out.weights = convolve(l.weights, r.weights, backend);
    out.log_scale = l.log_scale + r.log_scale;
    if (const auto& t = model.table(id)) out.log_scale += apply_table(out.weights, *t);
    out.log_scale += normalize_in_place(out.weights, id, "upward message");
  }
  state.log_z = state.up[idx(tree.root())].log_scale;
  return state;
}

double log_partition(const RCModel& model, Backend backend) {
  return upward_pass(model, backend).log_z;
}

InferenceResult marginals(const RCModel& model, Backend backend) {
  const TreeSpec& tree = model.tree();
  UpState state = upward_pass(model, backend);
  std::vector<std::vector<double>> down = downward_pass(model, state, backend);

  InferenceResult result;
  result.log_z = state.log_z;
  result.count_marginals.resize(tree.num_nodes());
  result.leaf_marginals.resize(tree.num_vars());
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    std::vector<double> belief = state.up[id].weights;
    const std::vector<double>& dn = down[id];
    for (std::size_t c = 0; c < belief.size(); ++c) belief[c] *= dn[c];
    normalize_in_place(belief, static_cast<int>(id), "belief");
    const TreeNode& n = tree.node(static_cast<int>(id));
    if (n.is_leaf()) result.leaf_marginals[idx(n.var)] = belief[1];
    result.count_marginals[id].probs = std::move(belief);
  }
  return result;
}

CountDistribution count_marginal(const RCModel& model, int node, Backend backend) {
  if (node < 0 || idx(node) >= model.tree().num_nodes()) {
    throw ArgumentError("unknown node id " + std::to_string(node));
  }
  return std::move(marginals(model, backend).count_marginals[idx(node)]);
}

// ---------------------------------------------------------------- sampling

namespace {

// Tabulating split distributions costs (n+1)(min(n_l,n_r)+1) doubles per node.
constexpr std::size_t kSplitCacheBudget = std::size_t{1} << 23;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t draw_from_cdf(std::span<const double> cdf, double u) {
  const double target = u * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  std::size_t k = static_cast<std::size_t>(it - cdf.begin());
  if (k >= cdf.size()) k = cdf.size() - 1;
  // Skip zero-width steps so zero-probability outcomes are never returned.
  while (k > 0 && cdf[k] == cdf[k - 1]) --k;
  return k;
}

}  // namespace

Sampler::Sampler(const RCModel& model, Backend backend) : tree_(model.tree()) {
  UpState state = upward_pass(model, backend);
  up_.reserve(state.up.size());
  for (auto& m : state.up) up_.push_back(std::move(m.weights));

  const std::vector<double>& root = up_[idx(tree_.root())];
  root_cdf_.resize(root.size());
  std::partial_sum(root.begin(), root.end(), root_cdf_.begin());

  std::size_t cost = 0;
  for (int id : tree_.postorder()) {
    const TreeNode& n = tree_.node(id);
    if (!n.is_leaf()) {
      cost += (tree_.size(id) + 1) * (std::min(tree_.size(n.left), tree_.size(n.right)) + 1);
    }
  }
  cdf_cache_.resize(tree_.num_nodes());
  if (cost > kSplitCacheBudget) return;
  for (int id : tree_.postorder()) {
    const TreeNode& n = tree_.node(id);
    if (n.is_leaf()) continue;
    const std::vector<double>& parent = up_[idx(id)];
    const std::vector<double>& l = up_[idx(n.left)];
    const std::vector<double>& r = up_[idx(n.right)];
    const std::size_t nl = l.size() - 1, nr = r.size() - 1;
    auto& table = cdf_cache_[idx(id)];
    table.resize(parent.size());
    for (std::size_t z = 0; z < parent.size(); ++z) {
      if (parent[z] == 0.0) continue;  // unreachable
      const std::size_t lo = z > nr ? z - nr : 0, hi = std::min(nl, z);
      auto& cdf = table[z];
      cdf.resize(hi - lo + 1);
      double acc = 0.0;
      for (std::size_t a = lo; a <= hi; ++a) {
        acc += l[a] * r[z - a];
        cdf[a - lo] = acc;
      }
    }
  }
}

std::size_t Sampler::choose_split(int node, std::size_t z, double u) const {
  const TreeNode& n = tree_.node(node);
  const std::vector<double>& l = up_[idx(n.left)];
  const std::vector<double>& r = up_[idx(n.right)];
  const std::size_t nl = l.size() - 1, nr = r.size() - 1;
  const std::size_t lo = z > nr ? z - nr : 0, hi = std::min(nl, z);
  const auto& cached = cdf_cache_[idx(node)];
  if (!cached.empty() && !cached[z].empty()) {
    if (!(cached[z].back() > 0.0)) {
      throw ZeroMassError("split diagonal at node " + std::to_string(node) + " has zero mass",
                          node);
    }
    return lo + draw_from_cdf(cached[z], u);
  }
  std::vector<double> cdf(hi - lo + 1);
  double acc = 0.0;
  for (std::size_t a = lo; a <= hi; ++a) {
    acc += l[a] * r[z - a];
    cdf[a - lo] = acc;
  }
  if (!(acc > 0.0)) {
    throw ZeroMassError("split diagonal at node " + std::to_string(node) + " has zero mass", node);
  }
  return lo + draw_from_cdf(cdf, u);
}

void Sampler::draw_into(std::mt19937_64& rng, std::span<unsigned char> out) const {
  if (out.size() != tree_.num_vars()) throw ArgumentError("sample buffer has the wrong length");
  std::vector<std::pair<int, std::size_t>> stack;
  stack.reserve(64);
  stack.push_back({tree_.root(), draw_from_cdf(root_cdf_, uniform01(rng))});
  while (!stack.empty()) {
    auto [id, z] = stack.back();
    stack.pop_back();
    const TreeNode& n = tree_.node(id);
    if (n.is_leaf()) {
      out[idx(n.var)] = static_cast<unsigned char>(z);
      continue;
    }
    const std::size_t zl = choose_split(id, z, uniform01(rng));
    stack.push_back({n.right, z - zl});
    stack.push_back({n.left, zl});
  }
}

Sample Sampler::draw(std::mt19937_64& rng) const {
  Sample y(tree_.num_vars());
  draw_into(rng, y);
  return y;
}

std::vector<Sample> sample(const RCModel& model, std::uint64_t seed, std::size_t num_samples,
                           Backend backend) {
  Sampler sampler(model, backend);
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) out.push_back(sampler.draw(rng));
  return out;
}

// ---------------------------------------------------------------- factor messages

std::vector<BinaryMessage> factor_messages(std::span<const BinaryMessage> incoming,
                                           const CardinalityTable& table, Backend backend) {
  if (incoming.size() != table.n()) {
    throw ArgumentError("factor_messages: " + std::to_string(incoming.size()) +
                        " incoming messages for a table over " + std::to_string(table.n()) +
                        " variables");
  }
  if (incoming.empty()) throw ArgumentError("factor_messages needs at least one variable");
  if (incoming.size() == 1) {
    std::vector<double> w{std::exp(table[0] - table.max_value()),
                          std::exp(table[1] - table.max_value())};
    normalize_in_place(w, 0, "factor message");
    return {BinaryMessage{w[0], w[1]}};
  }
  std::vector<Unary> unary(incoming.size());
  for (std::size_t d = 0; d < incoming.size(); ++d) {
    const auto& m = incoming[d];
    if (!(m[0] >= 0.0) || !(m[1] >= 0.0) || !std::isfinite(m[0]) || !std::isfinite(m[1])) {
      throw ArgumentError("factor_messages: incoming message " + std::to_string(d) +
                          " is not a nonnegative finite pair");
    }
    unary[d] = Unary{std::log(m[0]), std::log(m[1])};
  }
  RCModel model = standard_cardinality_model(std::move(unary), table);
  UpState state = upward_pass(model, backend);
  std::vector<std::vector<double>> down = downward_pass(model, state, backend);
  std::vector<BinaryMessage> out(incoming.size());
  for (std::size_t d = 0; d < incoming.size(); ++d) {
    const auto& dn = down[idx(model.tree().leaf_of_var(d))];
    out[d] = BinaryMessage{dn[0], dn[1]};
  }
  return out;
}

}  // namespace rcm
