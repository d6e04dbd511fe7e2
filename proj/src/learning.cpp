#include "rcm/learning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// Counts of ones below every node, for one configuration.
void node_counts(const TreeSpec& tree, std::span<const unsigned char> y,
                 std::vector<std::size_t>& counts) {
  counts.assign(tree.num_nodes(), 0);
  for (int id : tree.postorder()) {
    const TreeNode& n = tree.node(id);
    const auto i = static_cast<std::size_t>(id);
    if (n.is_leaf())
      counts[i] = y[static_cast<std::size_t>(n.var)];
    else
      counts[i] = counts[static_cast<std::size_t>(n.left)] + counts[static_cast<std::size_t>(n.right)];
  }
}

// Empirical sufficient statistics of a dataset on a tree.
struct Statistics {
  std::vector<double> mean;                     // per variable
  std::vector<std::vector<double>> count_freq;  // per node, over 0..size
};

Statistics statistics(const TreeSpec& tree, const Dataset& data) {
  Statistics s;
  const std::size_t D = tree.num_vars();
  s.mean.assign(D, 0.0);
  s.count_freq.resize(tree.num_nodes());
  for (std::size_t id = 0; id < tree.num_nodes(); ++id)
    s.count_freq[id].assign(tree.size(static_cast<int>(id)) + 1, 0.0);
  std::vector<std::size_t> counts;
  for (const Sample& y : data.rows) {
    for (std::size_t d = 0; d < D; ++d) s.mean[d] += y[d];
    node_counts(tree, y, counts);
    for (std::size_t id = 0; id < counts.size(); ++id) s.count_freq[id][counts[id]] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  for (double& m : s.mean) m *= inv;
  for (auto& f : s.count_freq)
    for (double& v : f) v *= inv;
  return s;
}

void check_shapes(const Parameters& p, const TreeSpec& tree) {
  if (p.unary_weights.size() != tree.num_vars())
    throw ArgumentError("parameters have " + std::to_string(p.unary_weights.size()) +
                        " unary weights for " + std::to_string(tree.num_vars()) + " variables");
  if (p.table_params.size() != tree.num_nodes())
    throw ArgumentError("parameters need one table slot per tree node");
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    const auto& t = p.table_params[id];
    if (!t.empty() && t.size() != tree.size(static_cast<int>(id)) + 1)
      throw ArgumentError("table at node " + std::to_string(id) + " has the wrong length");
  }
}

void check_data(const Dataset& data, const TreeSpec& tree) {
  data.validate();
  if (data.num_vars != tree.num_vars())
    throw ArgumentError("dataset width " + std::to_string(data.num_vars) + " does not match " +
                        std::to_string(tree.num_vars()) + " tree leaves");
}

NllGrad nll_and_grad_from(const Parameters& params, const TreeSpec& tree, const Statistics& stats) {
  const RCModel model = to_model(params, tree);
  const InferenceResult inf = marginals(model);
  const std::size_t D = tree.num_vars();

  NllGrad out;
  out.grad.unary_weights.resize(D);
  out.grad.table_params.resize(tree.num_nodes());

  double mean_score = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    mean_score += params.unary_weights[d] * stats.mean[d];
    out.grad.unary_weights[d] = inf.leaf_marginals[d] - stats.mean[d];
  }
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    const auto& t = params.table_params[id];
    if (t.empty()) continue;
    const auto& freq = stats.count_freq[id];
    const auto& model_p = inf.count_marginals[id].probs;
    auto& g = out.grad.table_params[id];
    g.assign(t.size(), 0.0);
    for (std::size_t c = 0; c < t.size(); ++c) {
      if (t[c] == kNegInf) {
        if (freq[c] > 0.0) mean_score = kNegInf;
        continue;
      }
      if (freq[c] > 0.0) mean_score += t[c] * freq[c];
      g[c] = model_p[c] - freq[c];
    }
  }
  out.nll = inf.log_z - mean_score;
  return out;
}

double l1_norm(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += std::abs(v);
  return s;
}

}  // namespace

void Dataset::validate() const {
  if (num_vars == 0) throw ArgumentError("dataset has no variables");
  if (rows.empty()) throw ArgumentError("dataset has no rows");
  for (std::size_t n = 0; n < rows.size(); ++n) {
    if (rows[n].size() != num_vars)
      throw ArgumentError("dataset row " + std::to_string(n) + " has length " +
                          std::to_string(rows[n].size()) + ", expected " + std::to_string(num_vars));
    for (unsigned char v : rows[n])
      if (v > 1) throw ArgumentError("dataset row " + std::to_string(n) + " is not binary");
  }
}

Parameters zero_parameters(const TreeSpec& tree, TablePlacement placement) {
  Parameters p;
  p.unary_weights.assign(tree.num_vars(), 0.0);
  p.table_params.resize(tree.num_nodes());
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    const int node = static_cast<int>(id);
    const bool place = placement == TablePlacement::Internal ? !tree.is_leaf(node)
                       : placement == TablePlacement::Root   ? node == tree.root()
                                                             : false;
    if (place) p.table_params[id].assign(tree.size(node) + 1, 0.0);
  }
  return p;
}

RCModel to_model(const Parameters& params, const TreeSpec& tree) {
  check_shapes(params, tree);
  std::vector<Unary> unary(tree.num_vars());
  for (std::size_t d = 0; d < unary.size(); ++d) {
    if (!std::isfinite(params.unary_weights[d]))
      throw ArgumentError("unary weight " + std::to_string(d) + " is not finite");
    unary[d] = Unary{0.0, params.unary_weights[d]};
  }
  std::vector<std::optional<CardinalityTable>> tables(tree.num_nodes());
  for (std::size_t id = 0; id < tree.num_nodes(); ++id)
    if (!params.table_params[id].empty()) tables[id].emplace(params.table_params[id]);
  return RCModel(std::move(unary), tree, std::move(tables));
}

Parameters from_model(const RCModel& model) {
  const TreeSpec& tree = model.tree();
  Parameters p;
  p.table_params.resize(tree.num_nodes());
  for (std::size_t id = 0; id < p.table_params.size(); ++id) {
    const auto& t = model.table(static_cast<int>(id));
    if (t) p.table_params[id].assign(t->log_values().begin(), t->log_values().end());
  }
  // A forbidden value cannot be a finite log-odds; it goes back into a leaf table.
  for (std::size_t d = 0; d < model.num_vars(); ++d) {
    const Unary& u = model.unary()[d];
    if (std::isfinite(u.on) && std::isfinite(u.off)) {
      p.unary_weights.push_back(u.on - u.off);
    } else {
      p.unary_weights.push_back(0.0);
      p.table_params[static_cast<std::size_t>(tree.leaf_of_var(d))] = {u.off, u.on};
    }
  }
  return p;
}

NllGrad nll_and_grad(const Parameters& params, const TreeSpec& tree, const Dataset& data) {
  check_shapes(params, tree);
  check_data(data, tree);
  return nll_and_grad_from(params, tree, statistics(tree, data));
}

double average_nll(const RCModel& model, const Dataset& data) {
  check_data(data, model.tree());
  const double log_z = log_partition(model);
  double total = 0.0;
  for (const Sample& y : data.rows) total += model.score(y);
  return log_z - total / static_cast<double>(data.size());
}

FitResult fit(const TreeSpec& tree, const Dataset& data, const FitOptions& opts, Parameters init) {
  if (!(opts.step >= 0.0) || !std::isfinite(opts.step)) throw ArgumentError("step must be >= 0");
  if (opts.iters < 0) throw ArgumentError("iters must be >= 0");
  if (!(opts.l1_lambda >= 0.0)) throw ArgumentError("l1_lambda must be >= 0");
  check_shapes(init, tree);
  check_data(data, tree);
  const Statistics stats = statistics(tree, data);

  FitResult res;
  res.params = std::move(init);
  NllGrad cur = nll_and_grad_from(res.params, tree, stats);
  double obj = cur.nll + opts.l1_lambda * l1_norm(res.params.unary_weights);
  if (!std::isfinite(obj)) throw DivergenceError("objective is not finite at the initial parameters", 0);
  res.objective_history.push_back(obj);
  if (opts.step == 0.0) return res;

  double step = opts.step;
  for (int it = 1; it <= opts.iters; ++it) {
    bool accepted = false;
    while (step > 1e-14 * opts.step) {
      Parameters trial = res.params;
      double moved = 0.0;
      for (std::size_t d = 0; d < trial.unary_weights.size(); ++d) {
        double& w = trial.unary_weights[d];
        const double nw = soft_threshold(w - step * cur.grad.unary_weights[d], step * opts.l1_lambda);
        moved = std::max(moved, std::abs(nw - w));
        w = nw;
      }
      for (std::size_t id = 0; id < trial.table_params.size(); ++id) {
        auto& t = trial.table_params[id];
        for (std::size_t c = 0; c < t.size(); ++c) {
          if (t[c] == kNegInf) continue;
          const double delta = step * cur.grad.table_params[id][c];
          moved = std::max(moved, std::abs(delta));
          t[c] -= delta;
        }
      }
      if (moved / step < opts.grad_tol) return res;

      NllGrad next = nll_and_grad_from(trial, tree, stats);
      const double next_obj = next.nll + opts.l1_lambda * l1_norm(trial.unary_weights);
      if (std::isnan(next_obj))
        throw DivergenceError("objective is not finite at iteration " + std::to_string(it), it);
      if (next_obj <= obj) {
        res.params = std::move(trial);
        cur = std::move(next);
        obj = next_obj;
        res.objective_history.push_back(obj);
        step = std::min(step * 2.0, opts.step);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return res;
}

FitResult fit(const TreeSpec& tree, const Dataset& data, const FitOptions& opts,
              TablePlacement placement) {
  return fit(tree, data, opts, zero_parameters(tree, placement));
}

// ---------------------------------------------------------------- MIL

namespace {

struct LabelPass {
  double log_z;
  std::vector<double> leaf_marginals;
  double expected_count;
};

RCModel bag_model(const Bag& bag, std::span<const double> weights, const CardinalityTable& f) {
  const std::size_t m = bag.size();
  if (m == 0) throw ArgumentError("bag has no instances");
  if (weights.size() != bag.num_features)
    throw ArgumentError("weight vector has " + std::to_string(weights.size()) + " entries for " +
                        std::to_string(bag.num_features) + " features");
  if (f.n() != m)
    throw ArgumentError("count table covers " + std::to_string(f.n()) + " instances, bag has " +
                        std::to_string(m));
  std::vector<Unary> unary(m);
  for (std::size_t i = 0; i < m; ++i) {
    double theta = 0.0;
    auto x = bag.instance(i);
    for (std::size_t k = 0; k < x.size(); ++k) theta += weights[k] * x[k];
    unary[i] = Unary{0.0, theta};
  }
  return standard_cardinality_model(std::move(unary), f);
}

LabelPass label_pass(const Bag& bag, std::span<const double> weights, const CardinalityTable& f) {
  const RCModel model = bag_model(bag, weights, f);
  LabelPass p;
  try {
    InferenceResult r = marginals(model);
    p.log_z = r.log_z;
    p.leaf_marginals = std::move(r.leaf_marginals);
    p.expected_count = r.count_marginals[static_cast<std::size_t>(model.tree().root())].mean();
  } catch (const ZeroMassError&) {
    p.log_z = kNegInf;
    p.leaf_marginals.assign(bag.size(), 0.0);
    p.expected_count = 0.0;
  }
  return p;
}

}  // namespace

MilValue mil_loglik_and_grad(const Bag& bag, std::span<const double> weights,
                             const CardinalityTable& f0, const CardinalityTable& f1) {
  if (bag.label != 0 && bag.label != 1) throw ArgumentError("bag label must be 0 or 1");
  const LabelPass p0 = label_pass(bag, weights, f0);
  const LabelPass p1 = label_pass(bag, weights, f1);
  const double log_total = log_add(p0.log_z, p1.log_z);
  if (log_total == kNegInf) throw ZeroMassError("bag has zero mass under both labels");

  MilValue v;
  v.prob_positive = std::exp(p1.log_z - log_total);
  const double prob_negative = std::exp(p0.log_z - log_total);
  const LabelPass& own = bag.label == 1 ? p1 : p0;
  v.loglik = own.log_z - log_total;
  v.grad.assign(bag.num_features, 0.0);
  for (std::size_t i = 0; i < bag.size(); ++i) {
    const double mix = prob_negative * p0.leaf_marginals[i] + v.prob_positive * p1.leaf_marginals[i];
    const double coef = own.leaf_marginals[i] - mix;
    auto x = bag.instance(i);
    for (std::size_t k = 0; k < x.size(); ++k) v.grad[k] += coef * x[k];
  }
  return v;
}

double expected_positive_count(const Bag& bag, std::span<const double> weights,
                               const CardinalityTable& f0, const CardinalityTable& f1) {
  const LabelPass p1 = label_pass(bag, weights, f1);
  if (p1.log_z == kNegInf) {
    if (label_pass(bag, weights, f0).log_z == kNegInf)
      throw ZeroMassError("bag has zero mass under both labels");
    throw ZeroMassError("bag has zero mass under the positive label");
  }
  return p1.expected_count;
}

CardinalityTable MilLink::table(std::size_t bag_size, int label) const {
  if (kind == Kind::NoisyOr) return noisy_or_table(bag_size, eps, lam, label);
  return normal_table(bag_size, mu, sigma, label);
}

MilFitResult fit_mil(std::span<const Bag> bags, const MilLink& link, const MilFitOptions& opts) {
  if (bags.empty()) throw ArgumentError("no bags to fit");
  if (!(opts.step >= 0.0)) throw ArgumentError("step must be >= 0");
  if (!(opts.l1_lambda >= 0.0)) throw ArgumentError("l1_lambda must be >= 0");
  const std::size_t p = bags.front().num_features;
  for (const Bag& b : bags)
    if (b.num_features != p) throw ArgumentError("bags have differing feature counts");

  std::map<std::size_t, std::pair<CardinalityTable, CardinalityTable>> tables;
  for (const Bag& b : bags)
    if (!tables.count(b.size())) tables.emplace(b.size(), std::make_pair(link.table(b.size(), 0), link.table(b.size(), 1)));

  auto evaluate = [&](const std::vector<double>& w, std::vector<double>* grad) {
    double total = 0.0;
    if (grad) grad->assign(p, 0.0);
    for (const Bag& b : bags) {
      const auto& [f0, f1] = tables.at(b.size());
      MilValue v = mil_loglik_and_grad(b, w, f0, f1);
      total += v.loglik;
      if (grad)
        for (std::size_t k = 0; k < p; ++k) (*grad)[k] += v.grad[k];
    }
    return total;
  };

  MilFitResult res;
  res.weights.assign(p, 0.0);
  std::vector<double> grad;
  res.total_loglik = evaluate(res.weights, &grad);
  double obj = res.total_loglik;
  res.objective_history.push_back(obj);
  double step = opts.step;
  for (int it = 1; it <= opts.iters && step > 0.0; ++it) {
    bool accepted = false;
    while (step > 1e-14 * opts.step) {
      std::vector<double> trial(p);
      for (std::size_t k = 0; k < p; ++k)
        trial[k] = soft_threshold(res.weights[k] + step * grad[k], step * opts.l1_lambda);
      std::vector<double> trial_grad;
      const double ll = evaluate(trial, &trial_grad);
      const double trial_obj = ll - opts.l1_lambda * l1_norm(trial);
      if (std::isnan(trial_obj))
        throw DivergenceError("MIL objective is not finite at iteration " + std::to_string(it), it);
      if (trial_obj >= obj) {
        const bool moved = trial != res.weights;
        res.weights = std::move(trial);
        grad = std::move(trial_grad);
        res.total_loglik = ll;
        obj = trial_obj;
        res.objective_history.push_back(obj);
        step = std::min(step * 2.0, opts.step);
        accepted = moved;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return res;
}

// ---------------------------------------------------------------- structure

TreeSpec agglomerative_structure(const Dataset& data, StructureMode mode) {
  data.validate();
  const std::size_t D = data.num_vars;
  if (D < 2) throw ArgumentError("structure learning needs at least two variables");
  if (data.size() < 2) throw ArgumentError("structure learning needs at least two rows");

  // agree[a][b] sums, over all leaf pairs across clusters a and b, the number
  // of rows on which the two variables agree. Kept as integers so that average
  // linkages compare exactly.
  const std::size_t total = 2 * D - 1;
  std::vector<std::vector<long long>> agree(total, std::vector<long long>(total, 0));
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a + 1; b < D; ++b) {
      long long s = 0;
      for (const Sample& y : data.rows) s += (y[a] == y[b]);
      agree[a][b] = agree[b][a] = s;
    }

  std::vector<TreeNode> nodes(D);
  for (std::size_t d = 0; d < D; ++d) nodes[d].var = static_cast<int>(d);
  std::vector<long long> size(total, 0);
  std::fill(size.begin(), size.begin() + static_cast<std::ptrdiff_t>(D), 1);
  std::vector<std::size_t> active(D);
  for (std::size_t d = 0; d < D; ++d) active[d] = d;

  const int sign = mode == StructureMode::Adaptive ? 1 : -1;
  while (active.size() > 1) {
    // Active ids stay sorted, so the first strict improvement wins ties.
    std::size_t ba = 0, bb = 0;
    long long bnum = 0, bden = 1;
    bool have = false;
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const std::size_t a = active[i], b = active[j];
        const long long num = sign * agree[a][b], den = size[a] * size[b];
        if (!have || num * bden > bnum * den) {
          ba = a, bb = b, bnum = num, bden = den, have = true;
        }
      }
    const std::size_t c = nodes.size();
    nodes.push_back(TreeNode{static_cast<int>(ba), static_cast<int>(bb), -1});
    size[c] = size[ba] + size[bb];
    for (std::size_t k : active)
      if (k != ba && k != bb) agree[c][k] = agree[k][c] = agree[ba][k] + agree[bb][k];
    std::erase(active, ba);
    std::erase(active, bb);
    active.push_back(c);
  }
  const int root = static_cast<int>(nodes.size() - 1);
  return TreeSpec(std::move(nodes), root);
}

namespace {

std::vector<double> empirical_histogram(const Dataset& data, const std::vector<std::size_t>& vars) {
  std::vector<double> h(vars.size() + 1, 0.0);
  for (const Sample& y : data.rows) {
    std::size_t c = 0;
    for (std::size_t v : vars) c += y[v];
    h[c] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(data.size());
  return h;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::vector<SubsetSizeError> group_by_size(const TreeSpec& eval_tree, const std::vector<double>& errs) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (std::size_t id = 0; id < eval_tree.num_nodes(); ++id) {
    auto& [sum, n] = acc[eval_tree.size(static_cast<int>(id))];
    sum += errs[id];
    ++n;
  }
  std::vector<SubsetSizeError> out;
  for (const auto& [sz, v] : acc) out.push_back({sz, v.first / static_cast<double>(v.second), v.second});
  return out;
}

}  // namespace

std::vector<SubsetSizeError> count_statistics_error(const RCModel& model, const Dataset& data,
                                                    const TreeSpec& eval_tree,
                                                    std::size_t num_samples, std::uint64_t seed) {
  check_data(data, model.tree());
  if (eval_tree.num_vars() != model.num_vars())
    throw ArgumentError("evaluation tree covers a different number of variables");

  const TreeSpec& mt = model.tree();
  std::map<std::vector<std::size_t>, int> model_nodes;
  for (std::size_t id = 0; id < mt.num_nodes(); ++id)
    model_nodes.emplace(mt.leaf_set(static_cast<int>(id)), static_cast<int>(id));

  const InferenceResult exact = marginals(model);
  std::optional<Dataset> sampled;
  std::vector<double> errs(eval_tree.num_nodes());
  for (std::size_t id = 0; id < eval_tree.num_nodes(); ++id) {
    const auto vars = eval_tree.leaf_set(static_cast<int>(id));
    const auto emp = empirical_histogram(data, vars);
    auto it = model_nodes.find(vars);
    if (it != model_nodes.end()) {
      errs[id] = rmse(emp, exact.count_marginals[static_cast<std::size_t>(it->second)].probs);
      continue;
    }
    if (!sampled) {
      if (num_samples == 0)
        throw ArgumentError("evaluation tree needs sampling but num_samples is 0");
      sampled = Dataset{model.num_vars(), sample(model, seed, num_samples)};
    }
    errs[id] = rmse(emp, empirical_histogram(*sampled, vars));
  }
  return group_by_size(eval_tree, errs);
}

std::vector<SubsetSizeError> count_statistics_error(const Dataset& reference, const Dataset& other,
                                                    const TreeSpec& eval_tree) {
  check_data(reference, eval_tree);
  check_data(other, eval_tree);
  std::vector<double> errs(eval_tree.num_nodes());
  for (std::size_t id = 0; id < eval_tree.num_nodes(); ++id) {
    const auto vars = eval_tree.leaf_set(static_cast<int>(id));
    errs[id] = rmse(empirical_histogram(reference, vars), empirical_histogram(other, vars));
  }
  return group_by_size(eval_tree, errs);
}

// ---------------------------------------------------------------- data

Dataset ising_gibbs_generate(std::size_t height, std::size_t width, double coupling,
                             std::size_t num_samples, std::size_t sweeps, std::uint64_t seed) {
  if (height == 0 || width == 0) throw ArgumentError("grid must be non-empty");
  if (sweeps == 0) throw ArgumentError("sweeps must be >= 1");
  if (!std::isfinite(coupling)) throw ArgumentError("coupling must be finite");

  std::mt19937_64 rng(seed);
  auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const std::size_t D = height * width;
  Dataset out{D, {}};
  out.rows.reserve(num_samples);
  std::vector<int> s(D);
  for (std::size_t n = 0; n < num_samples; ++n) {
    for (int& v : s) v = uniform01() < 0.5 ? 1 : -1;
    for (std::size_t sw = 0; sw < sweeps; ++sw)
      for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
          int field = 0;
          if (r > 0) field += s[(r - 1) * width + c];
          if (r + 1 < height) field += s[(r + 1) * width + c];
          if (c > 0) field += s[r * width + c - 1];
          if (c + 1 < width) field += s[r * width + c + 1];
          s[r * width + c] = uniform01() < sigmoid(2.0 * coupling * field) ? 1 : -1;
        }
    Sample y(D);
    for (std::size_t i = 0; i < D; ++i) y[i] = s[i] > 0;
    out.rows.push_back(std::move(y));
  }
  return out;
}

}  // namespace rcm
