#pragma once

// Seeded generators for random models used across the test suites.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "rcm/model.hpp"

namespace rcm::testing {

// Laminar family from recursive random splitting of a shuffled index set.
// Every generated block is kept with probability keep_prob; the full set and
// singletons are included only occasionally.
inline SubsetFamily random_laminar_family(std::size_t num_vars, std::mt19937_64& rng,
                                          double keep_prob = 0.6) {
  std::vector<std::size_t> perm(num_vars);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::bernoulli_distribution keep(keep_prob);
  SubsetFamily family{num_vars, {}};
  std::vector<std::vector<std::size_t>> stack{perm};
  while (!stack.empty()) {
    std::vector<std::size_t> block = std::move(stack.back());
    stack.pop_back();
    if (keep(rng)) {
      std::vector<std::size_t> sorted = block;
      std::sort(sorted.begin(), sorted.end());
      family.subsets.push_back(std::move(sorted));
    }
    if (block.size() < 2) continue;
    std::uniform_int_distribution<std::size_t> cut(1, block.size() - 1);
    const std::size_t k = cut(rng);
    stack.emplace_back(block.begin(), block.begin() + static_cast<std::ptrdiff_t>(k));
    stack.emplace_back(block.begin() + static_cast<std::ptrdiff_t>(k), block.end());
  }
  return family;
}

struct RandomModelOptions {
  double neg_inf_prob = 0.15;  // per table entry, never on the reference counts
  double table_scale = 1.0;
  double unary_scale = 1.0;
  double keep_prob = 0.6;
};

// Random RC model over a random laminar family. A hidden reference
// configuration keeps the model's mass positive whatever -inf entries appear.
inline RCModel random_rc_model(std::size_t num_vars, std::mt19937_64& rng,
                               const RandomModelOptions& opts = {}) {
  SubsetFamily family = random_laminar_family(num_vars, rng, opts.keep_prob);
  Alignment aligned = align_tree(family);
  const TreeSpec& tree = aligned.tree;

  std::bernoulli_distribution coin(0.5);
  std::vector<unsigned char> reference(num_vars);
  for (auto& v : reference) v = coin(rng);

  std::normal_distribution<double> normal(0.0, opts.table_scale);
  std::uniform_real_distribution<double> unif(-opts.unary_scale, opts.unary_scale);
  std::bernoulli_distribution forbid(opts.neg_inf_prob);

  std::vector<Unary> unary(num_vars);
  for (auto& u : unary) u = Unary{unif(rng), unif(rng)};

  std::vector<std::optional<CardinalityTable>> tables(tree.num_nodes());
  for (int node : aligned.subset_nodes) {
    std::size_t ref_count = 0;
    for (std::size_t v : tree.leaf_set(node)) ref_count += reference[v];
    std::vector<double> log_f(tree.size(node) + 1);
    for (std::size_t c = 0; c < log_f.size(); ++c) {
      log_f[c] = (c != ref_count && forbid(rng)) ? kNegInf : normal(rng);
    }
    tables[static_cast<std::size_t>(node)] = CardinalityTable(std::move(log_f));
  }
  return RCModel(std::move(unary), tree, std::move(tables));
}

// One random table over all variables plus uniform[-1,1] unaries.
inline RCModel random_standard_model(std::size_t num_vars, std::mt19937_64& rng,
                                     double neg_inf_prob = 0.0) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution forbid(neg_inf_prob);
  std::vector<Unary> unary(num_vars);
  for (auto& u : unary) u = Unary{unif(rng), unif(rng)};
  std::vector<double> log_f(num_vars + 1);
  for (auto& v : log_f) v = forbid(rng) ? kNegInf : normal(rng);
  log_f[num_vars / 2] = normal(rng);
  return standard_cardinality_model(std::move(unary), CardinalityTable(std::move(log_f)));
}

}  // namespace rcm::testing
