#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rcm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Log-potential over the count of active variables in a subset of size n.
// Entries are finite or -inf; at least one is finite.
class CardinalityTable {
 public:
  explicit CardinalityTable(std::vector<double> log_f);

  static CardinalityTable uniform(std::size_t n);

  // Subset size covered by the table (entries run over counts 0..n).
  std::size_t n() const { return log_f_.size() - 1; }
  std::size_t length() const { return log_f_.size(); }
  double operator[](std::size_t count) const { return log_f_[count]; }
  std::span<const double> log_values() const { return log_f_; }
  double max_value() const;

 private:
  std::vector<double> log_f_;
};

// P(t | count) for noisy-OR with leak eps and per-cause strength lam, in log form.
CardinalityTable noisy_or_table(std::size_t n, double eps, double lam, int t);

// Gaussian preference over the fraction c/n: mean 0 for t=0, mean mu for t=1.
CardinalityTable normal_table(std::size_t n, double mu, double sigma, int t);

// 0 on the allowed counts, -inf elsewhere.
CardinalityTable hard_count_table(std::size_t n, std::span<const std::size_t> allowed);

struct TreeNode {
  int left = -1;
  int right = -1;
  int var = -1;  // leaves only

  bool is_leaf() const { return left < 0; }
};

// Rooted binary tree whose leaves are the variables 0..D-1. Node ids are
// indices into nodes(). Immutable after construction.
class TreeSpec {
 public:
  TreeSpec(std::vector<TreeNode> nodes, int root);

  std::size_t num_vars() const { return leaf_of_var_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }
  int root() const { return root_; }
  const TreeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  bool is_leaf(int id) const { return node(id).is_leaf(); }

  // Number of leaf descendants.
  std::size_t size(int id) const { return sizes_[static_cast<std::size_t>(id)]; }
  int parent(int id) const { return parents_[static_cast<std::size_t>(id)]; }
  int leaf_of_var(std::size_t var) const { return leaf_of_var_[var]; }

  // Children before parents.
  const std::vector<int>& postorder() const { return postorder_; }
  // Sorted variable indices below a node.
  std::vector<std::size_t> leaf_set(int id) const;
  // Edges on the longest root-to-leaf path.
  std::size_t depth() const;

 private:
  std::vector<TreeNode> nodes_;
  int root_;
  std::vector<std::size_t> sizes_;
  std::vector<int> parents_;
  std::vector<int> leaf_of_var_;
  std::vector<int> postorder_;
};

// Balanced tree over D leaves; a node with m leaves sends ceil(m/2) left.
TreeSpec balanced_tree(std::size_t num_vars);

struct SubsetFamily {
  std::size_t num_vars = 0;
  std::vector<std::vector<std::size_t>> subsets;
};

// Sorts each subset and checks ranges, emptiness and duplicates.
SubsetFamily normalized(SubsetFamily family);

bool validate_nested(const SubsetFamily& family);

struct Alignment {
  TreeSpec tree;
  // Node whose leaf set equals each input subset, in input order.
  std::vector<int> subset_nodes;
};

Alignment align_tree(const SubsetFamily& family);

struct Unary {
  double off = 0.0;  // log theta(0)
  double on = 0.0;   // log theta(1)
};

// Recursive cardinality model: unaries on the leaves and optional cardinality
// tables on tree nodes. Leaf tables are folded into the unaries.
class RCModel {
 public:
  RCModel(std::vector<Unary> unary, TreeSpec tree,
          std::vector<std::optional<CardinalityTable>> node_tables);
  // Unaries only, over the given tree.
  RCModel(std::vector<Unary> unary, TreeSpec tree);

  std::size_t num_vars() const { return unary_.size(); }
  const std::vector<Unary>& unary() const { return unary_; }
  const TreeSpec& tree() const { return tree_; }
  const std::optional<CardinalityTable>& table(int node) const {
    return tables_[static_cast<std::size_t>(node)];
  }
  const std::vector<std::optional<CardinalityTable>>& tables() const { return tables_; }

  // Unnormalized log-probability of a configuration (-inf when forbidden).
  double score(std::span<const unsigned char> y) const;

 private:
  std::vector<Unary> unary_;
  TreeSpec tree_;
  std::vector<std::optional<CardinalityTable>> tables_;
};

// Standard cardinality model: one table over all variables at the root of a
// balanced tree.
RCModel standard_cardinality_model(std::vector<Unary> unary, CardinalityTable table);

}  // namespace rcm
