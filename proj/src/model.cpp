#include "rcm/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "rcm/errors.hpp"

namespace rcm {

namespace {

std::string describe_set(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << '}';
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- tables

CardinalityTable::CardinalityTable(std::vector<double> log_f) : log_f_(std::move(log_f)) {
  if (log_f_.empty()) throw ArgumentError("cardinality table must have at least one entry");
  bool any_finite = false;
  for (std::size_t c = 0; c < log_f_.size(); ++c) {
    double v = log_f_[c];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      std::ostringstream os;
      os << "cardinality table entry " << c << " is " << v << "; expected finite or -inf";
      throw ArgumentError(os.str());
    }
    any_finite |= std::isfinite(v);
  }
  if (!any_finite) throw ArgumentError("cardinality table has no finite entry (zero mass)");
}

CardinalityTable CardinalityTable::uniform(std::size_t n) {
  return CardinalityTable(std::vector<double>(n + 1, 0.0));
}

double CardinalityTable::max_value() const {
  return *std::max_element(log_f_.begin(), log_f_.end());
}

CardinalityTable noisy_or_table(std::size_t n, double eps, double lam, int t) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ArgumentError("noisy-OR eps must lie in [0,1]");
  if (!(lam >= 0.0 && lam <= 1.0)) throw ArgumentError("noisy-OR lam must lie in [0,1]");
  if (t != 0 && t != 1) throw ArgumentError("noisy-OR label must be 0 or 1");
  std::vector<double> log_f(n + 1);
  const double log_keep = std::log1p(-eps);  // log(1-eps)
  const double log_miss = std::log1p(-lam);  // log(1-lam)
  for (std::size_t c = 0; c <= n; ++c) {
    // log P(t=0 | c) = log(1-eps) + c log(1-lam)
    double log_off = (c == 0) ? log_keep : log_keep + static_cast<double>(c) * log_miss;
    if (std::isnan(log_off)) log_off = kNegInf;  // 0 * -inf
    if (t == 0) {
      log_f[c] = log_off;
    } else {
      double off = std::exp(log_off);
      // log(1 - exp(a)) computed without cancellation for a near 0.
      log_f[c] = (off >= 1.0) ? kNegInf
                 : (log_off > -0.693) ? std::log(-std::expm1(log_off))
                                      : std::log1p(-off);
    }
  }
  return CardinalityTable(std::move(log_f));
}

CardinalityTable normal_table(std::size_t n, double mu, double sigma, int t) {
  if (n == 0) throw ArgumentError("normal table needs n >= 1");
  if (!(sigma > 0.0)) throw ArgumentError("normal table needs sigma > 0");
  if (t != 0 && t != 1) throw ArgumentError("normal table label must be 0 or 1");
  const double mean = (t == 1) ? mu : 0.0;
  std::vector<double> log_f(n + 1);
  for (std::size_t c = 0; c <= n; ++c) {
    double dev = static_cast<double>(c) / static_cast<double>(n) - mean;
    log_f[c] = -(dev * dev) / (2.0 * sigma * sigma);
  }
  return CardinalityTable(std::move(log_f));
}

CardinalityTable hard_count_table(std::size_t n, std::span<const std::size_t> allowed) {
  if (allowed.empty()) throw ArgumentError("hard count table needs a nonempty allowed set");
  std::vector<double> log_f(n + 1, kNegInf);
  for (std::size_t c : allowed) {
    if (c > n) {
      std::ostringstream os;
      os << "allowed count " << c << " exceeds subset size " << n;
      throw ArgumentError(os.str());
    }
    log_f[c] = 0.0;
  }
  return CardinalityTable(std::move(log_f));
}

// ---------------------------------------------------------------- trees

TreeSpec::TreeSpec(std::vector<TreeNode> nodes, int root) : nodes_(std::move(nodes)), root_(root) {
  const int count = static_cast<int>(nodes_.size());
  if (count == 0) throw StructureError("tree has no nodes");
  if (root_ < 0 || root_ >= count) throw StructureError("tree root id out of range");

  std::size_t num_leaves = 0;
  for (int id = 0; id < count; ++id) {
    const TreeNode& n = nodes_[static_cast<std::size_t>(id)];
    const bool has_l = n.left >= 0, has_r = n.right >= 0;
    if (has_l != has_r) {
      throw StructureError("node " + std::to_string(id) + " has exactly one child");
    }
    if (has_l) {
      if (n.left >= count || n.right >= count || n.left == n.right) {
        throw StructureError("node " + std::to_string(id) + " has invalid child ids");
      }
      if (n.var >= 0) {
        throw StructureError("internal node " + std::to_string(id) + " carries a variable");
      }
    } else {
      if (n.var < 0) throw StructureError("leaf node " + std::to_string(id) + " has no variable");
      ++num_leaves;
    }
  }

  parents_.assign(nodes_.size(), -1);
  sizes_.assign(nodes_.size(), 0);
  leaf_of_var_.assign(num_leaves, -1);
  postorder_.reserve(nodes_.size());

  // Iterative DFS; deep unbalanced trees must not blow the stack.
  std::vector<char> seen(nodes_.size(), 0);
  std::vector<std::pair<int, bool>> stack{{root_, false}};
  seen[static_cast<std::size_t>(root_)] = 1;
  while (!stack.empty()) {
    auto [id, expanded] = stack.back();
    stack.pop_back();
    const TreeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      if (static_cast<std::size_t>(n.var) >= num_leaves) {
        throw StructureError("leaf node " + std::to_string(id) + " has variable index " +
                             std::to_string(n.var) + " outside 0.." +
                             std::to_string(num_leaves - 1));
      }
      if (leaf_of_var_[static_cast<std::size_t>(n.var)] >= 0) {
        throw StructureError("leaf node " + std::to_string(id) + " repeats variable " +
                             std::to_string(n.var));
      }
      leaf_of_var_[static_cast<std::size_t>(n.var)] = id;
      sizes_[static_cast<std::size_t>(id)] = 1;
      postorder_.push_back(id);
      continue;
    }
    if (expanded) {
      sizes_[static_cast<std::size_t>(id)] =
          sizes_[static_cast<std::size_t>(n.left)] + sizes_[static_cast<std::size_t>(n.right)];
      postorder_.push_back(id);
      continue;
    }
    stack.push_back({id, true});
    for (int child : {n.right, n.left}) {
      if (seen[static_cast<std::size_t>(child)]) {
        throw StructureError("node " + std::to_string(child) + " is reachable twice (not a tree)");
      }
      seen[static_cast<std::size_t>(child)] = 1;
      parents_[static_cast<std::size_t>(child)] = id;
      stack.push_back({child, false});
    }
  }
  if (postorder_.size() != nodes_.size()) {
    for (int id = 0; id < count; ++id) {
      if (!seen[static_cast<std::size_t>(id)]) {
        throw StructureError("node " + std::to_string(id) + " is not reachable from the root");
      }
    }
  }
}

std::vector<std::size_t> TreeSpec::leaf_set(int id) const {
  std::vector<std::size_t> out;
  out.reserve(size(id));
  std::vector<int> stack{id};
  while (!stack.empty()) {
    int cur = stack.back();
    stack.pop_back();
    const TreeNode& n = node(cur);
    if (n.is_leaf()) {
      out.push_back(static_cast<std::size_t>(n.var));
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t TreeSpec::depth() const {
  std::vector<std::size_t> height(nodes_.size(), 0);
  for (int id : postorder_) {
    const TreeNode& n = node(id);
    if (!n.is_leaf()) {
      height[static_cast<std::size_t>(id)] =
          1 + std::max(height[static_cast<std::size_t>(n.left)],
                       height[static_cast<std::size_t>(n.right)]);
    }
  }
  return height[static_cast<std::size_t>(root_)];
}

namespace {

struct Item {
  int node;
  std::size_t size;
};

// Joins subtrees into one binary tree, splitting where the left side holds the
// prefix whose size is closest to ceil(total/2).
int combine_balanced(std::vector<TreeNode>& nodes, std::span<const Item> items) {
  if (items.size() == 1) return items.front().node;
  std::size_t total = 0;
  for (const Item& it : items) total += it.size;
  const std::size_t target = (total + 1) / 2;
  std::size_t best_k = 1, prefix = 0, best_gap = static_cast<std::size_t>(-1);
  for (std::size_t k = 1; k < items.size(); ++k) {
    prefix += items[k - 1].size;
    std::size_t gap = prefix > target ? prefix - target : target - prefix;
    if (gap < best_gap) {
      best_gap = gap;
      best_k = k;
    }
  }
  int left = combine_balanced(nodes, items.subspan(0, best_k));
  int right = combine_balanced(nodes, items.subspan(best_k));
  nodes.push_back(TreeNode{left, right, -1});
  return static_cast<int>(nodes.size()) - 1;
}

std::vector<TreeNode> leaves_first(std::size_t num_vars) {
  std::vector<TreeNode> nodes;
  nodes.reserve(2 * num_vars);
  for (std::size_t d = 0; d < num_vars; ++d) nodes.push_back(TreeNode{-1, -1, static_cast<int>(d)});
  return nodes;
}

}  // namespace

TreeSpec balanced_tree(std::size_t num_vars) {
  if (num_vars == 0) throw ArgumentError("balanced_tree needs at least one variable");
  std::vector<TreeNode> nodes = leaves_first(num_vars);
  std::vector<Item> items(num_vars);
  for (std::size_t d = 0; d < num_vars; ++d) items[d] = {static_cast<int>(d), 1};
  int root = combine_balanced(nodes, items);
  return TreeSpec(std::move(nodes), root);
}

// ---------------------------------------------------------------- subsets

SubsetFamily normalized(SubsetFamily family) {
  for (auto& s : family.subsets) {
    if (s.empty()) throw StructureError("subset family contains an empty subset");
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) {
      throw StructureError("subset " + describe_set(s) + " repeats an index");
    }
    if (s.back() >= family.num_vars) {
      throw StructureError("subset " + describe_set(s) + " has index outside 0.." +
                           std::to_string(family.num_vars - 1));
    }
  }
  std::vector<std::vector<std::size_t>> sorted = family.subsets;
  std::sort(sorted.begin(), sorted.end());
  if (auto it = std::adjacent_find(sorted.begin(), sorted.end()); it != sorted.end()) {
    throw StructureError("subset " + describe_set(*it) + " appears twice");
  }
  return family;
}

namespace {

// Returns the first pair of subsets that overlap without containment.
std::optional<std::pair<std::size_t, std::size_t>> find_crossing(const SubsetFamily& f) {
  for (std::size_t i = 0; i < f.subsets.size(); ++i) {
    for (std::size_t j = i + 1; j < f.subsets.size(); ++j) {
      const auto& a = f.subsets[i];
      const auto& b = f.subsets[j];
      std::size_t common = 0;
      for (std::size_t p = 0, q = 0; p < a.size() && q < b.size();) {
        if (a[p] == b[q]) {
          ++common, ++p, ++q;
        } else if (a[p] < b[q]) {
          ++p;
        } else {
          ++q;
        }
      }
      if (common != 0 && common != a.size() && common != b.size()) return std::pair{i, j};
    }
  }
  return std::nullopt;
}

}  // namespace

bool validate_nested(const SubsetFamily& family) {
  return !find_crossing(normalized(family)).has_value();
}

Alignment align_tree(const SubsetFamily& input) {
  if (input.num_vars == 0) throw ArgumentError("align_tree needs at least one variable");
  SubsetFamily family = normalized(input);
  if (auto bad = find_crossing(family)) {
    throw StructureError("subsets " + describe_set(family.subsets[bad->first]) + " and " +
                         describe_set(family.subsets[bad->second]) +
                         " overlap without one containing the other");
  }
  const std::size_t D = family.num_vars;

  // Laminar forest: sets ordered by decreasing size; each set's parent is the
  // smallest previously placed set containing it. Index k == sets.size() is the
  // full variable set.
  std::vector<std::size_t> order(family.subsets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return family.subsets[a].size() > family.subsets[b].size();
  });
  const std::size_t full = family.subsets.size();
  std::vector<std::size_t> owner(D, full);
  std::vector<std::vector<std::size_t>> child_sets(full + 1);
  std::vector<int> subset_nodes(family.subsets.size(), -1);
  for (std::size_t k : order) {
    const auto& s = family.subsets[k];
    if (s.size() == D || s.size() == 1) continue;  // root and leaves
    child_sets[owner[s.front()]].push_back(k);
    for (std::size_t v : s) owner[v] = k;
  }

  std::vector<TreeNode> nodes = leaves_first(D);
  std::vector<int> set_node(full + 1, -1);

  // Build bottom-up: deeper sets first (reverse of decreasing-size order).
  auto build = [&](std::size_t k, const std::vector<std::size_t>& members) {
    std::vector<Item> items;
    std::vector<char> covered(D, 0);
    for (std::size_t c : child_sets[k]) {
      for (std::size_t v : family.subsets[c]) covered[v] = 1;
    }
    // Items ordered by smallest variable index.
    std::vector<std::pair<std::size_t, Item>> keyed;
    for (std::size_t c : child_sets[k]) {
      keyed.push_back({family.subsets[c].front(),
                       Item{set_node[c], family.subsets[c].size()}});
    }
    for (std::size_t v : members) {
      if (!covered[v]) keyed.push_back({v, Item{static_cast<int>(v), 1}});
    }
    std::sort(keyed.begin(), keyed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [key, item] : keyed) items.push_back(item);
    set_node[k] = combine_balanced(nodes, items);
  };
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t k = *it;
    const auto& s = family.subsets[k];
    if (s.size() == D || s.size() == 1) continue;
    build(k, s);
  }
  std::vector<std::size_t> all(D);
  std::iota(all.begin(), all.end(), 0);
  if (D == 1) {
    set_node[full] = 0;
  } else {
    build(full, all);
  }

  for (std::size_t k = 0; k < family.subsets.size(); ++k) {
    const auto& s = family.subsets[k];
    if (s.size() == D) {
      subset_nodes[k] = set_node[full];
    } else if (s.size() == 1) {
      subset_nodes[k] = static_cast<int>(s.front());
    } else {
      subset_nodes[k] = set_node[k];
    }
  }
  return Alignment{TreeSpec(std::move(nodes), set_node[full]), std::move(subset_nodes)};
}

// ---------------------------------------------------------------- model

RCModel::RCModel(std::vector<Unary> unary, TreeSpec tree,
                 std::vector<std::optional<CardinalityTable>> node_tables)
    : unary_(std::move(unary)), tree_(std::move(tree)), tables_(std::move(node_tables)) {
  if (unary_.size() != tree_.num_vars()) {
    throw StructureError("model has " + std::to_string(unary_.size()) +
                         " unaries but the tree has " + std::to_string(tree_.num_vars()) +
                         " leaves");
  }
  if (tables_.empty()) tables_.resize(tree_.num_nodes());
  if (tables_.size() != tree_.num_nodes()) {
    throw StructureError("model needs one table slot per tree node");
  }
  for (const Unary& u : unary_) {
    for (double v : {u.off, u.on}) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw ArgumentError("unary log-potentials must be finite or -inf");
      }
    }
  }
  for (std::size_t id = 0; id < tables_.size(); ++id) {
    auto& t = tables_[id];
    if (!t) continue;
    const int node = static_cast<int>(id);
    if (t->n() != tree_.size(node)) {
      throw StructureError("node " + std::to_string(id) + " covers " +
                           std::to_string(tree_.size(node)) + " leaves but its table has " +
                           std::to_string(t->length()) + " entries");
    }
    if (tree_.is_leaf(node)) {
      Unary& u = unary_[static_cast<std::size_t>(tree_.node(node).var)];
      u.off += (*t)[0];
      u.on += (*t)[1];
      t.reset();
    }
  }
}

RCModel::RCModel(std::vector<Unary> unary, TreeSpec tree)
    : RCModel(std::move(unary), std::move(tree), {}) {}

double RCModel::score(std::span<const unsigned char> y) const {
  if (y.size() != num_vars()) throw ArgumentError("configuration length does not match model");
  double total = 0.0;
  for (std::size_t d = 0; d < y.size(); ++d) total += y[d] ? unary_[d].on : unary_[d].off;
  std::vector<std::size_t> counts(tree_.num_nodes(), 0);
  for (int id : tree_.postorder()) {
    const TreeNode& n = tree_.node(id);
    std::size_t c = n.is_leaf() ? (y[static_cast<std::size_t>(n.var)] ? 1 : 0)
                                : counts[static_cast<std::size_t>(n.left)] +
                                      counts[static_cast<std::size_t>(n.right)];
    counts[static_cast<std::size_t>(id)] = c;
    if (const auto& t = tables_[static_cast<std::size_t>(id)]) total += (*t)[c];
  }
  return total;
}

RCModel standard_cardinality_model(std::vector<Unary> unary, CardinalityTable table) {
  TreeSpec tree = balanced_tree(unary.size());
  std::vector<std::optional<CardinalityTable>> tables(tree.num_nodes());
  tables[static_cast<std::size_t>(tree.root())] = std::move(table);
  return RCModel(std::move(unary), std::move(tree), std::move(tables));
}

}  // namespace rcm
