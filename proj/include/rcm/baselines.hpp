#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rcm/convtree.hpp"
#include "rcm/model.hpp"

namespace rcm {

// Standard cardinality model by chained partial sums z_d = z_{d-1} + y_d.
// Forward and backward tables are kept in full, giving O(D^2) time and space,
// or O(Dk) when partial sums are capped at max_count. count_marginals holds a
// single entry: the distribution of the total count.
InferenceResult chain_marginals(std::span<const Unary> unary, const CardinalityTable& table,
                                std::optional<std::size_t> max_count = std::nullopt);

// Bytes held by the chain's forward and backward tables.
std::size_t chain_memory_bytes(std::size_t num_vars,
                               std::optional<std::size_t> max_count = std::nullopt);

// Convolution tree with direct O(nm) convolutions.
InferenceResult quadratic_tree_marginals(const RCModel& model);

struct OracleResult {
  InferenceResult result;
  // P(y) indexed by sum_d y_d 2^d; filled when D <= kJointTableMaxVars.
  std::vector<double> joint;
};

inline constexpr std::size_t kBruteForceMaxVars = 24;
inline constexpr std::size_t kJointTableMaxVars = 20;

OracleResult brute_force(const RCModel& model);

}  // namespace rcm
