#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rcm/convolution.hpp"
#include "rcm/model.hpp"

namespace rcm {

// Binary grid y_ij with unary log-potentials theta_ij and cardinality tables on
// every row count and every column count.
class MatchingModel {
 public:
  MatchingModel(std::size_t rows, std::size_t cols, std::vector<double> theta,
                std::vector<CardinalityTable> row_tables, std::vector<CardinalityTable> col_tables);

  // Same allowed-count set on every row and every column.
  static MatchingModel with_hard_counts(std::size_t rows, std::size_t cols,
                                        std::vector<double> theta,
                                        std::span<const std::size_t> row_allowed,
                                        std::span<const std::size_t> col_allowed);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t index(std::size_t i, std::size_t j) const { return i * cols_ + j; }
  double theta(std::size_t i, std::size_t j) const { return theta_[index(i, j)]; }
  const std::vector<double>& theta() const { return theta_; }
  const CardinalityTable& row_table(std::size_t i) const { return row_tables_[i]; }
  const CardinalityTable& col_table(std::size_t j) const { return col_tables_[j]; }

  // Unnormalized log-probability of a row-major configuration.
  double score(std::span<const unsigned char> y) const;

 private:
  std::size_t rows_, cols_;
  std::vector<double> theta_;
  std::vector<CardinalityTable> row_tables_, col_tables_;
};

struct LbpOptions {
  int max_iters = 200;
  double damping = 0.5;          // geometric mixing weight on the previous message
  double convergence_tol = 1e-8;  // max absolute change of P(y_ij = 1)
  Backend backend = Backend::Auto;
};

struct LbpResult {
  std::vector<double> marginals;  // row-major P(y_ij = 1)
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_history;
};

// Damped loopy sum-product. One iteration updates every row factor, then every
// column factor; each factor's messages come from one factor_messages call.
LbpResult lbp_matching(const MatchingModel& model, const LbpOptions& opts = {});

// sigmoid(theta_ij), ignoring the count tables.
std::vector<double> node_marginal_baseline(const MatchingModel& model);

struct BlockGibbsResult {
  std::vector<double> marginals;
  std::vector<unsigned char> final_state;
};

// Block Gibbs over 2x2 blocks (rows i1,i2 x columns j1,j2) resampled from their
// exact 16-state conditional. One sweep is floor(R/2)*floor(C/2) block updates;
// averages are taken after each post-burn-in sweep. The visitor, if set, sees
// every state after each block update.
BlockGibbsResult block_gibbs(const MatchingModel& model, std::span<const unsigned char> init,
                             std::uint64_t seed, std::size_t sweeps, std::size_t burn_in,
                             const std::function<void(std::span<const unsigned char>)>& visitor = {});

inline constexpr std::size_t kExactMatchingMaxCells = 20;

std::vector<double> exact_matching_marginals(const MatchingModel& model);

}  // namespace rcm
