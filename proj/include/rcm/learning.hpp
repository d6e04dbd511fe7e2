#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rcm/convtree.hpp"
#include "rcm/model.hpp"

namespace rcm {

// N binary vectors of a common length.
struct Dataset {
  std::size_t num_vars = 0;
  std::vector<Sample> rows;

  std::size_t size() const { return rows.size(); }
  // Throws ArgumentError on ragged rows or non-binary entries.
  void validate() const;
};

// theta_d(1) = unary_weights[d], theta_d(0) = 0. table_params[node] is empty
// for nodes without a table; -inf entries are structural and never updated.
struct Parameters {
  std::vector<double> unary_weights;
  std::vector<std::vector<double>> table_params;
};

enum class TablePlacement { None, Root, Internal };

Parameters zero_parameters(const TreeSpec& tree, TablePlacement placement);
RCModel to_model(const Parameters& params, const TreeSpec& tree);
// Log-odds form of a model's unaries; tables copied as they are.
Parameters from_model(const RCModel& model);

struct NllGrad {
  double nll = 0.0;  // per example
  Parameters grad;
};

NllGrad nll_and_grad(const Parameters& params, const TreeSpec& tree, const Dataset& data);

// Average negative log-likelihood of data under a model.
double average_nll(const RCModel& model, const Dataset& data);

struct FitOptions {
  double step = 1.0;
  int iters = 500;
  double l1_lambda = 0.0;  // on unary weights only
  double grad_tol = 1e-9;  // stop when the largest gradient entry is below this
};

struct FitResult {
  Parameters params;
  std::vector<double> objective_history;  // accepted iterations, starting with the initial value
};

// Proximal gradient descent with step halving whenever the objective
// (nll + l1_lambda * |w|_1) would increase.
FitResult fit(const TreeSpec& tree, const Dataset& data, const FitOptions& opts,
              Parameters init);
FitResult fit(const TreeSpec& tree, const Dataset& data, const FitOptions& opts,
              TablePlacement placement = TablePlacement::Internal);

// ---------------------------------------------------------------- MIL

struct Bag {
  std::size_t num_features = 0;
  std::vector<double> features;  // row-major, one row per instance
  int label = 0;

  std::size_t size() const { return num_features ? features.size() / num_features : 0; }
  std::span<const double> instance(std::size_t i) const {
    return std::span<const double>(features).subspan(i * num_features, num_features);
  }
};

struct MilValue {
  double loglik = 0.0;          // log P(t = label | bag)
  std::vector<double> grad;     // d loglik / d weights
  double prob_positive = 0.0;   // P(t = 1 | bag)
};

MilValue mil_loglik_and_grad(const Bag& bag, std::span<const double> weights,
                             const CardinalityTable& f0, const CardinalityTable& f1);

double expected_positive_count(const Bag& bag, std::span<const double> weights,
                               const CardinalityTable& f0, const CardinalityTable& f1);

// Label-conditional count tables as a function of bag size.
struct MilLink {
  enum class Kind { NoisyOr, Normal } kind = Kind::NoisyOr;
  double eps = 0.0, lam = 0.5;    // noisy-OR
  double mu = 0.5, sigma = 0.2;   // Normal

  CardinalityTable table(std::size_t bag_size, int label) const;
};

struct MilFitOptions {
  double step = 0.1;
  int iters = 200;
  double l1_lambda = 0.0;
};

struct MilFitResult {
  std::vector<double> weights;
  double total_loglik = 0.0;
  std::vector<double> objective_history;
};

// Maximizes sum_b log P(t_b | bag_b) - l1_lambda |w|_1 by proximal gradient
// ascent with step halving.
MilFitResult fit_mil(std::span<const Bag> bags, const MilLink& link, const MilFitOptions& opts);

// ---------------------------------------------------------------- structure

enum class StructureMode { Adaptive, Anti };

// Average-linkage agglomerative clustering of variables under the agreement
// rate s(d,d') = fraction of rows with y_d == y_d'. Anti mode clusters on -s.
// Leaves are nodes 0..D-1; the k-th merge creates node D+k.
TreeSpec agglomerative_structure(const Dataset& data, StructureMode mode);

struct SubsetSizeError {
  std::size_t subset_size = 0;
  double rmse = 0.0;  // mean over nodes of this size
  std::size_t num_nodes = 0;
};

// For every node of eval_tree, RMSE between the empirical count histogram of
// data and the model's count distribution (exact when the node's leaf set is a
// node of the model tree, otherwise estimated from num_samples exact samples).
std::vector<SubsetSizeError> count_statistics_error(const RCModel& model, const Dataset& data,
                                                    const TreeSpec& eval_tree,
                                                    std::size_t num_samples, std::uint64_t seed);

// Same grouping, comparing two datasets' empirical histograms.
std::vector<SubsetSizeError> count_statistics_error(const Dataset& reference, const Dataset& other,
                                                    const TreeSpec& eval_tree);

// ---------------------------------------------------------------- data

// Critical coupling of the square-lattice Ising model, ln(1 + sqrt 2) / 2.
inline constexpr double kIsingCriticalCoupling = 0.44068679350977147;

// Zero-field Ising model on a height x width grid with free boundaries. Each
// sample is an independent chain from a uniform random start, recorded after
// `sweeps` single-site Gibbs sweeps. Rows are row-major pixels, 1 for spin +1.
Dataset ising_gibbs_generate(std::size_t height, std::size_t width, double coupling,
                             std::size_t num_samples, std::size_t sweeps, std::uint64_t seed);

}  // namespace rcm
