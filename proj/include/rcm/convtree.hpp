#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rcm/convolution.hpp"
#include "rcm/model.hpp"

namespace rcm {

// Message over a count variable: exp(log_scale) * weights, with weights
// nonnegative and summing to one.
struct MessageVector {
  std::vector<double> weights;
  double log_scale = 0.0;
};

struct UpState {
  // Per node, the upward message including the node's own table.
  std::vector<MessageVector> up;
  // Root upward log-scale, i.e. the log-partition value.
  double log_z = 0.0;
};

struct CountDistribution {
  std::vector<double> probs;  // over counts 0..n

  double mean() const;
};

struct InferenceResult {
  std::vector<double> leaf_marginals;  // P(y_d = 1)
  // Indexed by node id. Internal nodes carry their count distribution; leaves
  // carry [P(y=0), P(y=1)].
  std::vector<CountDistribution> count_marginals;
  double log_z = 0.0;
};

UpState upward_pass(const RCModel& model, Backend backend = Backend::Auto);

double log_partition(const RCModel& model, Backend backend = Backend::Auto);

InferenceResult marginals(const RCModel& model, Backend backend = Backend::Auto);

CountDistribution count_marginal(const RCModel& model, int node, Backend backend = Backend::Auto);

using Sample = std::vector<unsigned char>;

// Exact joint sampler. Construction runs the upward pass once; draws are then
// top-down splits of each parent count along the child diagonal.
class Sampler {
 public:
  explicit Sampler(const RCModel& model, Backend backend = Backend::Auto);

  Sample draw(std::mt19937_64& rng) const;
  void draw_into(std::mt19937_64& rng, std::span<unsigned char> out) const;

 private:
  std::size_t choose_split(int node, std::size_t count, double u) const;

  TreeSpec tree_;
  std::vector<std::vector<double>> up_;
  std::vector<double> root_cdf_;
  // cdf_cache_[node][count] holds the cumulative split distribution over the
  // left child's count, offset by its lowest feasible value. Empty when the
  // node is too large to tabulate.
  std::vector<std::vector<std::vector<double>>> cdf_cache_;
};

std::vector<Sample> sample(const RCModel& model, std::uint64_t seed, std::size_t num_samples,
                           Backend backend = Backend::Auto);

// Pair of nonnegative weights over {0, 1}.
using BinaryMessage = std::array<double, 2>;

// Outgoing sum-product messages from a cardinality factor to each of its
// variables, given the incoming variable-to-factor messages. Results are
// normalized to sum to one.
std::vector<BinaryMessage> factor_messages(std::span<const BinaryMessage> incoming,
                                           const CardinalityTable& table,
                                           Backend backend = Backend::Auto);

}  // namespace rcm
