#include "rcm/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include "rcm/convtree.hpp"
#include "rcm/errors.hpp"

namespace rcm {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::string cell_name(std::size_t i, std::size_t j) {
  return "y(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

BinaryMessage normalized(double w0, double w1) {
  const double s = w0 + w1;
  return {w0 / s, w1 / s};
}

// Geometric damping keeps hard zeros exact.
BinaryMessage damp(const BinaryMessage& fresh, const BinaryMessage& old, double alpha) {
  if (alpha == 0.0) return fresh;
  auto mix = [alpha](double f, double o) {
    if (f == 0.0 || o == 0.0) return 0.0;
    return std::exp((1.0 - alpha) * std::log(f) + alpha * std::log(o));
  };
  const double w0 = mix(fresh[0], old[0]), w1 = mix(fresh[1], old[1]);
  if (!(w0 + w1 > 0.0)) return fresh;
  return normalized(w0, w1);
}

}  // namespace

MatchingModel::MatchingModel(std::size_t rows, std::size_t cols, std::vector<double> theta,
                             std::vector<CardinalityTable> row_tables,
                             std::vector<CardinalityTable> col_tables)
    : rows_(rows),
      cols_(cols),
      theta_(std::move(theta)),
      row_tables_(std::move(row_tables)),
      col_tables_(std::move(col_tables)) {
  if (rows_ == 0 || cols_ == 0) throw ArgumentError("matching grid must be nonempty");
  if (theta_.size() != rows_ * cols_) throw ArgumentError("theta must have rows*cols entries");
  for (double t : theta_) {
    if (!std::isfinite(t)) throw ArgumentError("theta entries must be finite");
  }
  if (row_tables_.size() != rows_ || col_tables_.size() != cols_) {
    throw ArgumentError("need one table per row and one per column");
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (row_tables_[i].n() != cols_) {
      throw ArgumentError("row " + std::to_string(i) + " table must have " +
                          std::to_string(cols_ + 1) + " entries");
    }
  }
  for (std::size_t j = 0; j < cols_; ++j) {
    if (col_tables_[j].n() != rows_) {
      throw ArgumentError("column " + std::to_string(j) + " table must have " +
                          std::to_string(rows_ + 1) + " entries");
    }
  }
}

MatchingModel MatchingModel::with_hard_counts(std::size_t rows, std::size_t cols,
                                              std::vector<double> theta,
                                              std::span<const std::size_t> row_allowed,
                                              std::span<const std::size_t> col_allowed) {
  std::vector<CardinalityTable> rt(rows, hard_count_table(cols, row_allowed));
  std::vector<CardinalityTable> ct(cols, hard_count_table(rows, col_allowed));
  return MatchingModel(rows, cols, std::move(theta), std::move(rt), std::move(ct));
}

double MatchingModel::score(std::span<const unsigned char> y) const {
  if (y.size() != rows_ * cols_) throw ArgumentError("configuration has the wrong size");
  double s = 0.0;
  std::vector<std::size_t> col_count(cols_, 0);
  for (std::size_t i = 0; i < rows_; ++i) {
    std::size_t row_count = 0;
    for (std::size_t j = 0; j < cols_; ++j) {
      if (y[index(i, j)]) {
        s += theta_[index(i, j)];
        ++row_count;
        ++col_count[j];
      }
    }
    s += row_tables_[i][row_count];
  }
  for (std::size_t j = 0; j < cols_; ++j) s += col_tables_[j][col_count[j]];
  return s;
}

// ---------------------------------------------------------------- LBP

LbpResult lbp_matching(const MatchingModel& model, const LbpOptions& opts) {
  if (!(opts.damping >= 0.0 && opts.damping < 1.0)) {
    throw ArgumentError("damping must lie in [0,1)");
  }
  if (!(opts.convergence_tol > 0.0)) throw ArgumentError("convergence tolerance must be > 0");
  const std::size_t R = model.rows(), C = model.cols();
  const std::size_t cells = R * C;

  std::vector<BinaryMessage> unary(cells);
  for (std::size_t k = 0; k < cells; ++k) {
    const double p = sigmoid(model.theta()[k]);
    unary[k] = {1.0 - p, p};
  }
  std::vector<BinaryMessage> from_row(cells, {0.5, 0.5}), from_col(cells, {0.5, 0.5});

  LbpResult result;
  result.marginals = node_marginal_baseline(model);

  auto update_factor = [&](std::span<const std::size_t> vars, const CardinalityTable& table,
                           std::vector<BinaryMessage>& own,
                           const std::vector<BinaryMessage>& other, const std::string& name) {
    std::vector<BinaryMessage> incoming(vars.size());
    for (std::size_t t = 0; t < vars.size(); ++t) {
      const std::size_t k = vars[t];
      const double w0 = unary[k][0] * other[k][0], w1 = unary[k][1] * other[k][1];
      if (!(w0 + w1 > 0.0)) {
        throw InfeasibleError("no feasible value for " + cell_name(k / C, k % C));
      }
      incoming[t] = normalized(w0, w1);
    }
    std::vector<BinaryMessage> out;
    try {
      out = factor_messages(incoming, table, opts.backend);
    } catch (const ZeroMassError&) {
      throw InfeasibleError(name + " cardinality factor has no feasible configuration");
    }
    for (std::size_t t = 0; t < vars.size(); ++t) {
      own[vars[t]] = damp(out[t], own[vars[t]], opts.damping);
    }
  };

  std::vector<std::size_t> vars;
  for (int it = 1; it <= opts.max_iters; ++it) {
    for (std::size_t i = 0; i < R; ++i) {
      vars.clear();
      for (std::size_t j = 0; j < C; ++j) vars.push_back(model.index(i, j));
      update_factor(vars, model.row_table(i), from_row, from_col, "row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < C; ++j) {
      vars.clear();
      for (std::size_t i = 0; i < R; ++i) vars.push_back(model.index(i, j));
      update_factor(vars, model.col_table(j), from_col, from_row, "column " + std::to_string(j));
    }

    double residual = 0.0;
    for (std::size_t k = 0; k < cells; ++k) {
      const double w0 = unary[k][0] * from_row[k][0] * from_col[k][0];
      const double w1 = unary[k][1] * from_row[k][1] * from_col[k][1];
      if (!(w0 + w1 > 0.0)) {
        throw InfeasibleError("belief of " + cell_name(k / C, k % C) + " is all zero");
      }
      const double p = w1 / (w0 + w1);
      residual = std::max(residual, std::abs(p - result.marginals[k]));
      result.marginals[k] = p;
    }
    result.iterations = it;
    result.residual = residual;
    result.residual_history.push_back(residual);
    if (residual < opts.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

std::vector<double> node_marginal_baseline(const MatchingModel& model) {
  std::vector<double> out(model.theta().size());
  std::transform(model.theta().begin(), model.theta().end(), out.begin(), sigmoid);
  return out;
}

// ---------------------------------------------------------------- block Gibbs

BlockGibbsResult block_gibbs(const MatchingModel& model, std::span<const unsigned char> init,
                             std::uint64_t seed, std::size_t sweeps, std::size_t burn_in,
                             const std::function<void(std::span<const unsigned char>)>& visitor) {
  const std::size_t R = model.rows(), C = model.cols();
  if (R < 2 || C < 2) throw ArgumentError("block Gibbs needs at least 2 rows and 2 columns");
  if (sweeps <= burn_in) throw ArgumentError("sweeps must exceed burn_in");
  if (init.size() != R * C) throw ArgumentError("initial state has the wrong size");
  if (!std::isfinite(model.score(init))) {
    throw InfeasibleError("initial state violates a hard count constraint");
  }

  std::vector<unsigned char> y(init.begin(), init.end());
  std::vector<std::size_t> row_count(R, 0), col_count(C, 0);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      if (y[model.index(i, j)]) ++row_count[i], ++col_count[j];
    }
  }

  std::mt19937_64 rng(seed);
  auto pick_two = [&rng](std::size_t n) {
    std::uniform_int_distribution<std::size_t> first(0, n - 1), second(0, n - 2);
    std::size_t a = first(rng), b = second(rng);
    if (b >= a) ++b;
    return std::pair{a, b};
  };
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t blocks_per_sweep = std::max<std::size_t>(1, (R / 2) * (C / 2));
  std::vector<double> sums(R * C, 0.0);
  std::array<double, 16> logw{};
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t b = 0; b < blocks_per_sweep; ++b) {
      auto [i1, i2] = pick_two(R);
      auto [j1, j2] = pick_two(C);
      const std::array<std::size_t, 4> cell{model.index(i1, j1), model.index(i1, j2),
                                            model.index(i2, j1), model.index(i2, j2)};
      // Counts outside the block.
      const std::size_t r1 = row_count[i1] - y[cell[0]] - y[cell[1]];
      const std::size_t r2 = row_count[i2] - y[cell[2]] - y[cell[3]];
      const std::size_t c1 = col_count[j1] - y[cell[0]] - y[cell[2]];
      const std::size_t c2 = col_count[j2] - y[cell[1]] - y[cell[3]];
      double peak = kNegInf;
      for (unsigned s = 0; s < 16; ++s) {
        const unsigned a = s & 1, bb = (s >> 1) & 1, c = (s >> 2) & 1, d = (s >> 3) & 1;
        double w = 0.0;
        for (unsigned t = 0; t < 4; ++t) {
          if ((s >> t) & 1) w += model.theta()[cell[t]];
        }
        w += model.row_table(i1)[r1 + a + bb] + model.row_table(i2)[r2 + c + d] +
             model.col_table(j1)[c1 + a + c] + model.col_table(j2)[c2 + bb + d];
        logw[s] = w;
        peak = std::max(peak, w);
      }
      double total = 0.0;
      for (double& w : logw) total += (w = std::exp(w - peak));
      double target = unif(rng) * total;
      unsigned chosen = 15;
      for (unsigned s = 0; s < 16; ++s) {
        if (logw[s] == 0.0) continue;
        chosen = s;
        if (target < logw[s]) break;
        target -= logw[s];
      }
      for (unsigned t = 0; t < 4; ++t) {
        const unsigned char v = (chosen >> t) & 1;
        y[cell[t]] = v;
      }
      row_count[i1] = r1 + y[cell[0]] + y[cell[1]];
      row_count[i2] = r2 + y[cell[2]] + y[cell[3]];
      col_count[j1] = c1 + y[cell[0]] + y[cell[2]];
      col_count[j2] = c2 + y[cell[1]] + y[cell[3]];
      if (visitor) visitor(y);
    }
    if (sweep >= burn_in) {
      for (std::size_t k = 0; k < y.size(); ++k) sums[k] += y[k];
    }
  }
  BlockGibbsResult out;
  out.marginals.resize(R * C);
  const double kept = static_cast<double>(sweeps - burn_in);
  for (std::size_t k = 0; k < sums.size(); ++k) out.marginals[k] = sums[k] / kept;
  out.final_state = std::move(y);
  return out;
}

// ---------------------------------------------------------------- exact

std::vector<double> exact_matching_marginals(const MatchingModel& model) {
  const std::size_t cells = model.rows() * model.cols();
  if (cells > kExactMatchingMaxCells) {
    throw ResourceError("exact matching marginals refuse " + std::to_string(cells) +
                        " cells (limit " + std::to_string(kExactMatchingMaxCells) + ")");
  }
  const std::size_t configs = std::size_t{1} << cells;
  std::vector<unsigned char> y(cells);
  auto load = [&](std::size_t code) {
    for (std::size_t k = 0; k < cells; ++k) y[k] = (code >> k) & 1;
  };
  double peak = kNegInf;
  for (std::size_t code = 0; code < configs; ++code) {
    load(code);
    peak = std::max(peak, model.score(y));
  }
  if (peak == kNegInf) throw InfeasibleError("no configuration satisfies the count constraints");
  std::vector<double> sums(cells, 0.0);
  double total = 0.0;
  for (std::size_t code = 0; code < configs; ++code) {
    load(code);
    const double w = std::exp(model.score(y) - peak);
    if (w == 0.0) continue;
    total += w;
    for (std::size_t k = 0; k < cells; ++k) {
      if (y[k]) sums[k] += w;
    }
  }
  for (double& s : sums) s /= total;
  return sums;
}

}  // namespace rcm
