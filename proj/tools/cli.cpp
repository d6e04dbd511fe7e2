#include "cli.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcm/baselines.hpp"
#include "rcm/convtree.hpp"
#include "rcm/errors.hpp"
#include "rcm/io.hpp"
#include "rcm/learning.hpp"
#include "rcm/matching.hpp"

namespace rcm::cli {

namespace {

using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  std::string backend = "auto";
  std::string out = "-";
  int threads = 1;
};

// ---------------------------------------------------------------- commands

int cmd_marginals(const Globals& g, const std::string& model_path) {
  const RCModel model = io::read_model(model_path);
  const InferenceResult r = marginals(model, parse_backend(g.backend));
  io::write_file_atomic(g.out, io::marginals_to_csv(r));
  return kOk;
}

int cmd_sample(const Globals& g, const std::string& model_path, std::size_t n) {
  const RCModel model = io::read_model(model_path);
  Dataset d{model.num_vars(), n ? sample(model, g.seed, n, parse_backend(g.backend)) : std::vector<Sample>{}};
  io::write_file_atomic(g.out, io::dataset_to_text(d));
  return kOk;
}

struct MatchArgs {
  std::string path;
  std::string method = "lbp";
  int max_iters = 200;
  double damping = 0.5;
  double tol = 1e-8;
};

int cmd_match(const Globals& g, const MatchArgs& a) {
  const MatchingModel m = io::read_matching(a.path);
  std::vector<double> p;
  if (a.method == "lbp") {
    LbpOptions o;
    o.max_iters = a.max_iters;
    o.damping = a.damping;
    o.convergence_tol = a.tol;
    o.backend = parse_backend(g.backend);
    LbpResult r = lbp_matching(m, o);
    std::cerr << "lbp: " << (r.converged ? "converged" : "not converged") << " after " << r.iterations
              << " iterations, residual " << r.residual << "\n";
    p = std::move(r.marginals);
  } else if (a.method == "node") {
    p = node_marginal_baseline(m);
  } else {
    p = exact_matching_marginals(m);
  }
  std::string csv = "i,j,p\n";
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      csv += std::to_string(i) + "," + std::to_string(j) + "," + io::format_double(p[m.index(i, j)]) + "\n";
  io::write_file_atomic(g.out, csv);
  return kOk;
}

TreeSpec structure_for(const std::string& choice, const Dataset& data) {
  if (choice == "balanced") return balanced_tree(data.num_vars);
  if (choice == "adaptive") return agglomerative_structure(data, StructureMode::Adaptive);
  if (choice == "anti") return agglomerative_structure(data, StructureMode::Anti);
  // Otherwise a tree JSON file, as written by the struct command.
  json doc;
  doc["num_vars"] = data.num_vars;
  try {
    doc["tree"] = json::parse(io::read_file(choice));
  } catch (const json::parse_error& e) {
    throw ParseError("structure " + choice + ": " + e.what());
  }
  return io::parse_model(doc.dump()).tree();
}

struct FitArgs {
  std::string data_path;
  std::string structure = "balanced";
  std::string tables = "internal";
  double step = 1.0;
  int iters = 500;
  double l1 = 0.0;
};

int cmd_fit(const Globals& g, const FitArgs& a) {
  const Dataset data = io::read_dataset(a.data_path);
  data.validate();
  const TreeSpec tree = structure_for(a.structure, data);
  const TablePlacement placement = a.tables == "none"   ? TablePlacement::None
                                   : a.tables == "root" ? TablePlacement::Root
                                                        : TablePlacement::Internal;
  FitOptions o;
  o.step = a.step;
  o.iters = a.iters;
  o.l1_lambda = a.l1;
  const FitResult r = fit(tree, data, o, placement);
  std::cerr << "fit: nll " << r.objective_history.front() << " -> " << r.objective_history.back() << " in "
            << r.objective_history.size() - 1 << " accepted steps\n";
  io::write_file_atomic(g.out, io::model_to_json(to_model(r.params, tree)));
  return kOk;
}

struct MilArgs {
  std::string bags_path;
  std::string link = "noisy-or";
  double eps = 0.0, lam = 0.5, mu = 0.5, sigma = 0.2;
  double step = 0.1;
  int iters = 200;
  double l1 = 0.0;
};

int cmd_mil(const Globals& g, const MilArgs& a) {
  const std::vector<Bag> bags = io::read_bags(a.bags_path);
  if (bags.empty()) throw ParseError("bag file holds no bags");
  MilLink link;
  link.kind = a.link == "normal" ? MilLink::Kind::Normal : MilLink::Kind::NoisyOr;
  link.eps = a.eps;
  link.lam = a.lam;
  link.mu = a.mu;
  link.sigma = a.sigma;
  MilFitOptions o;
  o.step = a.step;
  o.iters = a.iters;
  o.l1_lambda = a.l1;
  const MilFitResult r = fit_mil(bags, link, o);

  json doc;
  doc["weights"] = r.weights;
  doc["loglik"] = r.total_loglik;
  doc["iterations"] = r.objective_history.size() - 1;
  json per_bag = json::array();
  for (const Bag& b : bags) {
    const auto f0 = link.table(b.size(), 0), f1 = link.table(b.size(), 1);
    const MilValue v = mil_loglik_and_grad(b, r.weights, f0, f1);
    per_bag.push_back({{"label", b.label},
                       {"size", b.size()},
                       {"p_positive", v.prob_positive},
                       {"expected_positive_count", expected_positive_count(b, r.weights, f0, f1)}});
  }
  doc["bags"] = std::move(per_bag);
  io::write_file_atomic(g.out, doc.dump(1) + "\n");
  return kOk;
}

int cmd_struct(const Globals& g, const std::string& data_path, const std::string& mode) {
  const Dataset data = io::read_dataset(data_path);
  const TreeSpec t =
      agglomerative_structure(data, mode == "anti" ? StructureMode::Anti : StructureMode::Adaptive);
  io::write_file_atomic(g.out, io::tree_to_json(t));
  return kOk;
}

struct IsingArgs {
  std::size_t height = 16, width = 16, samples = 1000, sweeps = 200;
  double coupling = kIsingCriticalCoupling;
};

int cmd_ising(const Globals& g, const IsingArgs& a) {
  const Dataset d = ising_gibbs_generate(a.height, a.width, a.coupling, a.samples, a.sweeps, g.seed);
  io::write_file_atomic(g.out, io::dataset_to_text(d));
  return kOk;
}

int cmd_bench(const Globals& g, BenchOptions o) {
  o.seed = g.seed;
  const auto records = run_bench(o);
  io::write_file_atomic(g.out, bench_csv(records));
  return kOk;
}

// ---------------------------------------------------------------- bench

RCModel bench_model(std::size_t D, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(D)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Unary> unary(D);
  for (Unary& x : unary) x.on = u(rng);
  std::vector<double> f(D + 1);
  for (double& v : f) v = n(rng);
  return standard_cardinality_model(std::move(unary), CardinalityTable(std::move(f)));
}

bool is_power_of_two(std::size_t x) { return x && std::has_single_bit(x); }

}  // namespace

std::size_t tree_memory_bytes(std::size_t num_vars, bool fft) {
  // Up and down messages at every node of a balanced tree, plus the leaf
  // beliefs; each level holds about D + nodes-on-level entries.
  std::size_t entries = 0, nodes = num_vars;
  while (true) {
    entries += num_vars + nodes;
    if (nodes == 1) break;
    nodes = (nodes + 1) / 2;
  }
  std::size_t bytes = 2 * entries * sizeof(double);
  if (fft) {
    const std::size_t n = std::bit_ceil(2 * (num_vars + 1));
    bytes += n * sizeof(double) * 2 + (n / 2 + 1) * 16 * 2;
  }
  return bytes;
}

std::vector<BenchRecord> run_bench(const BenchOptions& o) {
  if (o.reps < 3) throw ArgumentError("bench needs at least 3 repetitions");
  if (!is_power_of_two(o.d_min) || !is_power_of_two(o.d_max) || o.d_min > o.d_max)
    throw ArgumentError("d-min and d-max must be powers of two with d-min <= d-max");
  for (const auto& a : o.algorithms)
    if (a != "fft_tree" && a != "tree" && a != "chain") throw ArgumentError("unknown algorithm '" + a + "'");
  if (!(o.time_budget > 0)) throw ArgumentError("time budget must be positive");

  struct Last {
    std::size_t D = 0;
    double seconds = 0.0;
    bool dead = false;
  };
  std::map<std::string, Last> last;
  std::vector<BenchRecord> out;
  for (std::size_t D = o.d_min; D <= o.d_max; D *= 2) {
    const RCModel model = bench_model(D, o.seed);
    const CardinalityTable& table = *model.table(model.tree().root());
    for (const std::string& alg : o.algorithms) {
      BenchRecord rec{alg, D, 0.0, 0, false};
      rec.peak_bytes = alg == "chain" ? chain_memory_bytes(D) : tree_memory_bytes(D, alg == "fft_tree");
      Last& prev = last[alg];
      const double exponent = alg == "fft_tree" ? 1.3 : 2.0;
      const double predicted =
          prev.D ? prev.seconds * std::pow(static_cast<double>(D) / static_cast<double>(prev.D), exponent) : 0.0;
      if (prev.dead || rec.peak_bytes > o.memory_budget || predicted > o.time_budget) {
        prev.dead = true;
        out.push_back(rec);
        continue;
      }
      auto once = [&] {
        const auto t0 = std::chrono::steady_clock::now();
        if (alg == "chain")
          (void)chain_marginals(model.unary(), table);
        else if (alg == "tree")
          (void)quadratic_tree_marginals(model);
        else
          (void)marginals(model, Backend::Auto);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      };
      const double warm = once();
      if (warm > o.time_budget) {
        prev.dead = true;
        out.push_back(rec);
        continue;
      }
      std::vector<double> times;
      for (int r = 0; r < o.reps; ++r) times.push_back(once());
      std::sort(times.begin(), times.end());
      rec.seconds = std::max(times[times.size() / 2], 1e-9);
      rec.finished = true;
      prev.D = D;
      prev.seconds = rec.seconds;
      out.push_back(rec);
    }
  }
  return out;
}

std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::string csv = "algorithm,D,seconds,peak_bytes,status\n";
  for (const auto& r : records)
    csv += r.algorithm + "," + std::to_string(r.num_vars) + "," + (r.finished ? io::format_double(r.seconds) : "") +
           "," + std::to_string(r.peak_bytes) + "," + (r.finished ? "ok" : "DNF") + "\n";
  return csv;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Inference, sampling and learning for recursive cardinality models", "rcm"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--backend", g.backend, "Convolution backend")->check(CLI::IsMember({"auto", "fft", "naive"}));
  app.add_option("--out", g.out, "Output path ('-' for stdout)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string model_path, data_path, mode = "adaptive";
  std::size_t n = 0;

  auto* marg = app.add_subcommand("marginals", "Exact marginals of a model file as CSV");
  marg->add_option("model", model_path, "Model JSON")->required();

  auto* samp = app.add_subcommand("sample", "Exact joint samples, one per line");
  samp->add_option("model", model_path, "Model JSON")->required();
  samp->add_option("-n,--num-samples", n, "Number of samples")->required();

  BenchOptions bench;
  auto* bn = app.add_subcommand("bench", "Runtime versus D for the inference algorithms");
  bn->add_option("--algorithms", bench.algorithms, "Subset of fft_tree, tree, chain")->delimiter(',');
  bn->add_option("--d-min", bench.d_min, "Smallest D (power of two)");
  bn->add_option("--d-max", bench.d_max, "Largest D (power of two)");
  bn->add_option("--reps", bench.reps, "Timed repetitions per point");
  bn->add_option("--time-budget", bench.time_budget, "Seconds per run before an algorithm is marked DNF");
  bn->add_option("--memory-budget", bench.memory_budget, "Bytes per run before an algorithm is marked DNF");

  MatchArgs ma;
  auto* mt = app.add_subcommand("match", "Marginals of a grid matching problem as CSV");
  mt->add_option("problem", ma.path, "Matching problem JSON")->required();
  mt->add_option("--method", ma.method, "lbp, node or exact")->check(CLI::IsMember({"lbp", "node", "exact"}));
  mt->add_option("--max-iters", ma.max_iters, "LBP iteration cap");
  mt->add_option("--damping", ma.damping, "LBP damping in [0,1)");
  mt->add_option("--tol", ma.tol, "LBP convergence tolerance");

  FitArgs fa;
  auto* ft = app.add_subcommand("fit", "Maximum-likelihood fit; writes a model JSON");
  ft->add_option("data", fa.data_path, "Dataset file")->required();
  ft->add_option("--structure", fa.structure, "balanced, adaptive, anti, or a tree JSON file");
  ft->add_option("--tables", fa.tables, "Table placement")->check(CLI::IsMember({"internal", "root", "none"}));
  ft->add_option("--step", fa.step, "Initial (and largest) step size");
  ft->add_option("--iters", fa.iters, "Iteration cap");
  ft->add_option("--l1", fa.l1, "L1 penalty on unary weights");

  MilArgs mi;
  auto* ml = app.add_subcommand("mil", "Multiple-instance logistic fit with a count link");
  ml->add_option("bags", mi.bags_path, "Bag file")->required();
  ml->add_option("--link", mi.link, "noisy-or or normal")->check(CLI::IsMember({"noisy-or", "normal"}));
  ml->add_option("--eps", mi.eps, "Noisy-OR leak");
  ml->add_option("--lam", mi.lam, "Noisy-OR per-instance strength");
  ml->add_option("--mu", mi.mu, "Normal link mean fraction for positive bags");
  ml->add_option("--sigma", mi.sigma, "Normal link width");
  ml->add_option("--step", mi.step, "Initial (and largest) step size");
  ml->add_option("--iters", mi.iters, "Iteration cap");
  ml->add_option("--l1", mi.l1, "L1 penalty on weights");

  auto* st = app.add_subcommand("struct", "Agglomerative tree over the variables of a dataset");
  st->add_option("data", data_path, "Dataset file")->required();
  st->add_option("--mode", mode, "adaptive or anti")->check(CLI::IsMember({"adaptive", "anti"}));

  IsingArgs ia;
  auto* is = app.add_subcommand("ising", "Grid Ising samples in the dataset format");
  is->add_option("--height", ia.height, "Grid rows");
  is->add_option("--width", ia.width, "Grid columns");
  is->add_option("--coupling", ia.coupling, "Nearest-neighbor coupling (default: critical value)");
  is->add_option("-n,--num-samples", ia.samples, "Number of samples");
  is->add_option("--sweeps", ia.sweeps, "Gibbs sweeps per sample");

  try {
    std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*marg) return cmd_marginals(g, model_path);
    if (*samp) return cmd_sample(g, model_path, n);
    if (*bn) return cmd_bench(g, bench);
    if (*mt) return cmd_match(g, ma);
    if (*ft) return cmd_fit(g, fa);
    if (*ml) return cmd_mil(g, mi);
    if (*st) return cmd_struct(g, data_path, mode);
    if (*is) return cmd_ising(g, ia);
  } catch (const ZeroMassError& e) {
    std::cerr << "error: zero mass: " << e.what() << "\n";
    return kZeroMass;
  } catch (const InfeasibleError& e) {
    std::cerr << "error: infeasible: " << e.what() << "\n";
    return kZeroMass;
  } catch (const DivergenceError& e) {
    std::cerr << "error: diverged at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kDivergence;
  } catch (const ResourceError& e) {
    std::cerr << "error: resource limit: " << e.what() << "\n";
    return kResource;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInputError;
}

}  // namespace rcm::cli
