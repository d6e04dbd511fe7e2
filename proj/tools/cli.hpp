#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rcm::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kInputError = 2,
  kZeroMass = 3,
  kDivergence = 4,
  kResource = 5,
};

// Runs the command line; args[0] is the program name. Diagnostics go to stderr.
int run(const std::vector<std::string>& args);

struct BenchOptions {
  std::vector<std::string> algorithms{"fft_tree", "tree", "chain"};
  std::size_t d_min = 1024;
  std::size_t d_max = 524288;
  int reps = 3;
  std::uint64_t seed = 0;
  double time_budget = 300.0;                 // seconds per run
  std::size_t memory_budget = std::size_t{4} << 30;  // bytes per run
};

struct BenchRecord {
  std::string algorithm;
  std::size_t num_vars = 0;
  double seconds = 0.0;  // median over reps; 0 when not finished
  std::size_t peak_bytes = 0;
  bool finished = false;
};

std::vector<BenchRecord> run_bench(const BenchOptions& opts);
std::string bench_csv(const std::vector<BenchRecord>& records);

// Analytic memory estimates: message storage plus the largest transform buffer.
std::size_t tree_memory_bytes(std::size_t num_vars, bool fft);

}  // namespace rcm::cli
