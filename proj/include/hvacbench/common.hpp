// shared aliases, deterministic RNG, seed derivation, worker pool, csv formatting
#ifndef HVACBENCH_COMMON_HPP
#define HVACBENCH_COMMON_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hvacbench {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// splitmix64 core; portable across platforms, unlike std:: distributions
struct Rng {
  std::uint64_t state;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  double normal();                         // standard normal, Box-Muller
  int uniform_int(int lo, int hi);         // inclusive bounds
  // Fisher-Yates over indices 0..n-1
  std::vector<int> permutation(int n);
};

// named sub-seed: hash of label folded into the base seed (FNV-1a)
std::uint64_t derive_seed(std::uint64_t base, const std::string& label);

// runs fn(0..n-1) on a pool; results must be written to index-addressed slots.
// worker count: explicit argument > 0, else HVACBENCH_WORKERS env, else 1.
void parallel_for(int n, const std::function<void(int)>& fn, int workers = 0);
int worker_count_from_env();

// fixed-format float for byte-identical csv re-exports
std::string format_num(double v);
// 17 significant digits: strtod round-trips the exact double
std::string format_full(double v);
// minutes since midnight -> "HH:MM"
std::string format_clock(double hours);

double wall_seconds();

} // namespace hvacbench

#endif
