#include "bioanon/rng.hpp"

#include <cmath>
#include <numeric>

namespace bioanon {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

double Rng::laplace(double scale) {
  if (scale == 0.0) return 0.0;
  double u = uniform() - 0.5;  // [-0.5, 0.5)
  double mag = 1.0 - 2.0 * std::abs(u);
  if (mag <= 0.0) mag = 0x1.0p-53;
  return -scale * std::copysign(std::log(mag), u);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order);
  return order;
}

}  // namespace bioanon
