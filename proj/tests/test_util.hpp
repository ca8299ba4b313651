// Shared helpers for the test suites: relative error, random tensors, a
// central finite-difference checker, and small file utilities.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "poseadapt/rng.hpp"
#include "poseadapt/tensor.hpp"

namespace test_util {

using poseadapt::real;
using poseadapt::Rng;
using poseadapt::Tensor;

inline void write_text(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline real rel_err(real a, real b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), real(1e-8)});
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, real lo = -1,
                            real hi = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite difference of a scalar function at selected coordinates of
// `x`, compared against the provided analytic gradient. Returns the worst
// relative error over the probed coordinates.
inline real fd_worst_rel_err(const std::function<real(const Tensor&)>& f,
                             const Tensor& x, const Tensor& analytic,
                             Rng& rng, int probes, real h = 1e-5) {
  real worst = 0;
  for (int p = 0; p < probes; ++p) {
    const std::size_t idx = rng.index(x.numel());
    Tensor xp = x, xm = x;
    xp[idx] += h;
    xm[idx] -= h;
    const real fd = (f(xp) - f(xm)) / (2 * h);
    worst = std::max(worst, rel_err(fd, analytic[idx]));
  }
  return worst;
}

}  // namespace test_util
