#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "radious/num/tape.hpp"
#include "radious/num/tensor.hpp"

namespace testutil {

using radious::num::Tensor;

// Scalar-valued function of a list of parameter values.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Checks reverse-mode gradients of `f` against central finite differences.
// Returns the worst relative error over all (or `probes` randomly chosen)
// parameter entries. Differences use the fixed step `h` in double precision.
inline double max_grad_rel_err(const ScalarFn& f, const std::vector<Tensor>& inits,
                               double h = 1e-4, int probes = -1, unsigned probe_seed = 0) {
  std::vector<Tensor> leaves;
  leaves.reserve(inits.size());
  for (const Tensor& t : inits) leaves.push_back(t.with_grad());
  Tensor loss = f(leaves);
  std::vector<Tensor> grads = radious::num::gradient(loss, leaves);

  struct Entry {
    std::size_t param, index;
  };
  std::vector<Entry> entries;
  for (std::size_t p = 0; p < inits.size(); ++p)
    for (std::size_t i = 0; i < inits[p].size(); ++i) entries.push_back({p, i});
  if (probes > 0 && entries.size() > static_cast<std::size_t>(probes)) {
    std::mt19937_64 rng(probe_seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(static_cast<std::size_t>(probes));
  }

  auto eval_at = [&](std::size_t p, std::size_t i, double value) {
    std::vector<Tensor> shifted = inits;
    std::vector<double> data(shifted[p].data().begin(), shifted[p].data().end());
    data[i] = value;
    shifted[p] = Tensor::from(shifted[p].shape(), std::move(data));
    radious::num::NoGradGuard guard;
    return f(shifted).item();
  };

  double worst = 0;
  for (const Entry& e : entries) {
    const double x0 = inits[e.param][e.index];
    const double fd = (eval_at(e.param, e.index, x0 + h) - eval_at(e.param, e.index, x0 - h)) / (2 * h);
    const double an = grads[e.param][e.index];
    worst = std::max(worst, rel_err(an, fd));
  }
  return worst;
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "radious-test") {
    auto base = std::filesystem::temp_directory_path();
    std::mt19937_64 rng(std::random_device{}());
    path_ = base / (tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
