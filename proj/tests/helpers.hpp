#pragma once

// Reference implementations used as independent oracles in the tests.

#include <cmath>
#include <random>
#include <vector>

#include "mac/attention_core.hpp"

namespace testing_support {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n,
                                    double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> x(n);
  for (auto& v : x) v = nd(rng);
  return x;
}

inline Matrix gaussian_rows(std::mt19937_64& rng, std::size_t rows,
                            std::size_t dim, double scale = 1.0) {
  Matrix m(rows);
  for (auto& r : m) r = gaussian(rng, dim, scale);
  return m;
}

inline std::vector<double> flatten(const Matrix& m) {
  std::vector<double> out;
  for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
  return out;
}

struct NaiveResult {
  std::vector<double> output;
  double log_z = 0.0;
};

/// Plain softmax-weighted average over rows [lo, hi] (1-based), computed by
/// shifting with the max logit and summing exponentials directly.
inline NaiveResult naive_attention(const std::vector<double>& q,
                                   const Matrix& keys, const Matrix& values,
                                   long lo, long hi) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> logits;
  double mx = -INFINITY;
  for (long t = lo; t <= hi; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * keys[t - 1][i];
    logits.push_back(s * scale);
    mx = std::max(mx, logits.back());
  }
  NaiveResult r;
  r.output.assign(values[0].size(), 0.0);
  double z = 0.0;
  for (long t = lo; t <= hi; ++t) {
    const double w = std::exp(logits[t - lo] - mx);
    z += w;
    for (std::size_t i = 0; i < r.output.size(); ++i)
      r.output[i] += w * values[t - 1][i];
  }
  for (auto& o : r.output) o /= z;
  r.log_z = mx + std::log(z);
  return r;
}

inline double rel_diff(const std::vector<double>& a,
                       const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double norm(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace testing_support
