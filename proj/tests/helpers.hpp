#pragma once

#include <vector>

#include "fire/rng.hpp"
#include "fire/tensor.hpp"

namespace fire::test {

// uniform values in [-1,1], optionally bounded away from zero (kinks in
// relu/l1 break finite differences)
inline Tensor random_tensor(Rng& rng, Shape shape, double away_from_zero = 0.0) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v;
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < away_from_zero);
    t.data()[i] = static_cast<float>(v);
  }
  return t;
}

inline bool all_close(const Tensor& a, const Tensor& b, double tol) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::abs(double(a.data()[i]) - double(b.data()[i])) > tol) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i])));
  return m;
}

}  // namespace fire::test
