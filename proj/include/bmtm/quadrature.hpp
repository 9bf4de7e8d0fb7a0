#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <stdexcept>
#include <vector>

namespace bmtm {

namespace detail {

// Gauss-Kronrod 7-15 nodes/weights on [-1, 1] (positive half; node 0 listed once).
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.000000000000000};

inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728};

// 7-point Gauss weights matching kKronrodNodes indices 1,3,5,7.
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469};

template <std::invocable<double> F>
inline void gk15(F&& f, double lo, double hi, double& result, double& err) {
  double c = 0.5 * (lo + hi);
  double h = 0.5 * (hi - lo);
  double gauss = 0.0, kronrod = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    double x = kKronrodNodes[i];
    double fv;
    if (i == 7) {
      fv = f(c);
    } else {
      fv = f(c - h * x) + f(c + h * x);
    }
    kronrod += kKronrodWeights[i] * fv;
    // Gauss-7 nodes are the odd Kronrod indices (center included).
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * fv;
  }
  result = kronrod * h;
  err = std::fabs((kronrod - gauss) * h);
}

}  // namespace detail

struct QuadratureResult {
  double value;
  double error_estimate;
  bool converged;
};

//! Adaptive Gauss-Kronrod (G7, K15) integration of f over [lo, hi].
//! Bisects the worst interval until the summed error estimate meets
//! abs_tol + rel_tol * |integral|.
template <std::invocable<double> F>
QuadratureResult integrate(F&& f, double lo, double hi, double rel_tol = 1e-10,
                           double abs_tol = 1e-12, int max_depth = 48) {
  struct Seg {
    double lo, hi, value, err;
    int depth;
  };
  // Seed with several panels so a feature much narrower than the interval
  // still registers in at least one error estimate.
  constexpr int kInitialPanels = 16;
  std::vector<Seg> segs;
  segs.reserve(kInitialPanels);
  for (int i = 0; i < kInitialPanels; ++i) {
    Seg s{lo + (hi - lo) * i / kInitialPanels,
          lo + (hi - lo) * (i + 1) / kInitialPanels, 0, 0, 0};
    detail::gk15(f, s.lo, s.hi, s.value, s.err);
    segs.push_back(s);
  }
  for (int iter = 0; iter < 20000; ++iter) {
    double total = 0.0, toterr = 0.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      total += segs[i].value;
      toterr += segs[i].err;
      if (segs[i].err > segs[worst].err) worst = i;
    }
    if (toterr <= abs_tol + rel_tol * std::fabs(total)) {
      return {total, toterr, true};
    }
    Seg s = segs[worst];
    if (s.depth >= max_depth) {
      return {total, toterr, false};
    }
    double mid = 0.5 * (s.lo + s.hi);
    Seg a{s.lo, mid, 0, 0, s.depth + 1}, b{mid, s.hi, 0, 0, s.depth + 1};
    detail::gk15(f, a.lo, a.hi, a.value, a.err);
    detail::gk15(f, b.lo, b.hi, b.value, b.err);
    segs[worst] = a;
    segs.push_back(b);
  }
  double total = 0.0, toterr = 0.0;
  for (auto& s : segs) {
    total += s.value;
    toterr += s.err;
  }
  return {total, toterr, false};
}

}  // namespace bmtm
