// shared test oracles: central differences, spectral radius, tiny instances
#ifndef HVACBENCH_TESTS_SUPPORT_HPP
#define HVACBENCH_TESTS_SUPPORT_HPP

#include <cmath>
#include <functional>

#include "hvacbench/thermal.hpp"

namespace testsupport {

using hvacbench::Mat;
using hvacbench::Vec;

inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline Vec central_diff_vec(const std::function<double(const Vec&)>& f, const Vec& x,
                            double h = 1e-6) {
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double spectral_radius(const Mat& a) {
  Eigen::EigenSolver<Mat> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double rel_gap(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// single-zone toy used for hand-checked dynamics and the grid-search oracle
inline hvacbench::BuildingModel toy_building() {
  hvacbench::BuildingModel m;
  m.zones = 1;
  m.A = Mat::Constant(1, 1, 0.9);
  m.B = Mat::Constant(1, 1, 0.1);
  m.G = Mat::Zero(1, 2);
  m.G(0, 0) = 0.01;
  m.G(0, 1) = 0.001;
  m.state_map = Mat::Identity(1, 1);
  return m;
}

} // namespace testsupport

#endif
