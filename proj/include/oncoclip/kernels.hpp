#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version and a serial
// reference with identical arithmetic order; tests check they agree bitwise.

#include <array>
#include <cstddef>
#include <span>

#include "oncoclip/linalg.hpp"

namespace oncoclip::kernels {

// Y = X * W^T + b, with W stored row-major as (out x in).
void affine(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y);
void affine_serial(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y);

// S(i, j) = <u_i, v_j> / (|u_i| |v_j|).
Matrix cosine_matrix(const Matrix& u, const Matrix& v);
Matrix cosine_matrix_serial(const Matrix& u, const Matrix& v);

struct PairSums {
  double concordant = 0.0;  // weighted concordant + 0.5 * weighted tied-risk
  double comparable = 0.0;  // weighted comparable pairs
};

// Weighted Harrell-type pair sums. Subject i anchors pairs when event_i = 1
// and time_i < tau; partner j is comparable when time_j > time_i, or when
// time_j == time_i and j is censored. Each anchor contributes weight_i per
// comparable pair.
PairSums concordance_pairs(std::span<const double> time, std::span<const int> event,
                           std::span<const double> risk, std::span<const double> weight, double tau);
PairSums concordance_pairs_serial(std::span<const double> time, std::span<const int> event,
                                  std::span<const double> risk, std::span<const double> weight,
                                  double tau);

// Case/control sums for cumulative/dynamic AUC: every (case, control) pair
// contributes case_weight * (1[r_case > r_ctrl] + 0.5 * 1[r_case == r_ctrl]).
PairSums case_control_pairs(std::span<const double> case_risk, std::span<const double> case_weight,
                            std::span<const double> control_risk);
PairSums case_control_pairs_serial(std::span<const double> case_risk,
                                   std::span<const double> case_weight,
                                   std::span<const double> control_risk);

// Geometry of a voxel grid in physical space (axis-aligned, x fastest).
struct GridGeometry {
  std::array<std::size_t, 3> dims{};
  std::array<double, 3> spacing{};
  std::array<double, 3> origin{};
};

// Samples `src` at every voxel centre of `dst_geom`, mapping each destination
// physical point p through `affine` (3x4 row-major, p_src = A * [p;1]).
// Points outside the source grid receive `fill`. Trilinear when `nearest` is
// false, nearest-neighbour otherwise.
void sample_grid(std::span<const float> src, const GridGeometry& src_geom, std::span<float> dst,
                 const GridGeometry& dst_geom, const std::array<double, 12>& affine, bool nearest,
                 float fill);
void sample_grid_serial(std::span<const float> src, const GridGeometry& src_geom,
                        std::span<float> dst, const GridGeometry& dst_geom,
                        const std::array<double, 12>& affine, bool nearest, float fill);

}  // namespace oncoclip::kernels
