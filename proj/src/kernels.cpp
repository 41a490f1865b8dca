#include "oncoclip/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oncoclip::kernels {

namespace {

void check_affine(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y) {
  const std::size_t out = b.size();
  if (w.size() != out * x.cols) throw std::invalid_argument("affine: weight shape mismatch");
  if (y.rows != x.rows || y.cols != out) y = Matrix(x.rows, out);
}

inline void affine_row(const Matrix& x, std::span<const double> w, std::span<const double> b,
                       Matrix& y, std::size_t i) {
  const std::size_t in = x.cols;
  const double* xi = x.data.data() + i * in;
  double* yi = y.data.data() + i * y.cols;
  for (std::size_t o = 0; o < y.cols; ++o) {
    const double* wo = w.data() + o * in;
    double s = b[o];
    for (std::size_t k = 0; k < in; ++k) s += wo[k] * xi[k];
    yi[o] = s;
  }
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> n(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) n[i] = std::sqrt(dot(m.row(i), m.row(i)));
  return n;
}

inline void cosine_row(const Matrix& u, const Matrix& v, const std::vector<double>& nu,
                       const std::vector<double>& nv, Matrix& s, std::size_t i) {
  for (std::size_t j = 0; j < v.rows; ++j) s(i, j) = dot(u.row(i), v.row(j)) / (nu[i] * nv[j]);
}

void check_cosine(const Matrix& u, const Matrix& v) {
  if (u.cols != v.cols) throw std::invalid_argument("cosine_matrix: embedding dimension mismatch");
}

inline double pair_score(double a, double b) { return a > b ? 1.0 : (a == b ? 0.5 : 0.0); }

inline PairSums anchor_sums(std::span<const double> time, std::span<const int> event,
                            std::span<const double> risk, std::span<const double> weight,
                            double tau, std::size_t i) {
  PairSums s;
  if (event[i] != 1 || !(time[i] < tau)) return s;
  const double w = weight[i];
  for (std::size_t j = 0; j < time.size(); ++j) {
    if (j == i) continue;
    const bool comparable = time[j] > time[i] || (time[j] == time[i] && event[j] == 0);
    if (!comparable) continue;
    s.comparable += w;
    s.concordant += w * pair_score(risk[i], risk[j]);
  }
  return s;
}

void check_pairs(std::span<const double> time, std::span<const int> event, std::span<const double> risk,
                 std::span<const double> weight) {
  const auto n = time.size();
  if (event.size() != n || risk.size() != n || weight.size() != n)
    throw std::invalid_argument("concordance_pairs: length mismatch");
}

inline PairSums case_sums(std::span<const double> case_risk, std::span<const double> case_weight,
                          std::span<const double> control_risk, std::size_t i) {
  PairSums s;
  for (double r : control_risk) {
    s.comparable += case_weight[i];
    s.concordant += case_weight[i] * pair_score(case_risk[i], r);
  }
  return s;
}

PairSums fold(const std::vector<PairSums>& parts) {
  PairSums total;
  for (const auto& p : parts) {
    total.concordant += p.concordant;
    total.comparable += p.comparable;
  }
  return total;
}

// Continuous source index for destination voxel (x, y, z).
inline std::array<double, 3> source_index(const GridGeometry& src, const GridGeometry& dst,
                                          const std::array<double, 12>& a, std::size_t x,
                                          std::size_t y, std::size_t z) {
  const double p[3] = {dst.origin[0] + dst.spacing[0] * static_cast<double>(x),
                       dst.origin[1] + dst.spacing[1] * static_cast<double>(y),
                       dst.origin[2] + dst.spacing[2] * static_cast<double>(z)};
  std::array<double, 3> c{};
  for (int r = 0; r < 3; ++r) {
    const double q = a[4 * r] * p[0] + a[4 * r + 1] * p[1] + a[4 * r + 2] * p[2] + a[4 * r + 3];
    c[r] = (q - src.origin[r]) / src.spacing[r];
  }
  return c;
}

constexpr double kEdgeTol = 1e-9;

inline float sample_one(std::span<const float> src, const GridGeometry& g, std::array<double, 3> c,
                        bool nearest, float fill) {
  const std::size_t nx = g.dims[0];
  const std::size_t ny = g.dims[1];
  if (nearest) {
    std::size_t idx[3];
    for (int r = 0; r < 3; ++r) {
      const double lim = static_cast<double>(g.dims[r]) - 0.5;
      if (c[r] < -0.5 || c[r] >= lim) return fill;
      const double k = std::floor(c[r] + 0.5);
      idx[r] = static_cast<std::size_t>(k < 0.0 ? 0.0 : k);
    }
    return src[idx[0] + nx * (idx[1] + ny * idx[2])];
  }
  std::size_t i0[3];
  std::size_t i1[3];
  double f[3];
  for (int r = 0; r < 3; ++r) {
    const double hi = static_cast<double>(g.dims[r] - 1);
    if (c[r] < -kEdgeTol || c[r] > hi + kEdgeTol) return fill;
    double v = c[r] < 0.0 ? 0.0 : (c[r] > hi ? hi : c[r]);
    const double fl = std::floor(v);
    i0[r] = static_cast<std::size_t>(fl);
    i1[r] = i0[r] + 1 < g.dims[r] ? i0[r] + 1 : i0[r];
    f[r] = v - fl;
  }
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) {
    return static_cast<double>(src[x + nx * (y + ny * z)]);
  };
  auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
  const double c00 = lerp(at(i0[0], i0[1], i0[2]), at(i1[0], i0[1], i0[2]), f[0]);
  const double c10 = lerp(at(i0[0], i1[1], i0[2]), at(i1[0], i1[1], i0[2]), f[0]);
  const double c01 = lerp(at(i0[0], i0[1], i1[2]), at(i1[0], i0[1], i1[2]), f[0]);
  const double c11 = lerp(at(i0[0], i1[1], i1[2]), at(i1[0], i1[1], i1[2]), f[0]);
  const double c0 = lerp(c00, c10, f[1]);
  const double c1 = lerp(c01, c11, f[1]);
  return static_cast<float>(lerp(c0, c1, f[2]));
}

inline void sample_slice(std::span<const float> src, const GridGeometry& sg, std::span<float> dst,
                         const GridGeometry& dg, const std::array<double, 12>& a, bool nearest,
                         float fill, std::size_t z) {
  for (std::size_t y = 0; y < dg.dims[1]; ++y)
    for (std::size_t x = 0; x < dg.dims[0]; ++x)
      dst[x + dg.dims[0] * (y + dg.dims[1] * z)] =
          sample_one(src, sg, source_index(sg, dg, a, x, y, z), nearest, fill);
}

void check_grid(std::span<const float> src, const GridGeometry& sg, std::span<float> dst,
                const GridGeometry& dg) {
  if (src.size() != sg.dims[0] * sg.dims[1] * sg.dims[2] ||
      dst.size() != dg.dims[0] * dg.dims[1] * dg.dims[2])
    throw std::invalid_argument("sample_grid: buffer size does not match geometry");
}

}  // namespace

void affine(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y) {
  check_affine(x, w, b, y);
  const auto n = static_cast<long long>(x.rows);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) affine_row(x, w, b, y, static_cast<std::size_t>(i));
}

void affine_serial(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y) {
  check_affine(x, w, b, y);
  for (std::size_t i = 0; i < x.rows; ++i) affine_row(x, w, b, y, i);
}

Matrix cosine_matrix(const Matrix& u, const Matrix& v) {
  check_cosine(u, v);
  const auto nu = row_norms(u);
  const auto nv = row_norms(v);
  Matrix s(u.rows, v.rows);
  const auto n = static_cast<long long>(u.rows);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) cosine_row(u, v, nu, nv, s, static_cast<std::size_t>(i));
  return s;
}

Matrix cosine_matrix_serial(const Matrix& u, const Matrix& v) {
  check_cosine(u, v);
  const auto nu = row_norms(u);
  const auto nv = row_norms(v);
  Matrix s(u.rows, v.rows);
  for (std::size_t i = 0; i < u.rows; ++i) cosine_row(u, v, nu, nv, s, i);
  return s;
}

PairSums concordance_pairs(std::span<const double> time, std::span<const int> event,
                           std::span<const double> risk, std::span<const double> weight, double tau) {
  check_pairs(time, event, risk, weight);
  std::vector<PairSums> parts(time.size());
  const auto n = static_cast<long long>(time.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long long i = 0; i < n; ++i)
    parts[static_cast<std::size_t>(i)] = anchor_sums(time, event, risk, weight, tau, static_cast<std::size_t>(i));
  return fold(parts);
}

PairSums concordance_pairs_serial(std::span<const double> time, std::span<const int> event,
                                  std::span<const double> risk, std::span<const double> weight,
                                  double tau) {
  check_pairs(time, event, risk, weight);
  std::vector<PairSums> parts(time.size());
  for (std::size_t i = 0; i < time.size(); ++i) parts[i] = anchor_sums(time, event, risk, weight, tau, i);
  return fold(parts);
}

PairSums case_control_pairs(std::span<const double> case_risk, std::span<const double> case_weight,
                            std::span<const double> control_risk) {
  if (case_risk.size() != case_weight.size()) throw std::invalid_argument("case_control_pairs: length mismatch");
  std::vector<PairSums> parts(case_risk.size());
  const auto n = static_cast<long long>(case_risk.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i)
    parts[static_cast<std::size_t>(i)] = case_sums(case_risk, case_weight, control_risk, static_cast<std::size_t>(i));
  return fold(parts);
}

PairSums case_control_pairs_serial(std::span<const double> case_risk,
                                   std::span<const double> case_weight,
                                   std::span<const double> control_risk) {
  if (case_risk.size() != case_weight.size()) throw std::invalid_argument("case_control_pairs: length mismatch");
  std::vector<PairSums> parts(case_risk.size());
  for (std::size_t i = 0; i < case_risk.size(); ++i) parts[i] = case_sums(case_risk, case_weight, control_risk, i);
  return fold(parts);
}

void sample_grid(std::span<const float> src, const GridGeometry& src_geom, std::span<float> dst,
                 const GridGeometry& dst_geom, const std::array<double, 12>& affine, bool nearest,
                 float fill) {
  check_grid(src, src_geom, dst, dst_geom);
  const auto nz = static_cast<long long>(dst_geom.dims[2]);
#pragma omp parallel for schedule(static)
  for (long long z = 0; z < nz; ++z)
    sample_slice(src, src_geom, dst, dst_geom, affine, nearest, fill, static_cast<std::size_t>(z));
}

void sample_grid_serial(std::span<const float> src, const GridGeometry& src_geom,
                        std::span<float> dst, const GridGeometry& dst_geom,
                        const std::array<double, 12>& affine, bool nearest, float fill) {
  check_grid(src, src_geom, dst, dst_geom);
  for (std::size_t z = 0; z < dst_geom.dims[2]; ++z)
    sample_slice(src, src_geom, dst, dst_geom, affine, nearest, fill, z);
}

}  // namespace oncoclip::kernels
