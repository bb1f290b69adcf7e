#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "bdsde/errors.hpp"

namespace bdsde {

// Dimensions stay small (d, l <= 4), so fixed-capacity storage avoids heap traffic.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Vec vec1(double v) {
    Vec x(1);
    x(0) = v;
    return x;
}

inline Mat mat1(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

inline bool is_symmetric(const Mat& a, double tol = 1e-12) {
    if (a.rows() != a.cols()) return false;
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + a.cwiseAbs().maxCoeff());
}

inline double min_eigenvalue(const Mat& a) {
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline bool is_positive_definite(const Mat& a) {
    return a.rows() > 0 && is_symmetric(a) && min_eigenvalue(a) > 0.0;
}

// a <= b in the PSD order
inline bool psd_leq(const Mat& a, const Mat& b, double tol = 1e-12) {
    return min_eigenvalue(b - a) >= -tol;
}

inline Mat sqrt_psd(const Mat& a) {
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void require_pd(const Mat& a, const char* what) {
    if (!is_positive_definite(a)) fail(ErrorKind::invalid_argument, std::string(what) + " must be symmetric positive definite");
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

}  // namespace bdsde
