#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netpc/error.hpp"

namespace netpc {

/// LU factorization with partial (row) pivoting of a square band matrix with kl
/// sub-diagonals and ku super-diagonals. Row interchanges widen the upper band to
/// kl + ku, so each row stores 2*kl + ku + 1 entries (the LAPACK gbtrf layout, kept
/// row-major so elimination updates are contiguous).
class BandedLu {
public:
    BandedLu(int n, int kl, int ku)
        : n_(n), kl_(kl), ku_(ku), width_(2 * kl + ku + 1),
          data_(static_cast<std::size_t>(n) * static_cast<std::size_t>(width_), 0.0), pivots_(n, 0) {}

    int size() const { return n_; }
    int lower_bandwidth() const { return kl_; }
    int upper_bandwidth() const { return ku_; }

    /// Accumulate into entry (i, j); |i - j| must lie within the declared band.
    void add(int i, int j, double v) {
        if (j - i > ku_ || i - j > kl_) throw DimensionError("BandedLu: entry outside declared band");
        at(i, j) += v;
        max_abs_ = std::max(max_abs_, std::abs(at(i, j)));
    }

    /// Throws SingularKktError when a pivot falls below rel_tol * max|entry|.
    void factorize(double rel_tol = 1e-13) {
        const double floor = rel_tol * std::max(max_abs_, 1e-300);
        for (int k = 0; k < n_; ++k) {
            const int last_row = std::min(n_ - 1, k + kl_);
            const int last_col = std::min(n_ - 1, k + kl_ + ku_);
            int p = k;
            double best = std::abs(at(k, k));
            for (int i = k + 1; i <= last_row; ++i) {
                const double v = std::abs(at(i, k));
                if (v > best) {
                    best = v;
                    p = i;
                }
            }
            if (!(best > floor)) {
                throw SingularKktError("KKT matrix is singular (pivot " + std::to_string(k) + " of " +
                                       std::to_string(n_) + ")");
            }
            pivots_[k] = p;
            if (p != k) {
                for (int j = k; j <= last_col; ++j) std::swap(at(k, j), at(p, j));
            }
            const double inv = 1.0 / at(k, k);
            const int len = last_col - k;
            const double* rk = &at(k, k) + 1;
            for (int i = k + 1; i <= last_row; ++i) {
                double& lik = at(i, k);
                if (lik == 0.0) continue;
                lik *= inv;
                const double l = lik;
                double* ri = &lik + 1;
                for (int j = 0; j < len; ++j) ri[j] -= l * rk[j];
            }
        }
        factored_ = true;
    }

    void solve_in_place(Eigen::Ref<Eigen::VectorXd> b) const {
        if (!factored_) throw SolverError("BandedLu: solve before factorize");
        if (b.size() != n_) throw DimensionError("BandedLu: right-hand side has wrong length");
        for (int k = 0; k < n_; ++k) {
            if (pivots_[k] != k) std::swap(b[k], b[pivots_[k]]);
            const double bk = b[k];
            if (bk == 0.0) continue;
            const int last_row = std::min(n_ - 1, k + kl_);
            for (int i = k + 1; i <= last_row; ++i) b[i] -= at(i, k) * bk;
        }
        for (int i = n_ - 1; i >= 0; --i) {
            const int last_col = std::min(n_ - 1, i + kl_ + ku_);
            const double* ri = &at(i, i);
            double s = b[i];
            for (int j = 1; j <= last_col - i; ++j) s -= ri[j] * b[i + j];
            b[i] = s / ri[0];
        }
    }

private:
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * width_ + (j - i + kl_)]; }
    const double& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * width_ + (j - i + kl_)]; }

    int n_, kl_, ku_, width_;
    std::vector<double> data_;
    std::vector<int> pivots_;
    double max_abs_ = 0.0;
    bool factored_ = false;
};

}  // namespace netpc
