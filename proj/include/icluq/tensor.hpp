#pragma once

// Dense row-major double tensors plus the small-matrix linear algebra the
// rest of the library builds on. Kernels use fixed accumulation order: the
// result for any output row depends only on the corresponding input rows and
// never on how many other rows exist, which the prefix-equality and
// determinism contracts rely on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace icluq {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::int64_t rows, std::int64_t cols)
        : Tensor(std::vector<std::int64_t>{rows, cols}) {}

    static Tensor vector(std::int64_t n) { return Tensor(std::vector<std::int64_t>{n}); }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const auto r = static_cast<std::int64_t>(rows.size());
        const auto c = static_cast<std::int64_t>(rows.begin()->size());
        Tensor t(r, c);
        std::int64_t i = 0;
        for (const auto& row : rows) {
            if (static_cast<std::int64_t>(row.size()) != c) {
                throw ShapeError("from_rows: ragged rows");
            }
            std::int64_t j = 0;
            for (double v : row) t(i, j++) = v;
            ++i;
        }
        return t;
    }

    static Tensor from_vec(std::vector<double> v) {
        Tensor t;
        t.shape_ = {static_cast<std::int64_t>(v.size())};
        t.data_ = std::move(v);
        return t;
    }

    static Tensor identity(std::int64_t n) {
        Tensor t(n, n);
        for (std::int64_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    std::int64_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 0); }
    std::int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? 1 : 0); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row_ptr(std::int64_t i) { return data_.data() + i * shape_[1]; }
    const double* row_ptr(std::int64_t i) const { return data_.data() + i * shape_[1]; }

    double& operator()(std::int64_t i, std::int64_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::int64_t i, std::int64_t j) const { return data_[i * shape_[1] + j]; }
    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

private:
    static std::size_t checked_size(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return static_cast<std::size_t>(n);
    }

    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Raw kernels. C is accumulated (+=); callers zero it first when needed.
// Loop orders keep the innermost stride contiguous and the per-output-row
// accumulation order fixed.
// ---------------------------------------------------------------------------

// C[m x n] += A[m x k] * B[k x n]
inline void kernel_mm_nn(const double* a, const double* b, double* c,
                         std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T   (dot products of contiguous rows)
inline void kernel_mm_nt(const double* a, const double* b, double* c,
                         std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void kernel_mm_tn(const double* a, const double* b, double* c,
                         std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Tensor-level operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
    detail::require(a.cols() == b.rows(), "matmul: inner dimensions disagree " + a.shape_str() +
                                              " vs " + b.shape_str());
    Tensor c(a.rows(), b.cols());
    kernel_mm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul_nt: rank-2 operands required");
    detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree");
    Tensor c(a.rows(), b.rows());
    kernel_mm_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
    return c;
}

inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul_tn: rank-2 operands required");
    detail::require(a.rows() == b.rows(), "matmul_tn: inner dimensions disagree");
    Tensor c(a.cols(), b.cols());
    kernel_mm_tn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

inline Tensor transpose(const Tensor& a) {
    detail::require(a.rank() == 2, "transpose: rank-2 required");
    Tensor t(a.cols(), a.rows());
    for (std::int64_t i = 0; i < a.rows(); ++i)
        for (std::int64_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Tensor matvec(const Tensor& a, const Tensor& x) {
    detail::require(a.rank() == 2 && x.rank() == 1 && a.cols() == x.size(),
                    "matvec: shape mismatch");
    Tensor y = Tensor::vector(a.rows());
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row_ptr(i);
        double s = 0.0;
        for (std::int64_t j = 0; j < a.cols(); ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline double dot(const Tensor& a, const Tensor& b) {
    detail::require(a.size() == b.size(), "dot: size mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require(a.same_shape(b), "add: shape mismatch");
    Tensor c = a;
    for (std::int64_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require(a.same_shape(b), "sub: shape mismatch");
    Tensor c = a;
    for (std::int64_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    for (std::int64_t i = 0; i < c.size(); ++i) c[i] *= s;
    return c;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
    detail::require(x.same_shape(y), "axpy: shape mismatch");
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Tensor outer(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 1 && b.rank() == 1, "outer: vectors required");
    Tensor c(a.size(), b.size());
    for (std::int64_t i = 0; i < a.size(); ++i)
        for (std::int64_t j = 0; j < b.size(); ++j) c(i, j) = a[i] * b[j];
    return c;
}

inline double norm2(const Tensor& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Numerically stable elementwise softplus: max(z,0) + log1p(exp(-|z|)).
inline double softplus(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// d/dz softplus(z) = logistic(z), evaluated without overflow.
inline double logistic(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Small dense solvers (d is at most a few dozen everywhere these are used)
// ---------------------------------------------------------------------------

// Cholesky factor L (lower) of a symmetric positive-definite matrix.
inline Tensor cholesky(const Tensor& a) {
    detail::require(a.rank() == 2 && a.rows() == a.cols(), "cholesky: square required");
    const std::int64_t n = a.rows();
    Tensor l(n, n);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::int64_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) throw DomainError("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

// Inverse of a symmetric positive-definite matrix via Cholesky.
inline Tensor spd_inverse(const Tensor& a) {
    const std::int64_t n = a.rows();
    const Tensor l = cholesky(a);
    // Solve L X = I, then L^T Inv = X.
    Tensor x(n, n);
    for (std::int64_t col = 0; col < n; ++col) {
        for (std::int64_t i = 0; i < n; ++i) {
            double s = (i == col) ? 1.0 : 0.0;
            for (std::int64_t k = 0; k < i; ++k) s -= l(i, k) * x(k, col);
            x(i, col) = s / l(i, i);
        }
    }
    Tensor inv(n, n);
    for (std::int64_t col = 0; col < n; ++col) {
        for (std::int64_t i = n - 1; i >= 0; --i) {
            double s = x(i, col);
            for (std::int64_t k = i + 1; k < n; ++k) s -= l(k, i) * inv(k, col);
            inv(i, col) = s / l(i, i);
        }
    }
    // Symmetrize to remove round-off skew.
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < i; ++j) {
            const double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = inv(j, i) = v;
        }
    return inv;
}

// Solve A x = b for SPD A.
inline Tensor spd_solve(const Tensor& a, const Tensor& b) {
    const std::int64_t n = a.rows();
    const Tensor l = cholesky(a);
    Tensor y = Tensor::vector(n);
    for (std::int64_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::int64_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Tensor x = Tensor::vector(n);
    for (std::int64_t i = n - 1; i >= 0; --i) {
        double s = y[i];
        for (std::int64_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Returns eigenvalues ascending; V columns are the matching eigenvectors.
struct SymEig {
    Tensor values;  // [n]
    Tensor vectors; // [n x n], column j pairs with values[j]
};

inline SymEig sym_eig(const Tensor& a_in) {
    detail::require(a_in.rank() == 2 && a_in.rows() == a_in.cols(), "sym_eig: square required");
    const std::int64_t n = a_in.rows();
    Tensor a = a_in;
    Tensor v = Tensor::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-26) break;
        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    // Sort ascending by eigenvalue.
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::int64_t x, std::int64_t y) { return a(x, x) < a(y, y); });
    SymEig out{Tensor::vector(n), Tensor(n, n)};
    for (std::int64_t j = 0; j < n; ++j) {
        out.values[j] = a(idx[j], idx[j]);
        for (std::int64_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, idx[j]);
    }
    return out;
}

// Spectral norm (largest singular value) via sym_eig of the smaller Gram matrix.
inline double spectral_norm(const Tensor& a) {
    detail::require(a.rank() == 2, "spectral_norm: rank-2 required");
    const Tensor g = (a.rows() <= a.cols()) ? matmul_nt(a, a) : matmul_tn(a, a);
    const SymEig e = sym_eig(g);
    const double top = e.values[e.values.size() - 1];
    return top > 0.0 ? std::sqrt(top) : 0.0;
}

} // namespace icluq
