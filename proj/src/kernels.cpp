#include "feddes/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace feddes {

namespace {

void check_matmul_shapes(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.rows()) + ")");
}

// i-k-j order: the k-loop body streams rows of b.
inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
    const std::size_t n = b.cols(), kk = a.cols();
    double* out_row = out.row_ptr(i);
    const double* a_row = a.row_ptr(i);
    for (std::size_t k = 0; k < kk; ++k) {
        const double aik = a_row[k];
        if (aik == 0.0) continue;
        const double* b_row = b.row_ptr(k);
        for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
}

} // namespace

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b);
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
    return out;
}

Matrix matmul_parallel(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b);
    Matrix out(a.rows(), b.cols());
    const long long m = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < m; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    // flop threshold below which thread startup dominates
    const double work = static_cast<double>(a.rows()) * static_cast<double>(a.cols()) *
                        static_cast<double>(b.cols());
    if (work < 65536.0) return matmul_serial(a, b);
    return matmul_parallel(a, b);
}

double l1_distance(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t d = 0; d < n; ++d) s += std::fabs(a[d] - b[d]);
    return s;
}

namespace {

void check_pairwise_shapes(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw DimensionError("pairwise_l1: feature widths differ (" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.cols()) + ")");
}

} // namespace

Matrix pairwise_l1_serial(const Matrix& a, const Matrix& b) {
    check_pairwise_shapes(a, b);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            out(i, j) = l1_distance(a.row_ptr(i), b.row_ptr(j), a.cols());
    return out;
}

Matrix pairwise_l1_parallel(const Matrix& a, const Matrix& b) {
    check_pairwise_shapes(a, b);
    Matrix out(a.rows(), b.rows());
    const long long m = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < m; ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            out(static_cast<std::size_t>(i), j) =
                l1_distance(a.row_ptr(static_cast<std::size_t>(i)), b.row_ptr(j), a.cols());
    return out;
}

Matrix pairwise_l1(const Matrix& a, const Matrix& b) {
    if (a.rows() * b.rows() * a.cols() < 32768) return pairwise_l1_serial(a, b);
    return pairwise_l1_parallel(a, b);
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.raw()[i] = sigmoid_scalar(x.raw()[i]);
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* in = logits.row_ptr(i);
        double* o = out.row_ptr(i);
        double mx = in[0];
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) o[j] /= sum;
    }
    return out;
}

double bce_with_logits(const Matrix& logits, const Matrix& targets) {
    check_same_shape(logits, targets, "bce_with_logits");
    if (logits.size() == 0) throw ValidationError("bce_with_logits: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double s = logits.raw()[i];
        const double z = targets.raw()[i];
        if (z != 0.0 && z != 1.0)
            throw ValidationError("bce_with_logits: target not in {0,1}: " + std::to_string(z));
        total += std::max(s, 0.0) - s * z + std::log1p(std::exp(-std::fabs(s)));
    }
    return total / static_cast<double>(logits.size());
}

std::size_t argmax_row(const Matrix& m, std::size_t row) {
    const double* p = m.row_ptr(row);
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

double logsumexp_row(const Matrix& m, std::size_t row) {
    const double* p = m.row_ptr(row);
    double mx = p[0];
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, p[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += std::exp(p[j] - mx);
    return mx + std::log(s);
}

} // namespace feddes
