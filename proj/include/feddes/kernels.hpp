#pragma once

#include "feddes/matrix.hpp"

namespace feddes {

// Hot numeric loops, each in two builds: a serial reference and an OpenMP
// version. Every output element is produced by exactly one thread with the
// same inner summation order as the reference, so the two are bit-identical
// and runs do not depend on thread count. feddes_bench compares their speed.

Matrix matmul_serial(const Matrix& a, const Matrix& b);
Matrix matmul_parallel(const Matrix& a, const Matrix& b);

// Dispatches to the parallel kernel for work sizes where threads pay off.
Matrix matmul(const Matrix& a, const Matrix& b);

// dist(i, j) = sum_d |a(i,d) - b(j,d)|
Matrix pairwise_l1_serial(const Matrix& a, const Matrix& b);
Matrix pairwise_l1_parallel(const Matrix& a, const Matrix& b);
Matrix pairwise_l1(const Matrix& a, const Matrix& b);

double l1_distance(const double* a, const double* b, std::size_t n);

// Elementwise 1/(1+exp(-x)); saturates, never NaN.
Matrix sigmoid(const Matrix& x);
double sigmoid_scalar(double x);

// Row-wise softmax with max-shift; each output row sums to 1.
Matrix softmax_rows(const Matrix& logits);

// Mean over all entries of max(s,0) - s*z + log1p(exp(-|s|)).
// Targets must be exactly 0 or 1.
double bce_with_logits(const Matrix& logits, const Matrix& targets);

std::size_t argmax_row(const Matrix& m, std::size_t row);

double logsumexp_row(const Matrix& m, std::size_t row);

} // namespace feddes
