#pragma once

#include <vector>

#include "htgnn/tensor.hpp"

namespace htgnn {

// Primitive tensor operations. Each records its pull-back onto the active
// tape when one is installed and any input requires gradients.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor rsub_scalar(double s, const Tensor& a);  // s - a

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_of(const Tensor& a);
// log(max(x, 1e-12)); strictly negative input is a domain error.
Tensor log_floored(const Tensor& a);

// Row-wise softmax with per-row max subtraction. Entries of -1e9 act as
// saturated masks and receive exactly zero weight.
Tensor softmax_rows(const Tensor& a);

Tensor add_rowvec(const Tensor& a, const Tensor& v);  // v broadcast down rows
// a + tiled copies of block (no gradient into block; used for constant
// positional tables).
Tensor add_tiled_const(const Tensor& a, const Tensor& block);
Tensor mul_bcast_col(const Tensor& a, const Tensor& v);  // v: m×1, scales rows
Tensor col_scale(const Tensor& a, const Tensor& v);      // v: length-n, scales columns

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int begin, int end);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
Tensor scatter_rows(const Tensor& a, std::vector<int> idx, int total_rows);

Tensor sum_all(const Tensor& a);
Tensor row_sums(const Tensor& a);

// Row gather from a table; backward scatter-adds into the table rows.
Tensor embedding_lookup(const Tensor& table, std::vector<int> ids);

// Block-diagonal matrix products over stacked row blocks. `a` holds
// a.rows()/rows_per_block blocks; `b` is split into the same number of
// blocks. Plain form multiplies block-wise a_i * b_i, nt form a_i * b_i^T.
Tensor block_matmul(const Tensor& a, const Tensor& b, int rows_per_block);
Tensor block_matmul_nt(const Tensor& a, const Tensor& b, int rows_per_block);

// Rows scaled to unit L2 norm; norms floored at 1e-12.
Tensor row_l2_normalize(const Tensor& a);

// |y_i - y_j| over a length-b column vector -> b×b.
Tensor pairwise_absdiff(const Tensor& y);

// Per-row affine map with per-row weights: x is m×p, w is m×(p·q) holding a
// row-major p×q matrix per row, result is m×q.
Tensor rowwise_matvec(const Tensor& x, const Tensor& w, int out_dim);

struct BatchNormState {
  Tensor running_mean;  // length d
  Tensor running_var;   // length d
};

// Train mode normalizes with batch moments (variance floored at 1e-5) and
// updates running statistics with momentum 0.9; eval mode uses the running
// statistics. Train mode requires at least two rows.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool train);

// -sum(c*log(p) + (1-c)*log(1-p)) with predictions clamped to
// [1e-12, 1-1e-12]. Predictions outside [0,1] are a contract error.
Tensor binary_ce(const Tensor& pred, const std::vector<double>& targets);

// Mean Huber loss at fixed knot delta (no gradient through delta).
Tensor huber_mean(const Tensor& pred, const std::vector<double>& y, double delta);

// Mean of 0.5 * (pred - y)^2.
Tensor squared_error_half_mean(const Tensor& pred, const std::vector<double>& y);

}  // namespace htgnn
