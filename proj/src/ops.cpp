#include "htgnn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace htgnn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

bool grad_wanted(std::initializer_list<const Tensor*> ins) {
  if (!active_tape()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

void check_same_2d(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a) + " vs " +
                         shape_str(b));
}

using GradPtr = std::shared_ptr<std::vector<double>>;

GradPtr grad_of(const Tensor& t) { return t.requires_grad() ? t.grad_ptr() : nullptr; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows())
    throw DimensionError("matmul inner dimension mismatch: " + shape_str(a) + " x " +
                         shape_str(b));
  const bool rg = grad_wanted({&a, &b});
  Tensor out({m, n}, 0.0, rg);
  MMap(out.data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr();
    auto ag = grad_of(a), bg = grad_of(b), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      CMap g(og->data(), m, n);
      if (ag) MMap(ag->data(), m, k).noalias() += g * CMap(bd->data(), k, n).transpose();
      if (bg) MMap(bg->data(), k, n).noalias() += CMap(ad->data(), m, k).transpose() * g;
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols())
    throw DimensionError("matmul_nt inner dimension mismatch: " + shape_str(a) + " x " +
                         shape_str(b) + "^T");
  const bool rg = grad_wanted({&a, &b});
  Tensor out({m, n}, 0.0, rg);
  MMap(out.data(), m, n).noalias() =
      CMap(a.data(), m, k) * CMap(b.data(), n, k).transpose();
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr();
    auto ag = grad_of(a), bg = grad_of(b), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      CMap g(og->data(), m, n);
      if (ag) MMap(ag->data(), m, k).noalias() += g * CMap(bd->data(), n, k);
      if (bg) MMap(bg->data(), n, k).noalias() += g.transpose() * CMap(ad->data(), m, k);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  const bool rg = grad_wanted({&a});
  Tensor out({n, m}, 0.0, rg);
  MMap(out.data(), n, m) = CMap(a.data(), m, n).transpose();
  if (rg) {
    auto ag = grad_of(a), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      MMap(ag->data(), m, n).noalias() += CMap(og->data(), n, m).transpose();
    });
  }
  return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_pointwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                        Bwd bwd) {
  check_same_2d(a, b, name);
  const long n = a.size();
  const bool rg = grad_wanted({&a, &b});
  Tensor out(a.shape(), 0.0, rg);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (long i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr();
    auto ag = grad_of(a), bg = grad_of(b), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (long i = 0; i < n; ++i)
        bwd((*og)[i], (*ad)[i], (*bd)[i], ag ? &(*ag)[i] : nullptr,
            bg ? &(*bg)[i] : nullptr);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_pointwise(const Tensor& a, Fwd fwd, Bwd bwd) {
  const long n = a.size();
  const bool rg = grad_wanted({&a});
  Tensor out(a.shape(), 0.0, rg);
  const double* pa = a.data();
  double* po = out.data();
  for (long i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (rg) {
    auto ad = a.data_ptr();
    auto od = out.data_ptr();
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (long i = 0; i < n; ++i) (*ag)[i] += (*og)[i] * bwd((*ad)[i], (*od)[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
  return unary_pointwise(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_pointwise(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor rsub_scalar(double s, const Tensor& a) {
  return unary_pointwise(
      a, [s](double x) { return s - x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_pointwise(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_of(const Tensor& a) {
  return unary_pointwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_floored(const Tensor& a) {
  const double* pa = a.data();
  for (long i = 0; i < a.size(); ++i)
    if (pa[i] < 0.0)
      throw ContractError("log domain error: negative input " + std::to_string(pa[i]));
  constexpr double kFloor = 1e-12;
  return unary_pointwise(
      a, [](double x) { return std::log(x < kFloor ? kFloor : x); },
      [](double x, double) { return x > kFloor ? 1.0 / x : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  const bool rg = grad_wanted({&a});
  Tensor out({m, n}, 0.0, rg);
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    const double* row = pa + static_cast<size_t>(i) * n;
    double* orow = po + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  if (rg) {
    auto od = out.data_ptr();
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int i = 0; i < m; ++i) {
        const double* y = od->data() + static_cast<size_t>(i) * n;
        const double* g = og->data() + static_cast<size_t>(i) * n;
        double* ga = ag->data() + static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[j] * y[j];
        for (int j = 0; j < n; ++j) ga[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  const int m = a.rows(), n = a.cols();
  if (v.size() != n)
    throw DimensionError("add_rowvec length mismatch: " + shape_str(a) + " vs " +
                         shape_str(v));
  const bool rg = grad_wanted({&a, &v});
  Tensor out({m, n}, 0.0, rg);
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      po[static_cast<size_t>(i) * n + j] = pa[static_cast<size_t>(i) * n + j] + pv[j];
  if (rg) {
    auto ag = grad_of(a), vg = grad_of(v), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      const double* g = og->data();
      if (ag)
        for (long i = 0; i < static_cast<long>(m) * n; ++i) (*ag)[i] += g[i];
      if (vg)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) (*vg)[j] += g[static_cast<size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor add_tiled_const(const Tensor& a, const Tensor& block) {
  const int m = a.rows(), n = a.cols();
  const int bm = block.rows();
  if (block.cols() != n || bm <= 0 || m % bm != 0)
    throw DimensionError("add_tiled_const: block " + shape_str(block) +
                         " does not tile " + shape_str(a));
  if (block.requires_grad())
    throw ContractError("add_tiled_const block must be constant");
  const bool rg = grad_wanted({&a});
  Tensor out({m, n}, 0.0, rg);
  const double* pa = a.data();
  const double* pb = block.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    const double* brow = pb + static_cast<size_t>(i % bm) * n;
    for (int j = 0; j < n; ++j)
      po[static_cast<size_t>(i) * n + j] = pa[static_cast<size_t>(i) * n + j] + brow[j];
  }
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i];
    });
  }
  return out;
}

Tensor mul_bcast_col(const Tensor& a, const Tensor& v) {
  const int m = a.rows(), n = a.cols();
  if (v.size() != m)
    throw DimensionError("mul_bcast_col length mismatch: " + shape_str(a) + " vs " +
                         shape_str(v));
  const bool rg = grad_wanted({&a, &v});
  Tensor out({m, n}, 0.0, rg);
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      po[static_cast<size_t>(i) * n + j] = pa[static_cast<size_t>(i) * n + j] * pv[i];
  if (rg) {
    auto ad = a.data_ptr(), vd = v.data_ptr();
    auto ag = grad_of(a), vg = grad_of(v), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      const double* g = og->data();
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        if (ag)
          for (int j = 0; j < n; ++j) (*ag)[off + j] += g[off + j] * (*vd)[i];
        if (vg) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += g[off + j] * (*ad)[off + j];
          (*vg)[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor col_scale(const Tensor& a, const Tensor& v) {
  const int m = a.rows(), n = a.cols();
  if (v.size() != n)
    throw DimensionError("col_scale length mismatch: " + shape_str(a) + " vs " +
                         shape_str(v));
  const bool rg = grad_wanted({&a, &v});
  Tensor out({m, n}, 0.0, rg);
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      po[static_cast<size_t>(i) * n + j] = pa[static_cast<size_t>(i) * n + j] * pv[j];
  if (rg) {
    auto ad = a.data_ptr(), vd = v.data_ptr();
    auto ag = grad_of(a), vg = grad_of(v), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      const double* g = og->data();
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          if (ag) (*ag)[off + j] += g[off + j] * (*vd)[j];
          if (vg) (*vg)[j] += g[off + j] * (*ad)[off + j];
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols on empty list");
  const int m = parts[0].rows();
  int n = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols row count mismatch");
    n += p.cols();
    rg = rg || (active_tape() && p.requires_grad());
  }
  Tensor out({m, n}, 0.0, rg);
  double* po = out.data();
  int col0 = 0;
  for (const Tensor& p : parts) {
    const int pn = p.cols();
    const double* pp = p.data();
    for (int i = 0; i < m; ++i)
      std::memcpy(po + static_cast<size_t>(i) * n + col0,
                  pp + static_cast<size_t>(i) * pn, sizeof(double) * pn);
    col0 += pn;
  }
  if (rg) {
    struct Piece {
      GradPtr grad;
      int col0;
      int width;
    };
    std::vector<Piece> pieces;
    col0 = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) pieces.push_back({p.grad_ptr(), col0, p.cols()});
      col0 += p.cols();
    }
    auto og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (const Piece& pc : pieces)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < pc.width; ++j)
            (*pc.grad)[static_cast<size_t>(i) * pc.width + j] +=
                (*og)[static_cast<size_t>(i) * n + pc.col0 + j];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int begin, int end) {
  const int m = a.rows(), n = a.cols();
  if (begin < 0 || end > n || begin >= end)
    throw DimensionError("slice_cols range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + shape_str(a));
  const int w = end - begin;
  const bool rg = grad_wanted({&a});
  Tensor out({m, w}, 0.0, rg);
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(po + static_cast<size_t>(i) * w,
                pa + static_cast<size_t>(i) * n + begin, sizeof(double) * w);
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          (*ag)[static_cast<size_t>(i) * n + begin + j] +=
              (*og)[static_cast<size_t>(i) * w + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  const int m = a.rows(), n = a.cols();
  for (int id : idx)
    if (id < 0 || id >= m)
      throw IndexError("gather_rows index " + std::to_string(id) + " out of range [0," +
                       std::to_string(m) + ")");
  const int k = static_cast<int>(idx.size());
  const bool rg = grad_wanted({&a});
  Tensor out({k, n}, 0.0, rg);
  const double* pa = a.data();
  double* po = out.data();
  for (int r = 0; r < k; ++r)
    std::memcpy(po + static_cast<size_t>(r) * n,
                pa + static_cast<size_t>(idx[r]) * n, sizeof(double) * n);
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    active_tape()->record(out, [=] {
      for (int r = 0; r < k; ++r)
        for (int j = 0; j < n; ++j)
          (*ag)[static_cast<size_t>((*ids)[r]) * n + j] +=
              (*og)[static_cast<size_t>(r) * n + j];
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& a, std::vector<int> idx, int total_rows) {
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(idx.size()) != m)
    throw DimensionError("scatter_rows index count mismatch");
  for (int id : idx)
    if (id < 0 || id >= total_rows)
      throw IndexError("scatter_rows index " + std::to_string(id) +
                       " out of range [0," + std::to_string(total_rows) + ")");
  const bool rg = grad_wanted({&a});
  Tensor out({total_rows, n}, 0.0, rg);
  const double* pa = a.data();
  double* po = out.data();
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < n; ++j)
      po[static_cast<size_t>(idx[r]) * n + j] += pa[static_cast<size_t>(r) * n + j];
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    active_tape()->record(out, [=] {
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < n; ++j)
          (*ag)[static_cast<size_t>(r) * n + j] +=
              (*og)[static_cast<size_t>((*ids)[r]) * n + j];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  const bool rg = grad_wanted({&a});
  Tensor out({1}, 0.0, rg);
  double acc = 0.0;
  const double* pa = a.data();
  for (long i = 0; i < a.size(); ++i) acc += pa[i];
  out.data()[0] = acc;
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      const double g = (*og)[0];
      for (auto& v : *ag) v += g;
    });
  }
  return out;
}

Tensor row_sums(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  const bool rg = grad_wanted({&a});
  Tensor out({m, 1}, 0.0, rg);
  const double* pa = a.data();
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += pa[static_cast<size_t>(i) * n + j];
    out.data()[i] = acc;
  }
  if (rg) {
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) (*ag)[static_cast<size_t>(i) * n + j] += (*og)[i];
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::vector<int> ids) {
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding id " + std::to_string(id) + " out of range [0," +
                       std::to_string(v) + ")");
  const int n = static_cast<int>(ids.size());
  const bool rg = grad_wanted({&table});
  Tensor out({n, d}, 0.0, rg);
  const double* pt = table.data();
  double* po = out.data();
  for (int r = 0; r < n; ++r)
    std::memcpy(po + static_cast<size_t>(r) * d, pt + static_cast<size_t>(ids[r]) * d,
                sizeof(double) * d);
  if (rg) {
    auto tg = table.grad_ptr(), og = out.grad_ptr();
    auto idp = std::make_shared<std::vector<int>>(std::move(ids));
    active_tape()->record(out, [=] {
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j)
          (*tg)[static_cast<size_t>((*idp)[r]) * d + j] +=
              (*og)[static_cast<size_t>(r) * d + j];
    });
  }
  return out;
}

namespace {

Tensor block_matmul_impl(const Tensor& a, const Tensor& b, int rows_per_block, bool nt) {
  const int am = a.rows(), ak = a.cols();
  if (rows_per_block <= 0 || am % rows_per_block != 0)
    throw DimensionError("block_matmul: rows_per_block does not divide lhs rows");
  const int blocks = am / rows_per_block;
  if (b.rows() % blocks != 0)
    throw DimensionError("block_matmul: rhs rows not divisible into blocks");
  const int rb = b.rows() / blocks;
  const int bn = b.cols();
  int on;
  if (nt) {
    if (ak != bn) throw DimensionError("block_matmul_nt inner dimension mismatch");
    on = rb;
  } else {
    if (ak != rb) throw DimensionError("block_matmul inner dimension mismatch");
    on = bn;
  }
  const bool rg = grad_wanted({&a, &b});
  Tensor out({am, on}, 0.0, rg);
  const int ra = rows_per_block;
  for (int u = 0; u < blocks; ++u) {
    CMap A(a.data() + static_cast<size_t>(u) * ra * ak, ra, ak);
    CMap B(b.data() + static_cast<size_t>(u) * rb * bn, rb, bn);
    MMap O(out.data() + static_cast<size_t>(u) * ra * on, ra, on);
    if (nt)
      O.noalias() = A * B.transpose();
    else
      O.noalias() = A * B;
  }
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr();
    auto ag = grad_of(a), bg = grad_of(b), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int u = 0; u < blocks; ++u) {
        CMap A(ad->data() + static_cast<size_t>(u) * ra * ak, ra, ak);
        CMap B(bd->data() + static_cast<size_t>(u) * rb * bn, rb, bn);
        CMap G(og->data() + static_cast<size_t>(u) * ra * on, ra, on);
        if (nt) {
          if (ag)
            MMap(ag->data() + static_cast<size_t>(u) * ra * ak, ra, ak).noalias() +=
                G * B;
          if (bg)
            MMap(bg->data() + static_cast<size_t>(u) * rb * bn, rb, bn).noalias() +=
                G.transpose() * A;
        } else {
          if (ag)
            MMap(ag->data() + static_cast<size_t>(u) * ra * ak, ra, ak).noalias() +=
                G * B.transpose();
          if (bg)
            MMap(bg->data() + static_cast<size_t>(u) * rb * bn, rb, bn).noalias() +=
                A.transpose() * G;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor block_matmul(const Tensor& a, const Tensor& b, int rows_per_block) {
  return block_matmul_impl(a, b, rows_per_block, false);
}

Tensor block_matmul_nt(const Tensor& a, const Tensor& b, int rows_per_block) {
  return block_matmul_impl(a, b, rows_per_block, true);
}

Tensor row_l2_normalize(const Tensor& a) {
  constexpr double kEps = 1e-12;
  const int m = a.rows(), n = a.cols();
  const bool rg = grad_wanted({&a});
  Tensor out({m, n}, 0.0, rg);
  std::vector<double> norms(m);
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    double ss = 0.0;
    const size_t off = static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ss += pa[off + j] * pa[off + j];
    const double norm = std::sqrt(ss);
    norms[i] = norm < kEps ? kEps : norm;
    const double inv = 1.0 / norms[i];
    for (int j = 0; j < n; ++j) po[off + j] = pa[off + j] * inv;
  }
  if (rg) {
    auto ad = a.data_ptr();
    auto ag = a.grad_ptr(), og = out.grad_ptr();
    auto nrm = std::make_shared<std::vector<double>>(std::move(norms));
    active_tape()->record(out, [=] {
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        const double nv = (*nrm)[i];
        const double inv = 1.0 / nv;
        double ss = 0.0, gdot = 0.0;
        for (int j = 0; j < n; ++j) {
          ss += (*ad)[off + j] * (*ad)[off + j];
          gdot += (*og)[off + j] * (*ad)[off + j];
        }
        const bool floored = std::sqrt(ss) < kEps;
        for (int j = 0; j < n; ++j) {
          double d = (*og)[off + j] * inv;
          if (!floored) d -= (*ad)[off + j] * gdot * inv * inv * inv;
          (*ag)[off + j] += d;
        }
      }
    });
  }
  return out;
}

Tensor pairwise_absdiff(const Tensor& y) {
  const int b = static_cast<int>(y.size());
  if (y.cols() != 1 && y.rank() != 1)
    throw DimensionError("pairwise_absdiff expects a column vector");
  const bool rg = grad_wanted({&y});
  Tensor out({b, b}, 0.0, rg);
  const double* py = y.data();
  double* po = out.data();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      po[static_cast<size_t>(i) * b + j] = std::fabs(py[i] - py[j]);
  if (rg) {
    auto yd = y.data_ptr();
    auto yg = y.grad_ptr(), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
          const double d = (*yd)[i] - (*yd)[j];
          if (d == 0.0) continue;
          const double s = d > 0.0 ? 1.0 : -1.0;
          const double g = (*og)[static_cast<size_t>(i) * b + j];
          (*yg)[i] += g * s;
          (*yg)[j] -= g * s;
        }
    });
  }
  return out;
}

Tensor rowwise_matvec(const Tensor& x, const Tensor& w, int out_dim) {
  const int m = x.rows(), p = x.cols();
  const int q = out_dim;
  if (w.rows() != m || w.cols() != p * q)
    throw DimensionError("rowwise_matvec: weights " + shape_str(w) +
                         " incompatible with input " + shape_str(x) + " and out_dim " +
                         std::to_string(q));
  const bool rg = grad_wanted({&x, &w});
  Tensor out({m, q}, 0.0, rg);
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    CMap W(pw + static_cast<size_t>(i) * p * q, p, q);
    Eigen::Map<const Eigen::RowVectorXd> xi(px + static_cast<size_t>(i) * p, p);
    Eigen::Map<Eigen::RowVectorXd>(po + static_cast<size_t>(i) * q, q).noalias() =
        xi * W;
  }
  if (rg) {
    auto xd = x.data_ptr(), wd = w.data_ptr();
    auto xg = grad_of(x), wg = grad_of(w), og = out.grad_ptr();
    active_tape()->record(out, [=] {
      for (int i = 0; i < m; ++i) {
        CMap W(wd->data() + static_cast<size_t>(i) * p * q, p, q);
        Eigen::Map<const Eigen::RowVectorXd> xi(xd->data() + static_cast<size_t>(i) * p,
                                                p);
        Eigen::Map<const Eigen::RowVectorXd> gi(og->data() + static_cast<size_t>(i) * q,
                                                q);
        if (xg)
          Eigen::Map<Eigen::RowVectorXd>(xg->data() + static_cast<size_t>(i) * p, p)
              .noalias() += gi * W.transpose();
        if (wg)
          MMap(wg->data() + static_cast<size_t>(i) * p * q, p, q).noalias() +=
              xi.transpose() * gi;
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool train) {
  constexpr double kVarFloor = 1e-5;
  const int m = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d || state.running_mean.size() != d ||
      state.running_var.size() != d)
    throw DimensionError("batch_norm parameter size mismatch for " + shape_str(x));
  if (train && m < 2)
    throw ContractError("batch_norm train mode requires a batch of at least 2 rows");
  const bool rg = grad_wanted({&x, &gamma, &beta});
  Tensor out({m, d}, 0.0, rg);

  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (train) {
    const double* px = x.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) mean[j] += px[static_cast<size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) mean[j] /= m;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) {
        const double c = px[static_cast<size_t>(i) * d + j] - mean[j];
        var[j] += c * c;
      }
    for (int j = 0; j < d; ++j) var[j] /= m;
    double* rm = state.running_mean.data();
    double* rv = state.running_var.data();
    for (int j = 0; j < d; ++j) {
      rm[j] = 0.9 * rm[j] + 0.1 * mean[j];
      rv[j] = 0.9 * rv[j] + 0.1 * var[j];
    }
  } else {
    const double* rm = state.running_mean.data();
    const double* rv = state.running_var.data();
    for (int j = 0; j < d; ++j) {
      mean[j] = rm[j];
      var[j] = rv[j];
    }
  }

  std::vector<double> inv_std(d);
  for (int j = 0; j < d; ++j)
    inv_std[j] = 1.0 / std::sqrt(var[j] < kVarFloor ? kVarFloor : var[j]);

  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) {
      const size_t off = static_cast<size_t>(i) * d + j;
      po[off] = pg[j] * (px[off] - mean[j]) * inv_std[j] + pb[j];
    }

  if (rg) {
    auto xd = x.data_ptr(), gd = gamma.data_ptr();
    auto xg = grad_of(x), gg = grad_of(gamma), bg = grad_of(beta), og = out.grad_ptr();
    auto mn = std::make_shared<std::vector<double>>(std::move(mean));
    auto vr = std::make_shared<std::vector<double>>(std::move(var));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    active_tape()->record(out, [=] {
      for (int j = 0; j < d; ++j) {
        const double mu = (*mn)[j], s = (*is)[j], gam = (*gd)[j];
        const bool floored = (*vr)[j] < kVarFloor;
        double gsum = 0.0, gxhat = 0.0, dgamma = 0.0;
        for (int i = 0; i < m; ++i) {
          const size_t off = static_cast<size_t>(i) * d + j;
          const double gv = (*og)[off];
          const double xhat = ((*xd)[off] - mu) * s;
          gsum += gv;
          gxhat += gv * xhat;
          dgamma += gv * xhat;
        }
        if (gg) (*gg)[j] += dgamma;
        if (bg) (*bg)[j] += gsum;
        if (xg) {
          if (!train) {
            for (int i = 0; i < m; ++i) {
              const size_t off = static_cast<size_t>(i) * d + j;
              (*xg)[off] += gam * s * (*og)[off];
            }
          } else {
            const double gmean = gsum / m;
            const double gxmean = gxhat / m;
            for (int i = 0; i < m; ++i) {
              const size_t off = static_cast<size_t>(i) * d + j;
              const double xhat = ((*xd)[off] - mu) * s;
              double dx = (*og)[off] - gmean;
              if (!floored) dx -= xhat * gxmean;
              (*xg)[off] += gam * s * dx;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor binary_ce(const Tensor& pred, const std::vector<double>& targets) {
  constexpr double kEps = 1e-12;
  const long n = pred.size();
  if (n != static_cast<long>(targets.size()))
    throw DimensionError("binary_ce length mismatch");
  const double* pp = pred.data();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    if (pp[i] < 0.0 || pp[i] > 1.0)
      throw ContractError("binary_ce prediction " + std::to_string(pp[i]) +
                          " outside [0,1]");
    const double c = targets[i];
    if (c != 0.0 && c != 1.0)
      throw ContractError("binary_ce target must be 0 or 1");
    const double p = std::clamp(pp[i], kEps, 1.0 - kEps);
    acc -= c * std::log(p) + (1.0 - c) * std::log(1.0 - p);
  }
  const bool rg = grad_wanted({&pred});
  Tensor out({1}, 0.0, rg);
  out.data()[0] = acc;
  if (rg) {
    auto pd = pred.data_ptr();
    auto pg = pred.grad_ptr(), og = out.grad_ptr();
    auto tg = std::make_shared<std::vector<double>>(targets);
    active_tape()->record(out, [=] {
      const double g = (*og)[0];
      for (long i = 0; i < n; ++i) {
        const double p = std::clamp((*pd)[i], kEps, 1.0 - kEps);
        (*pg)[i] += g * (-(*tg)[i] / p + (1.0 - (*tg)[i]) / (1.0 - p));
      }
    });
  }
  return out;
}

Tensor huber_mean(const Tensor& pred, const std::vector<double>& y, double delta) {
  const long n = pred.size();
  if (n != static_cast<long>(y.size())) throw DimensionError("huber_mean length mismatch");
  if (n == 0) throw ContractError("huber_mean on empty batch");
  const double* pp = pred.data();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    const double e = pp[i] - y[i];
    const double ae = std::fabs(e);
    acc += ae <= delta ? 0.5 * e * e : delta * ae - 0.5 * delta * delta;
  }
  const bool rg = grad_wanted({&pred});
  Tensor out({1}, 0.0, rg);
  out.data()[0] = acc / static_cast<double>(n);
  if (rg) {
    auto pd = pred.data_ptr();
    auto pg = pred.grad_ptr(), og = out.grad_ptr();
    auto yv = std::make_shared<std::vector<double>>(y);
    active_tape()->record(out, [=] {
      const double g = (*og)[0] / static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        const double e = (*pd)[i] - (*yv)[i];
        const double d = std::fabs(e) <= delta ? e : (e > 0.0 ? delta : -delta);
        (*pg)[i] += g * d;
      }
    });
  }
  return out;
}

Tensor squared_error_half_mean(const Tensor& pred, const std::vector<double>& y) {
  const long n = pred.size();
  if (n != static_cast<long>(y.size()))
    throw DimensionError("squared_error_half_mean length mismatch");
  if (n == 0) throw ContractError("squared_error_half_mean on empty batch");
  const double* pp = pred.data();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    const double e = pp[i] - y[i];
    acc += 0.5 * e * e;
  }
  const bool rg = grad_wanted({&pred});
  Tensor out({1}, 0.0, rg);
  out.data()[0] = acc / static_cast<double>(n);
  if (rg) {
    auto pd = pred.data_ptr();
    auto pg = pred.grad_ptr(), og = out.grad_ptr();
    auto yv = std::make_shared<std::vector<double>>(y);
    active_tape()->record(out, [=] {
      const double g = (*og)[0] / static_cast<double>(n);
      for (long i = 0; i < n; ++i) (*pg)[i] += g * ((*pd)[i] - (*yv)[i]);
    });
  }
  return out;
}

}  // namespace htgnn
