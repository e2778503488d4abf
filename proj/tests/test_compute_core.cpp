#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "htgnn/checkpoint.hpp"
#include "htgnn/ops.hpp"
#include "htgnn/params.hpp"
#include "htgnn/rng.hpp"
#include "htgnn/tensor.hpp"

using namespace htgnn;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, bool rg = false) {
  Tensor t(shape, 0.0, rg);
  for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

// Triple-loop reference product in extended precision.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (int t = 0; t < k; ++t)
        acc += static_cast<long double>(a.at(i, t)) * static_cast<long double>(b.at(t, j));
      out[static_cast<size_t>(i) * n + j] = static_cast<double>(acc);
    }
  return out;
}

std::vector<double> softmax_oracle(const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    long double sum = 0.0L;
    for (int j = 0; j < n; ++j) sum += expl(static_cast<long double>(x.at(i, j)));
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] =
          static_cast<double>(expl(static_cast<long double>(x.at(i, j))) / sum);
  }
  return out;
}

// Central finite differences on sampled coordinates of `x` against the
// adjoints produced by one taped backward pass.
template <class LossFn>
void check_grad_against_fd(Tensor& x, LossFn loss_fn, int n_coords, Rng& rng,
                           double tol = 1e-4, double h = 1e-6) {
  Tape tape;
  std::vector<double> ad;
  x.zero_grad();
  {
    TapeScope scope(&tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    ad.assign(x.grad(), x.grad() + x.size());
  }
  for (int c = 0; c < n_coords; ++c) {
    const long i = rng.next_u64() % static_cast<uint64_t>(x.size());
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double fp = loss_fn().value();
    x.data()[i] = keep - h;
    const double fm = loss_fn().value();
    x.data()[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::fabs(fd - ad[i]) / std::max({1.0, std::fabs(fd), std::fabs(ad[i])});
    CAPTURE(i);
    CAPTURE(fd);
    CAPTURE(ad[i]);
    CHECK(rel <= tol);
  }
  x.zero_grad();
}

}  // namespace

TEST_CASE("matmul: identity passes input through") {
  Rng rng(1);
  Tensor x = randn({3, 5}, rng);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor y = matmul(eye, x);
  for (long i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("matmul: hand arithmetic 2x2 times column") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);
}

TEST_CASE("matmul: random 5x4 * 4x3 matches triple-loop reference to 1e-12") {
  Rng rng(7);
  Tensor a = randn({5, 4}, rng);
  Tensor b = randn({4, 3}, rng);
  Tensor c = matmul(a, b);
  auto ref = matmul_oracle(a, b);
  for (long i = 0; i < c.size(); ++i)
    CHECK(std::fabs(c.data()[i] - ref[i]) <= 1e-12);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("matmul backward: adjoints are grad*b^T and a^T*grad") {
  Rng rng(11);
  Tensor a = randn({4, 3}, rng, true);
  Tensor b = randn({3, 5}, rng, true);
  Tape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum_all(matmul(a, b));
    tape.backward(loss);
  }
  // d/da sum(ab) = ones * b^T ; d/db = a^T * ones
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      double expect = 0.0;
      for (int k = 0; k < 5; ++k) expect += b.at(j, k);
      CHECK(a.grad()[static_cast<size_t>(i) * 3 + j] == doctest::Approx(expect));
    }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double expect = 0.0;
      for (int k = 0; k < 4; ++k) expect += a.at(k, i);
      CHECK(b.grad()[static_cast<size_t>(i) * 5 + j] == doctest::Approx(expect));
    }
}

TEST_CASE("softmax_rows: equal entries give uniform rows") {
  Tensor x = Tensor::from({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  Tensor y = softmax_rows(x);
  for (long i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(0.25));
}

TEST_CASE("softmax_rows: saturated mask entry receives exactly zero weight") {
  Tensor x = Tensor::from({1, 2}, {0.0, -1e9});
  Tensor y = softmax_rows(x);
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 0.0);
}

TEST_CASE("softmax_rows: random 3x4 matches extended-precision oracle to 1e-12") {
  Rng rng(3);
  Tensor x = randn({3, 4}, rng);
  Tensor y = softmax_rows(x);
  auto ref = softmax_oracle(x);
  for (long i = 0; i < y.size(); ++i) CHECK(std::fabs(y.data()[i] - ref[i]) <= 1e-12);
}

TEST_CASE("softmax_rows: rows sum to one within 1e-12 up to magnitude 1e3") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x(std::vector<int>{4, 7});
    for (long i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1e3, 1e3);
    Tensor y = softmax_rows(x);
    for (int r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int c = 0; c < 7; ++c) s += y.at(r, c);
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("batch_norm: constant column maps to zeros under the variance floor") {
  Tensor x(std::vector<int>{4, 1}, 2.5);
  Tensor gamma({1}, 1.0), beta({1}, 0.0);
  BatchNormState st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  Tensor y = batch_norm(x, gamma, beta, st, true);
  for (long i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("batch_norm: two-point column is already standardized") {
  Tensor x = Tensor::from({2, 1}, {-1.0, 1.0});
  Tensor gamma({1}, 1.0), beta({1}, 0.0);
  BatchNormState st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  Tensor y = batch_norm(x, gamma, beta, st, true);
  CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y.at(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("batch_norm: train-mode output has zero mean and unit variance per column") {
  Rng rng(13);
  Tensor x = randn({8, 3}, rng);
  for (long i = 0; i < x.size(); ++i) x.data()[i] = x.data()[i] * 2.0 + 1.0;
  Tensor gamma({3}, 1.0), beta({3}, 0.0);
  BatchNormState st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  Tensor y = batch_norm(x, gamma, beta, st, true);
  for (int j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 8; ++i) mean += y.at(i, j);
    mean /= 8;
    double var = 0.0;
    for (int i = 0; i < 8; ++i) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 8;
    CHECK(std::fabs(mean) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("batch_norm: single-row train batch is rejected") {
  Tensor x(std::vector<int>{1, 2});
  Tensor gamma({2}, 1.0), beta({2}, 0.0);
  BatchNormState st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, st, true), ContractError);
}

TEST_CASE("embedding_lookup: repeated id gathers identical rows") {
  Tensor table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out = embedding_lookup(table, {0, 0});
  CHECK(out.at(0, 0) == 1.0);
  CHECK(out.at(1, 0) == 1.0);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(1, 1) == 2.0);
}

TEST_CASE("embedding_lookup: equals one-hot matmul") {
  Rng rng(17);
  Tensor table = randn({5, 3}, rng);
  std::vector<int> ids = {2, 0, 4, 2};
  Tensor onehot({4, 5});
  for (int r = 0; r < 4; ++r) onehot.at(r, ids[r]) = 1.0;
  Tensor via_matmul = matmul(onehot, table);
  Tensor via_lookup = embedding_lookup(table, ids);
  for (long i = 0; i < via_lookup.size(); ++i)
    CHECK(via_lookup.data()[i] == doctest::Approx(via_matmul.data()[i]));
}

TEST_CASE("embedding_lookup backward: scatter-adds into table rows") {
  Tensor table(std::vector<int>{4, 3}, 0.0, true);
  Tape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum_all(embedding_lookup(table, {2, 2}));
    tape.backward(loss);
  }
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(table.grad()[static_cast<size_t>(r) * 3 + c] == (r == 2 ? 2.0 : 0.0));
}

TEST_CASE("embedding_lookup: out-of-range id is an index error naming the id") {
  Tensor table({3, 2});
  CHECK_THROWS_WITH_AS(embedding_lookup(table, {7}), doctest::Contains("7"), IndexError);
}

TEST_CASE("elementwise: relu and sigmoid definitions") {
  Tensor x = Tensor::from({1, 3}, {-3.0, 0.0, 3.0});
  Tensor r = relu(x);
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 2) == 3.0);
  Tensor s = sigmoid(Tensor::scalar(0.0));
  CHECK(s.value() == doctest::Approx(0.5));
}

TEST_CASE("elementwise: sigmoid derivative at zero matches central difference") {
  Tensor x = Tensor::from({1}, {0.0}, true);
  Tape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum_all(sigmoid(x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-9));
  const double h = 1e-6;
  auto f = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double fd = (f(h) - f(-h)) / (2 * h);
  CHECK(std::fabs(x.grad()[0] - fd) <= 1e-4);
}

TEST_CASE("log_floored: negative input is a domain error") {
  Tensor x = Tensor::from({1}, {-0.5});
  CHECK_THROWS_AS(log_floored(x), ContractError);
}

TEST_CASE("backward: sum of linear map gives outer-product adjoint") {
  Rng rng(19);
  Tensor w = randn({3, 4}, rng, true);
  Tensor x = randn({4, 2}, rng);
  Tape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum_all(matmul(w, x));
    tape.backward(loss);
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double expect = x.at(j, 0) + x.at(j, 1);
      CHECK(w.grad()[static_cast<size_t>(i) * 4 + j] == doctest::Approx(expect));
    }
}

TEST_CASE("backward: unused parameter keeps zero gradient") {
  Rng rng(23);
  Tensor used = randn({2, 2}, rng, true);
  Tensor unused = randn({2, 2}, rng, true);
  Tape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum_all(mul(used, used));
    tape.backward(loss);
  }
  for (long i = 0; i < unused.size(); ++i) CHECK(unused.grad()[i] == 0.0);
}

TEST_CASE("backward: rejects non-scalar loss") {
  Tensor x(std::vector<int>{2, 2}, 1.0, true);
  Tape tape;
  TapeScope scope(&tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward: replaying the tape doubles every gradient exactly") {
  Rng rng(29);
  Tensor w = randn({3, 3}, rng, true);
  Tensor x = randn({3, 3}, rng);
  Tape tape;
  TapeScope scope(&tape);
  Tensor loss = sum_all(relu(matmul(w, x)));
  tape.backward(loss);
  std::vector<double> first(w.grad(), w.grad() + w.size());
  tape.backward(loss);
  for (long i = 0; i < w.size(); ++i) CHECK(w.grad()[i] == 2.0 * first[i]);
}

TEST_CASE("gradient check: randomized finite differences across primitive ops") {
  Rng rng(31);

  SUBCASE("matmul chain") {
    Tensor a = randn({4, 5}, rng, true);
    Tensor b = randn({5, 3}, rng);
    check_grad_against_fd(
        a, [&] { return sum_all(relu(matmul(a, b))); }, 20, rng);
  }
  SUBCASE("softmax") {
    Tensor x = randn({3, 6}, rng, true);
    Tensor w = randn({3, 6}, rng);
    check_grad_against_fd(
        x, [&] { return sum_all(mul(softmax_rows(x), w)); }, 20, rng);
  }
  SUBCASE("sigmoid/exp/log") {
    Tensor x = randn({2, 5}, rng, true);
    check_grad_against_fd(
        x, [&] { return sum_all(log_floored(add_scalar(sigmoid(exp_of(x)), 0.5))); }, 20,
        rng);
  }
  SUBCASE("batch_norm train mode") {
    Tensor x = randn({6, 3}, rng, true);
    Tensor gamma = randn({3}, rng, true);
    Tensor beta = randn({3}, rng, true);
    auto fresh = [&] {
      BatchNormState st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
      return sum_all(mul(batch_norm(x, gamma, beta, st, true),
                         batch_norm(x, gamma, beta, st, true)));
    };
    check_grad_against_fd(x, fresh, 15, rng);
    check_grad_against_fd(gamma, fresh, 6, rng);
  }
  SUBCASE("row_l2_normalize and matmul_nt") {
    Tensor x = randn({4, 3}, rng, true);
    Tensor w = randn({4, 4}, rng);
    check_grad_against_fd(
        x,
        [&] {
          Tensor n = row_l2_normalize(x);
          return sum_all(mul(matmul_nt(n, n), w));
        },
        20, rng);
  }
  SUBCASE("pairwise_absdiff") {
    Tensor y = randn({5, 1}, rng, true);
    Tensor w = randn({5, 5}, rng);
    check_grad_against_fd(
        y, [&] { return sum_all(mul(softmax_rows(pairwise_absdiff(y)), w)); }, 15, rng);
  }
  SUBCASE("rowwise_matvec") {
    Tensor x = randn({3, 4}, rng, true);
    Tensor w = randn({3, 8}, rng, true);
    check_grad_against_fd(
        x, [&] { return sum_all(sigmoid(rowwise_matvec(x, w, 2))); }, 12, rng);
    check_grad_against_fd(
        w, [&] { return sum_all(sigmoid(rowwise_matvec(x, w, 2))); }, 12, rng);
  }
  SUBCASE("block matmul pair") {
    Tensor q = randn({6, 4}, rng, true);
    Tensor k = randn({6, 4}, rng);
    Tensor v = randn({6, 4}, rng);
    check_grad_against_fd(
        q,
        [&] {
          Tensor s = softmax_rows(block_matmul_nt(q, k, 3));
          return sum_all(mul(block_matmul(s, v, 3), v));
        },
        20, rng);
  }
  SUBCASE("gather/scatter/concat/slice") {
    Tensor x = randn({5, 4}, rng, true);
    check_grad_against_fd(
        x,
        [&] {
          Tensor g = gather_rows(x, {0, 2, 2, 4});
          Tensor s = scatter_rows(g, {1, 3, 3, 0}, 5);
          Tensor c = concat_cols({slice_cols(s, 0, 2), slice_cols(s, 1, 4)});
          return sum_all(mul(c, c));
        },
        20, rng);
  }
  SUBCASE("losses") {
    Tensor p = randn({6, 1}, rng, true);
    std::vector<double> y = {0.5, -1.0, 2.0, 0.0, 3.0, -0.5};
    check_grad_against_fd(
        p, [&] { return huber_mean(p, y, 0.8); }, 12, rng);
    check_grad_against_fd(
        p, [&] { return squared_error_half_mean(p, y); }, 12, rng);
    Tensor logits = randn({6, 1}, rng, true);
    std::vector<double> c = {1, 0, 1, 1, 0, 0};
    check_grad_against_fd(
        logits, [&] { return binary_ce(sigmoid(logits), c); }, 12, rng);
  }
}

TEST_CASE("optimizer: zero gradient leaves parameters unchanged") {
  Rng rng(37);
  ParamStore store;
  Tensor& w = store.create("w", {3, 3}, rng);
  std::vector<double> before(w.data(), w.data() + w.size());
  Adam opt(1e-3);
  opt.step(store);
  for (long i = 0; i < w.size(); ++i) CHECK(w.data()[i] == before[i]);
}

TEST_CASE("optimizer: constant gradient follows the scalar Adam recurrence") {
  ParamStore store;
  store.create_const("w", {1}, 1.0);
  Tensor& w = store.get("w");
  const double g = 0.37, lr = 1e-2;
  Adam opt(lr);
  // scalar oracle
  double wo = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    w.zero_grad();
    w.grad()[0] = g;
    opt.step(store);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    wo -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(w.data()[0] == doctest::Approx(wo).epsilon(1e-12));
  }
}

TEST_CASE("optimizer: quadratic bowl converges near zero in 200 steps") {
  ParamStore store;
  store.create_const("w", {1}, 1.0);
  Tensor& w = store.get("w");
  Adam opt(0.1);
  for (int t = 0; t < 200; ++t) {
    w.zero_grad();
    w.grad()[0] = 2.0 * w.data()[0];  // d/dw w^2
    opt.step(store);
  }
  CHECK(std::fabs(w.data()[0]) < 1e-2);
}

TEST_CASE("optimizer: missing gradient buffer is a contract error naming the parameter") {
  ParamStore store;
  store.create_state("frozen", {2}, 0.0);
  store.entries()[0].is_param = true;  // state tensors carry no gradient buffer
  Adam opt;
  CHECK_THROWS_WITH_AS(opt.step(store), doctest::Contains("frozen"), ContractError);
}

TEST_CASE("fixed seed reproduces bitwise-identical parameters") {
  auto build = [] {
    Rng rng(123);
    ParamStore store;
    store.create("a", {4, 4}, rng);
    store.create("b", {2, 8}, rng);
    return store;
  };
  ParamStore s1 = build();
  ParamStore s2 = build();
  for (size_t e = 0; e < s1.entries().size(); ++e)
    for (long i = 0; i < s1.entries()[e].tensor.size(); ++i)
      CHECK(s1.entries()[e].tensor.data()[i] == s2.entries()[e].tensor.data()[i]);
}

TEST_CASE("checkpoint: round trip and digest verification") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "htgnn_ckpt_test.bin").string();
  std::vector<CheckpointEntry> entries;
  entries.push_back({"layer.w", {2, 3}, {1, 2, 3, 4, 5, 6.5}});
  entries.push_back({"layer.b", {3}, {0.1, -0.2, 0.3}});
  save_checkpoint(path, "seed = 1\nlr = 0.001\n", entries);

  Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.config_text == "seed = 1\nlr = 0.001\n");
  REQUIRE(ckpt.entries.size() == 2);
  CHECK(ckpt.find("layer.w")->values[5] == 6.5);
  CHECK(ckpt.find("layer.b")->shape == std::vector<int>{3});
  CHECK(ckpt.find("missing") == nullptr);

  // Corrupt one byte of the embedded config; the digest check must reject it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6 + 8 + 8);  // magic + digest + length field
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  fs::remove(path);
}
