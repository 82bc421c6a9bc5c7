#include "doctest.h"

#include "mast/tensor.hpp"

#include <cmath>
#include <random>

using namespace mast;

namespace {

Tensor random_tensor(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(r, c);
  for (double& v : t.data) v = u(rng);
  return t;
}

// Independent brute-force matmul oracle.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      for (int k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

// Central finite differences of f at x, one entry at a time.
template <typename F>
Tensor finite_diff(F f, Tensor x, double eps = 1e-4) {
  Tensor g(x.rows(), x.cols());
  for (size_t i = 0; i < x.data.size(); ++i) {
    double orig = x.data[i];
    x.data[i] = orig + eps;
    double up = f(x);
    x.data[i] = orig - eps;
    double dn = f(x);
    x.data[i] = orig;
    g.data[i] = (up - dn) / (2 * eps);
  }
  return g;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double denom = std::max({std::fabs(a.data[i]), std::fabs(b.data[i]), 1e-3});
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Tensor id(2, 2, {1, 0, 0, 1});
  Tensor b(2, 2, {3, -1, 7, 2});
  Tensor r = tape.matmul(id, b);
  CHECK(r.data == b.data);

  Tensor a(2, 2, {1, 2, 3, 4});
  Tensor c(2, 1, {5, 6});
  Tensor p = tape.matmul(a, c);
  CHECK(p.at(0, 0) == doctest::Approx(17));
  CHECK(p.at(1, 0) == doctest::Approx(39));
}

TEST_CASE("matmul matches triple-loop oracle") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(4, 2, rng);
  Tape tape;
  Tensor got = tape.matmul(a, b);
  Tensor want = matmul_oracle(a, b);
  for (size_t i = 0; i < got.data.size(); ++i)
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  Tensor a(2, 3), b(2, 3);
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("softmax symmetry, stability, and formula oracle") {
  Tape tape;
  Tensor z(1, 3, {0, 0, 0});
  Tensor s = tape.softmax_rows(z);
  for (double v : s.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big(1, 2, {1000, 0});
  Tensor sb = tape.softmax_rows(big);
  CHECK(sb.at(0, 0) == doctest::Approx(1.0));
  CHECK(sb.at(0, 1) == doctest::Approx(0.0));
  CHECK(std::isfinite(sb.at(0, 0)));

  Tensor x(1, 3, {1, 2, 3});
  Tensor sx = tape.softmax_rows(x);
  double z3 = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(sx.at(0, 0) == doctest::Approx(std::exp(1.0) / z3).epsilon(1e-12));
  CHECK(sx.at(0, 2) == doctest::Approx(std::exp(3.0) / z3).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to 1 and are shift invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(4, 6, rng, 5.0);
    Tape tape;
    Tensor s = tape.softmax_rows(x);
    for (int r = 0; r < 4; ++r) {
      double total = 0;
      for (int c = 0; c < 6; ++c) total += s.at(r, c);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = x;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 6; ++c) shifted.at(r, c) += 3.7;
    Tensor s2 = tape.softmax_rows(shifted);
    for (size_t i = 0; i < s.data.size(); ++i)
      CHECK(s.data[i] == doctest::Approx(s2.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("masked softmax zeroes masked positions exactly") {
  Tape tape;
  Tensor x(2, 4, {5, 1, 2, 9, 0, 0, 0, 0});
  std::vector<uint8_t> mask{1, 1, 0, 0, 1, 1, 1, 0};
  Tensor s = tape.softmax_rows_masked(x, mask);
  CHECK(s.at(0, 2) == 0.0);
  CHECK(s.at(0, 3) == 0.0);
  CHECK(s.at(1, 3) == 0.0);
  CHECK(s.at(0, 0) + s.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(1, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("layer_norm edge cases and formula oracle") {
  Tape tape;
  Tensor gain(1, 2, {1, 1}), bias(1, 2, {0, 0});

  Tensor konst(1, 2, {4.2, 4.2});
  Tensor z = tape.layer_norm(konst, gain, bias);
  CHECK(z.at(0, 0) == doctest::Approx(0.0));
  CHECK(z.at(0, 1) == doctest::Approx(0.0));

  Tensor x(1, 2, {1, 3});
  Tensor n = tape.layer_norm(x, gain, bias);
  CHECK(n.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(n.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));

  Tensor zero_gain(1, 2, {0, 0}), b2(1, 2, {2.5, -1.0});
  Tensor only_bias = tape.layer_norm(x, zero_gain, b2);
  CHECK(only_bias.at(0, 0) == 2.5);
  CHECK(only_bias.at(0, 1) == -1.0);
}

TEST_CASE("backward linear and quadratic cases") {
  {
    Tape tape;
    Tensor w = tape.leaf(Tensor(2, 3, {1, 2, 3, 4, 5, 6}));
    Tensor loss = tape.sum(w);
    tape.backward(loss);
    Tensor g = tape.grad(w);
    for (double v : g.data) CHECK(v == 1.0);
  }
  {
    Tape tape;
    Tensor w = tape.leaf(Tensor(1, 4, {1, -2, 3, 0.5}));
    Tensor loss = tape.scale(tape.sum(tape.mul(w, w)), 0.5);
    tape.backward(loss);
    Tensor g = tape.grad(w);
    for (size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == doctest::Approx(w.data[i]));
  }
}

TEST_CASE("backward rejects non-scalar loss and untracked loss") {
  Tape tape;
  Tensor w = tape.leaf(Tensor(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.backward(w), std::invalid_argument);
  Tensor konst = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(konst), std::invalid_argument);
}

TEST_CASE("unreachable parameters get zero gradients") {
  Tape tape;
  Tensor used = tape.leaf(Tensor(1, 2, {1, 2}));
  Tensor unused = tape.leaf(Tensor(1, 3, {7, 8, 9}));
  Tensor loss = tape.sum(used);
  tape.backward(loss);
  Tensor g = tape.grad(unused);
  for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("gradient check for every primitive vs central differences") {
  std::mt19937_64 rng(3);
  auto check_unary = [&](auto make_loss, int r, int c, double scale = 1.0) {
    Tensor x0 = random_tensor(r, c, rng, scale);
    Tape tape;
    Tensor x = tape.leaf(x0);
    Tensor loss = make_loss(tape, x);
    tape.backward(loss);
    Tensor g = tape.grad(x);
    Tensor fd = finite_diff([&](const Tensor& xv) {
      Tape t2;
      Tensor xl = t2.leaf(xv);
      return make_loss(t2, xl).item();
    }, x0);
    CHECK(max_rel_err(g, fd) < 1e-3);
  };

  // Weighted sums give each output entry a distinct contribution.
  std::uniform_real_distribution<double> u(-1, 1);
  auto weighted = [&rng, &u](Tape& t, const Tensor& y) {
    Tensor w(y.rows(), y.cols());
    std::mt19937_64 local(99);
    std::uniform_real_distribution<double> uw(-1, 1);
    for (double& v : w.data) v = uw(local);
    return t.sum(t.mul(y, w));
  };

  check_unary([&](Tape& t, const Tensor& x) { return weighted(t, t.softmax_rows(x)); }, 3, 5);
  check_unary([&](Tape& t, const Tensor& x) { return weighted(t, t.gelu(x)); }, 2, 4, 2.0);
  check_unary([&](Tape& t, const Tensor& x) { return weighted(t, t.mean_rows(x)); }, 4, 3);
  check_unary([&](Tape& t, const Tensor& x) { return weighted(t, t.slice_rows(x, 1, 2)); }, 4, 3);
  check_unary([&](Tape& t, const Tensor& x) { return weighted(t, t.slice_cols(x, 1, 2)); }, 3, 4);
  check_unary([&](Tape& t, const Tensor& x) { return t.element(x, 1, 2); }, 2, 4);
  check_unary([&](Tape& t, const Tensor& x) {
    Tensor g(1, x.cols()), b(1, x.cols());
    for (double& v : g.data) v = 1.3;
    for (double& v : b.data) v = -0.2;
    return weighted(t, t.layer_norm(x, g, b));
  }, 3, 6);
  check_unary([&](Tape& t, const Tensor& x) {
    std::vector<uint8_t> mask(x.size(), 1);
    mask[1] = 0;
    mask[x.size() - 1] = 0;
    return weighted(t, t.softmax_rows_masked(x, mask));
  }, 2, 5);

  // Binary ops: perturb both sides.
  Tensor a0 = random_tensor(3, 4, rng);
  Tensor b0 = random_tensor(4, 2, rng);
  auto loss_ab = [&](const Tensor& av, const Tensor& bv) {
    Tape t;
    Tensor a = t.leaf(av), b = t.leaf(bv);
    return weighted(t, t.matmul(a, b)).item();
  };
  {
    Tape t;
    Tensor a = t.leaf(a0), b = t.leaf(b0);
    Tensor loss = weighted(t, t.matmul(a, b));
    t.backward(loss);
    Tensor fd_a = finite_diff([&](const Tensor& av) { return loss_ab(av, b0); }, a0);
    Tensor fd_b = finite_diff([&](const Tensor& bv) { return loss_ab(a0, bv); }, b0);
    CHECK(max_rel_err(t.grad(a), fd_a) < 1e-3);
    CHECK(max_rel_err(t.grad(b), fd_b) < 1e-3);
  }
  {
    Tensor c0 = random_tensor(3, 4, rng);
    Tape t;
    Tensor a = t.leaf(a0), c = t.leaf(c0);
    Tensor loss = weighted(t, t.matmul_nt(a, c));
    t.backward(loss);
    Tensor fd_a = finite_diff([&](const Tensor& av) {
      Tape t2;
      return weighted(t2, t2.matmul_nt(t2.leaf(av), c0)).item();
    }, a0);
    CHECK(max_rel_err(t.grad(a), fd_a) < 1e-3);
  }
}

TEST_CASE("backward is linear over independent losses") {
  std::mt19937_64 rng(21);
  Tensor w0 = random_tensor(2, 3, rng);
  auto grad_of = [&](int mode) {
    Tape t;
    Tensor w = t.leaf(w0);
    Tensor l1 = t.sum(t.mul(w, w));
    Tensor l2 = t.sum(t.gelu(w));
    Tensor loss = mode == 0 ? t.add(l1, l2) : (mode == 1 ? l1 : l2);
    t.backward(loss);
    return t.grad(w);
  };
  Tensor g_both = grad_of(0);
  Tensor g1 = grad_of(1);
  Tensor g2 = grad_of(2);
  for (size_t i = 0; i < g_both.data.size(); ++i)
    CHECK(g_both.data[i] == doctest::Approx(g1.data[i] + g2.data[i]).epsilon(1e-12));
}

TEST_CASE("log_clamped floors at 1e-12") {
  Tape tape;
  Tensor x(1, 3, {1.0, 1e-20, 0.0});
  Tensor l = tape.log_clamped(x);
  CHECK(l.at(0, 0) == doctest::Approx(0.0));
  CHECK(l.at(0, 1) == doctest::Approx(std::log(1e-12)));
  CHECK(l.at(0, 2) == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamMap params{{"w", Tensor(2, 2, {1, 2, 3, 4})}};
  GradMap grads{{"w", Tensor(2, 2)}};
  AdamState st;
  adam_step(params, grads, st);
  CHECK(params["w"].data == std::vector<double>{1, 2, 3, 4});
  CHECK(st.step == 1);
}

TEST_CASE("adam: bias-corrected first step moves by ~lr") {
  ParamMap params{{"w", Tensor::scalar(1.0)}};
  GradMap grads{{"w", Tensor::scalar(1.0)}};
  AdamState st;
  st.lr = 1e-4;
  adam_step(params, grads, st);
  // mhat = 1, vhat = 1 after bias correction; delta = lr / (1 + eps).
  CHECK(params["w"].item() == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
}

TEST_CASE("adam: identical runs are bit-identical") {
  auto run = [] {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    ParamMap params{{"w", Tensor(3, 3)}};
    for (double& v : params["w"].data) v = u(rng);
    AdamState st;
    st.lr = 1e-2;
    for (int i = 0; i < 20; ++i) {
      GradMap grads{{"w", Tensor(3, 3)}};
      for (double& v : grads["w"].data) v = u(rng);
      adam_step(params, grads, st);
    }
    return params["w"].data;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects shape mismatch") {
  ParamMap params{{"w", Tensor(2, 2)}};
  GradMap grads{{"w", Tensor(2, 3)}};
  AdamState st;
  CHECK_THROWS_AS(adam_step(params, grads, st), ShapeError);
}

TEST_CASE("forward determinism with fixed seed") {
  auto run = [] {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor a(5, 5), b(5, 5);
    for (double& v : a.data) v = u(rng);
    for (double& v : b.data) v = u(rng);
    Tape t;
    Tensor al = t.leaf(a);
    Tensor out = t.sum(t.softmax_rows(t.matmul(al, b)));
    t.backward(out);
    auto g = t.grad(al);
    std::vector<double> all = out.data;
    all.insert(all.end(), g.data.begin(), g.data.end());
    return all;
  };
  CHECK(run() == run());
}
