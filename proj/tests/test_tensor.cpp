// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "duovoce/checkpoint.hpp"
#include "duovoce/random.hpp"
#include "duovoce/tensor.hpp"
#include "duovoce/verify.hpp"
#include "test_util.hpp"

using namespace duovoce;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

std::vector<float> values(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("matmul by identity") {
  const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
  CHECK(values(matmul(a, eye)) == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  const auto x = random_tensor({2, 1, 4, 5}, 1);
  const Tensor w(Shape{1, 1, 1, 1}, 1.0f);
  CHECK(values(conv2d(x, w, Tensor(), {})) == values(x));
}

TEST_CASE("conv2d counts overlaps of a 3x3 ones kernel") {
  const Tensor x(Shape{1, 1, 4, 4}, 1.0f);
  const Tensor w(Shape{1, 1, 3, 3}, 1.0f);
  const auto y = conv2d(x, w, Tensor(), {1, 1, 1, 1});
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  // Overlap count at (i, j) is rows(i) * cols(j), each 2 at a border else 3.
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const float rows = (i == 0 || i == 3) ? 2.0f : 3.0f;
      const float cols = (j == 0 || j == 3) ? 2.0f : 3.0f;
      CHECK(y.data()[i * 4 + j] == rows * cols);
    }
  }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_t(y)> for the same weight.
  const auto x = random_tensor({2, 3, 7, 5}, 2);
  const auto w = random_tensor({4, 3, 3, 2}, 3);
  const Conv2dParams p{2, 1, 1, 1};
  const auto cx = conv2d(x, w, Tensor(), p);
  const auto y = random_tensor(cx.shape(), 4);
  // Transposed weight layout is (in, out, kh, kw) = (4, 3, 3, 2) here.
  const auto ty = conv2d_transpose(y, w, Tensor(), p);
  REQUIRE(ty.dim(2) <= 7);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
  const std::size_t h = ty.dim(2), wd = ty.dim(3);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t s = 0; s < wd; ++s) {
          rhs += x.data()[((n * 3 + c) * 7 + r) * 5 + s] *
                 ty.data()[((n * 3 + c) * h + r) * wd + s];
        }
      }
    }
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("broadcasting follows numpy rules") {
  const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row(Shape{3}, {10, 20, 30});
  const Tensor col(Shape{2, 1}, {100, 200});
  CHECK(values(add(a, row)) == std::vector<float>{11, 22, 33, 14, 25, 36});
  CHECK(values(mul(a, col)) == std::vector<float>{100, 200, 300, 800, 1000, 1200});
  CHECK_THROWS_AS(add(a, Tensor(Shape{2})), ShapeError);
}

TEST_CASE("shape errors name both shapes") {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_str({2, 3})) != std::string::npos);
    CHECK(msg.find(shape_str({4, 2})) != std::string::npos);
  }
}

TEST_CASE("backward examples") {
  Tensor x(Shape{1}, {3.0f}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(square(x)));
  }
  CHECK(x.grad()[0] == 6.0f);

  Tensor z(Shape{1}, {0.0f}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(sigmoid(z)));
  }
  CHECK(z.grad()[0] == 0.25f);
}

TEST_CASE("gradients accumulate across uses of a leaf") {
  Tensor x(Shape{2}, {1.0f, -2.0f}, true);
  Tape tape;
  TapeScope scope(tape);
  backward(add(sum(x), sum(mul(x, x))));
  CHECK(x.grad()[0] == 3.0f);
  CHECK(x.grad()[1] == -3.0f);
}

TEST_CASE("tape misuse is reported") {
  Tensor x(Shape{3}, 1.0f, true);
  Tape tape;
  TapeScope scope(tape);
  const auto y = mul(x, x);
  CHECK_THROWS_AS(backward(y), AutodiffError);  // not a scalar
  const auto loss = sum(y);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), AutodiffError);  // tape consumed

  Tape other;
  TapeScope inner(other);
  CHECK_THROWS_AS(backward(loss), AutodiffError);  // different tape
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0f)), AutodiffError);  // detached
}

TEST_CASE("no-grad scope records nothing") {
  Tensor x(Shape{2}, 1.0f, true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope ng;
    const auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("float32 finite differences on random 3-layer compositions") {
  GradCheckOptions opts;
  opts.eps = 1e-3;
  opts.normwise = true;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto w1 = random_tensor({4, 5}, 100 + 4 * s);
    auto w2 = random_tensor({5, 3}, 101 + 4 * s);
    auto w3 = random_tensor({3, 1}, 102 + 4 * s);
    auto x = random_tensor({2, 4}, 103 + 4 * s);
    const auto res = grad_check<float>(
        [&] { return sum(matmul(tanh(matmul(tanh(matmul(x, w1)), w2)), w3)); },
        {x, w1, w2, w3}, opts);
    INFO("seed ", s, " tensor ", res.worst_tensor);
    CHECK(res.max_rel_error < 1e-3);
  }
}

TEST_CASE("grad_check examples") {
  const auto x = random_tensor({3, 3}, 20).cast<double>();
  CHECK(grad_check<double>([](const TensorD& v) { return sum(square(v)); }, x,
                           1e-5) < 1e-4);
  // A constant function: analytic zero, numeric zero.
  GradCheckOptions opts;
  TensorD leaf = x.detach();
  const auto res = grad_check<double>(
      [&] { return TensorD::scalar(2.0); }, {leaf}, opts);
  CHECK(res.max_rel_error < 1e-3);
  CHECK(res.analytic == 0.0);
  CHECK(std::abs(res.numeric) < 1e-4);
}

TEST_CASE("every primitive op passes the finite-difference oracle") {
  for (const auto& o : run_checks(gradcheck_suite("tensor"))) {
    INFO(o.op, " ", o.error);
    CHECK(o.result.max_rel_error < kGradCheckTolerance);
  }
}

TEST_CASE("a corrupted backward is caught and named") {
  OpCheck bad{"tensor", "double_trouble", [] {
                TensorD x(Shape{3}, {0.5, -1.0, 2.0});
                return grad_check<double>(
                    [&] {
                      TensorD y(x.shape(),
                                std::vector<double>(x.data().begin(), x.data().end()));
                      if (detail::recording<double>({&x})) {
                        auto xi = x.impl();
                        auto yi = y.impl();
                        // Reports twice the true derivative.
                        detail::attach_backward(y, [xi, yi] {
                          auto& g = xi->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            g[i] += 2.0 * yi->grad[i];
                          }
                        });
                      }
                      return sum(y);
                    },
                    {x});
              }};
  const auto out = run_checks({bad});
  REQUIRE(out.size() == 1);
  CHECK_FALSE(out[0].passed);
  CHECK(out[0].op == "double_trouble");
  CHECK(out[0].result.max_rel_error == doctest::Approx(0.5));
}

TEST_CASE("sgd_step examples") {
  Tensor p(Shape{1}, {1.0f}, true);
  p.mutable_grad()[0] = 2.0f;
  std::vector<Tensor> ps{p};
  sgd_step<float>(ps, 0.5);
  CHECK(p.data()[0] == 0.0f);
  CHECK(p.grad()[0] == 0.0f);

  // x <- x - 0.25 * 2x = x / 2.
  Tensor x(Shape{1}, {1.0f}, true);
  std::vector<Tensor> xs{x};
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(square(x)));
    sgd_step<float>(xs, 0.25);
  }
  CHECK(x.data()[0] == 0.25f);

  Tensor q(Shape{2}, {1.0f, 2.0f}, true);
  q.mutable_grad()[0] = 5.0f;
  std::vector<Tensor> qs{q};
  sgd_step<float>(qs, 0.0);
  CHECK(values(q) == std::vector<float>{1.0f, 2.0f});

  std::vector<Tensor> none{Tensor(Shape{1}, 0.0f, true)};
  CHECK_THROWS_AS(sgd_step<float>(none, 0.1), AutodiffError);
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  Tensor a(Shape{2}, 0.0f, true), b(Shape{1}, 0.0f, true);
  a.mutable_grad()[0] = 3.0f;
  b.mutable_grad()[0] = 4.0f;
  std::vector<Tensor> ps{a, b};
  CHECK(clip_grad_norm<float>(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm<float>(ps, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("concat then slice recovers each part") {
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 5;
    const auto a = random_tensor(sa, 30 + axis), b = random_tensor(sb, 40 + axis);
    const auto c = concat<float>({a, b}, axis);
    CHECK(values(slice(c, axis, 0, sa[axis])) == values(a));
    CHECK(values(slice(c, axis, sa[axis], sb[axis])) == values(b));
  }
}

TEST_CASE("softmax and standardize_rows") {
  const auto x = random_tensor({4, 7}, 50, -3, 3);
  const auto p = softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += p.data()[r * 7 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  const auto z = standardize_rows(x, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 7; ++c) m += z.data()[r * 7 + c];
    m /= 7;
    for (std::size_t c = 0; c < 7; ++c) v += std::pow(z.data()[r * 7 + c] - m, 2);
    CHECK(m == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(v / 7 == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("permute and reshape bookkeeping") {
  const auto x = random_tensor({2, 3, 4}, 60);
  const auto y = permute(x, {2, 0, 1});
  REQUIRE(y.shape() == Shape{4, 2, 3});
  CHECK(y.data()[(3 * 2 + 1) * 3 + 2] == x.data()[(1 * 3 + 2) * 4 + 3]);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
  CHECK(values(permute(y, {1, 2, 0})) == values(x));
}

TEST_CASE("checkpoint layout and round trip") {
  NamedTensors t;
  t.emplace("b", Tensor(Shape{2}, {1.5f, -2.0f}));
  t.emplace("a", Tensor(Shape{1, 2}, {3.0f, 4.0f}));
  const auto bytes = serialize_checkpoint(t);
  // "DVCK" | version | count, then "a" first.
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DVCK");
  CHECK(bytes[4] == kCheckpointVersion);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 1);
  CHECK(bytes[14] == 'a');
  CHECK(bytes[15] == 2);  // rank
  const std::size_t expect = 12 + (2 + 1 + 1 + 8 + 8) + (2 + 1 + 1 + 4 + 8);
  CHECK(bytes.size() == expect);

  const auto back = deserialize_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").shape() == Shape{1, 2});
  CHECK(values(back.at("b")) == std::vector<float>{1.5f, -2.0f});

  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(broken), CheckpointError);
  broken = bytes;
  broken.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(broken), CheckpointError);

  duovoce::testing::TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", t);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "m.ckpt")) == bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
}

TEST_CASE("random streams are reproducible and independent") {
  Rng a(derive_seed(5, "init")), b(derive_seed(5, "init"));
  Rng c(derive_seed(5, "mix"));
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.uniform_int(7) < 7);
  }
}
