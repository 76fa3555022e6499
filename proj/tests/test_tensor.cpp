#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hivar/ops.hpp"
#include "hivar/optim.hpp"
#include "hivar/tensor.hpp"

using namespace hivar;
using hivar_test::gradcheck;

namespace {
Tensor rand_t(Shape s, Rng& rng) { return Tensor::uniform(std::move(s), rng, -2.0, 2.0); }
}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = Tensor::from_data({1, 2}, {0.0, 0.0});
  Tensor y = softmax_rows(x);
  CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("layer_norm of a constant vector is zero before affine") {
  Tensor x = Tensor::full({1, 8}, 3.7);
  Tensor gamma = Tensor::full({8}, 1.0);
  Tensor beta = Tensor::zeros({8});
  Tensor y = layer_norm(x, gamma, beta);
  for (double v : y.values()) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  Rng rng(7);
  Tensor x = rand_t({1, 5, 4}, rng);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 5, 4});
  for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("backward of sum gives all-ones") {
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}).set_requires_grad(true);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x^2)/2 at x=[1,2] gives [1,2]") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  backward(scale(sum_sq(x), 0.5));
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
}

TEST_CASE("NaN and Inf are detectable") {
  Tensor x = Tensor::from_data({2}, {1.0, std::nan("")});
  CHECK_FALSE(x.all_finite());
  Tensor y = Tensor::from_data({2}, {1.0, INFINITY});
  CHECK_FALSE(y.all_finite());
  CHECK(Tensor::from_data({2}, {1.0, -2.0}).all_finite());
}

TEST_CASE("gradient check: elementwise and activation ops") {
  Rng rng(11);
  Tensor a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng);
  CHECK(gradcheck({a, b}, [&] { return sum_all(mul(add(a, b), sub(a, b))); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return sum_all(gelu(a)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return sum_all(sigmoid(a)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return sum_all(softplus(a)); }) < 1e-6);
  CHECK(gradcheck({a}, [&] { return mean_all(scale(add_scalar(a, 0.3), -1.7)); }) < 1e-6);
  // keep |x| well away from the kink for the abs check
  Tensor c = Tensor::from_data({4}, {1.5, -0.8, 2.0, -1.1});
  CHECK(gradcheck({c}, [&] { return sum_all(abs_t(c)); }) < 1e-6);
}

TEST_CASE("gradient check: matmul family") {
  Rng rng(13);
  Tensor a = rand_t({3, 5}, rng), b = rand_t({5, 4}, rng), bt = rand_t({4, 5}, rng);
  Tensor w = rand_t({5, 4}, rng), bias = rand_t({4}, rng);
  CHECK(gradcheck({a, b}, [&] { return sum_sq(matmul(a, b)); }) < 1e-6);
  CHECK(gradcheck({a, bt}, [&] { return sum_sq(matmul_nt(a, bt)); }) < 1e-6);
  CHECK(gradcheck({a, w, bias}, [&] { return sum_sq(linear(a, w, bias)); }) < 1e-6);
}

TEST_CASE("gradient check: conv2d stride and padding variants") {
  Rng rng(17);
  Tensor x = rand_t({2, 6, 5}, rng);
  Tensor w = rand_t({3, 2, 3, 3}, rng);
  Tensor b = rand_t({3}, rng);
  CHECK(gradcheck({x, w, b}, [&] { return sum_sq(conv2d(x, w, b, 1, 1)); }) < 1e-6);
  CHECK(gradcheck({x, w, b}, [&] { return sum_sq(conv2d(x, w, b, 2, 1)); }) < 1e-6);
  Tensor w2 = rand_t({2, 2, 1, 1}, rng);
  Tensor b2 = rand_t({2}, rng);
  CHECK(gradcheck({x, w2, b2}, [&] { return sum_sq(conv2d(x, w2, b2, 1, 0)); }) < 1e-6);
}

TEST_CASE("gradient check: normalization and softmax ops") {
  Rng rng(19);
  Tensor x = rand_t({4, 6}, rng), g = rand_t({6}, rng), be = rand_t({6}, rng);
  CHECK(gradcheck({x, g, be}, [&] { return sum_sq(layer_norm(x, g, be)); }) < 1e-6);
  Tensor xc = rand_t({4, 3, 5}, rng), gc = rand_t({4}, rng), bc = rand_t({4}, rng);
  CHECK(gradcheck({xc, gc, bc}, [&] { return sum_sq(group_norm(xc, 2, gc, bc)); }) < 1e-6);
  Tensor s = rand_t({3, 5}, rng);
  CHECK(gradcheck({s}, [&] { return sum_sq(softmax_rows(s)); }) < 1e-6);
  CHECK(gradcheck({s}, [&] { return sum_sq(log_softmax_rows(s)); }) < 1e-6);
}

TEST_CASE("gradient check: embedding, pick, shape ops") {
  Rng rng(23);
  Tensor table = rand_t({7, 3}, rng);
  std::vector<std::int32_t> idx{0, 6, 2, 2, 5};
  CHECK(gradcheck({table}, [&] { return sum_sq(embed_lookup(table, idx)); }) < 1e-6);

  Tensor x = rand_t({4, 5}, rng);
  std::vector<std::int32_t> cols{1, 4, 0, 3};
  CHECK(gradcheck({x}, [&] { return sum_sq(pick(x, cols)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return sum_sq(slice_rows(x, 1, 3)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return sum_sq(slice_cols(x, 2, 5)); }) < 1e-6);
  CHECK(gradcheck({x}, [&] { return sum_sq(reshape(x, {2, 10})); }) < 1e-6);

  Tensor y = rand_t({2, 5}, rng);
  CHECK(gradcheck({x, y}, [&] { return sum_sq(concat_rows({x, y})); }) < 1e-6);
  Tensor z = rand_t({4, 2}, rng);
  CHECK(gradcheck({x, z}, [&] { return sum_sq(concat_cols({x, z})); }) < 1e-6);
  Tensor r = rand_t({1, 6}, rng);
  CHECK(gradcheck({r}, [&] { return sum_sq(tile_rows(r, 5)); }) < 1e-6);
  Tensor v = rand_t({5}, rng);
  CHECK(gradcheck({x, v}, [&] { return sum_sq(add_rowvec(x, v)); }) < 1e-6);

  Tensor chw = rand_t({3, 2, 4}, rng);
  CHECK(gradcheck({chw}, [&] { return sum_sq(chw_to_rows(chw)); }) < 1e-6);
  Tensor rows = rand_t({8, 3}, rng);
  CHECK(gradcheck({rows}, [&] { return sum_sq(rows_to_chw(rows, 2, 4)); }) < 1e-6);
}

TEST_CASE("stopgrad blocks the gradient path") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor st = add(x, stopgrad(scale(x, 3.0)));
  backward(sum_all(st));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("shape errors name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("adamw: first step moves a unit-grad scalar by about lr") {
  // hand evaluation: m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  Parameter p("w", Tensor::scalar(2.0));
  p.tensor.grad_mut()[0] = 1.0;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({&p}, cfg);
  opt.step();
  CHECK(p.tensor.item() == doctest::Approx(2.0 - 0.1).epsilon(1e-7));
}

TEST_CASE("adamw: zero grad and zero decay leave the parameter unchanged") {
  Parameter p("w", Tensor::scalar(1.25));
  p.tensor.grad_mut()[0] = 0.0;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({&p}, cfg);
  opt.step();
  opt.step();
  CHECK(p.tensor.item() == 1.25);
}

TEST_CASE("adamw: two steps with constant grad match the closed form") {
  // spreadsheet oracle for g=0.5, lr=0.01, betas (0.9, 0.95), eps 1e-8, wd 0.004:
  //   t=1: m=0.05   v=0.0125   mh=0.5 vh=0.5
  //   t=2: m=0.095  v=0.024375 mh=0.5 vh=0.25
  double g = 0.5, lr = 0.01, b1 = 0.9, b2 = 0.95, eps = 1e-8, wd = 0.004;
  double w = 3.0;
  double m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    w -= lr * (mh / (std::sqrt(vh) + eps) + wd * w);
  }

  Parameter p("w", Tensor::scalar(3.0));
  AdamWConfig cfg{lr, b1, b2, eps, wd};
  AdamW opt({&p}, cfg);
  for (int t = 0; t < 2; ++t) {
    p.tensor.zero_grad();
    p.tensor.grad_mut()[0] = g;
    opt.step();
  }
  CHECK(p.tensor.item() == doctest::Approx(w).epsilon(1e-14));
}

TEST_CASE("adamw: missing gradient on a trainable parameter is an error") {
  Parameter p("w", Tensor::scalar(1.0));
  AdamW opt({&p}, {});
  CHECK_THROWS_AS(opt.step(), Error);
}

TEST_CASE("adamw: frozen parameters receive no updates") {
  Parameter p("w", Tensor::scalar(1.0));
  p.set_trainable(false);
  AdamW opt({&p}, {});
  opt.step();
  CHECK(p.tensor.item() == 1.0);
}

TEST_CASE("duplicate parameter names are rejected") {
  Parameter a("w", Tensor::scalar(1.0)), b("w", Tensor::scalar(2.0));
  CHECK_THROWS_AS(check_unique_names({&a, &b}), Error);
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 6}, rng);
    x.set_requires_grad(true);
    Tensor w = Tensor::randn({6, 3}, rng).set_requires_grad(true);
    Tensor y = gelu(matmul(x, w));
    Tensor loss = sum_sq(layer_norm(y, Tensor::full({3}, 1.0), Tensor::zeros({3})));
    backward(loss);
    std::vector<double> out = y.values();
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run(42) == run(42));
}
