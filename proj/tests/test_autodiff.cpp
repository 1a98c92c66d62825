#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "autoview/autodiff.hpp"
#include "autoview/rng.hpp"
#include "testutil.hpp"

using namespace autoview;
using VarD = Var<double>;
using TD = Tensor<double>;

TEST_CASE("softmax of equal logits is uniform") {
  auto x = VarD::constant(TD(Shape{3}, {0.0, 0.0, 0.0}));
  auto y = softmax_last(x);
  for (int i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("lerp with weight zero returns the first argument") {
  auto rng = rng_stream(11, {0});
  auto a = VarD::constant(TD::rand(Shape{4, 5}, rng, 0.1, 0.9));
  auto b = VarD::constant(TD::rand(Shape{4, 5}, rng, 0.1, 0.9));
  auto y = lerp(a, b, 0.0);
  CHECK(testutil::bitwise_equal(y.value(), a.value()));
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  auto rng = rng_stream(42, {1});
  TD logits = TD::randn(Shape{5}, rng);
  TD target = TD(Shape{5});
  // random probability vector as target
  double z = 0;
  for (int i = 0; i < 5; ++i) {
    target[i] = uniform(rng, 0.05, 1.0);
    z += target[i];
  }
  for (int i = 0; i < 5; ++i) target[i] /= z;

  auto loss_of = [&](const VarD& x) {
    auto p = softmax_last(x);
    auto t = VarD::constant(target);
    return neg(sum(mul(t, log(p))));
  };
  auto x = VarD::param(logits, "x");
  auto loss = loss_of(x);
  backward(loss);

  auto fd = testutil::finite_diff([&] { return loss_of(VarD::constant(logits)).value().item(); },
                                  logits);
  auto rep = testutil::compare_close(x.grad(), fd, 1e-6, 1e-9);
  CHECK_MESSAGE(rep.ok, "max_rel=", rep.max_rel);
}

TEST_CASE("stop_grad: identity forward, zero gradient upstream") {
  auto rng = rng_stream(7, {2});
  TD xv = TD::randn(Shape{6}, rng);

  SUBCASE("forward is bitwise identity") {
    auto x = VarD::param(xv, "x");
    CHECK(testutil::bitwise_equal(stop_grad(x).value(), xv));
  }
  SUBCASE("d(stop_grad(x) * x)/dx equals x, not 2x") {
    auto x = VarD::param(xv, "x");
    auto loss = sum(mul(stop_grad(x), x));
    backward(loss);
    CHECK(testutil::all_close(x.grad(), xv, 1e-12));
  }
  SUBCASE("loss of only stopped values leaves gradient zero") {
    auto x = VarD::param(xv, "x");
    auto loss = sum(stop_grad(x));
    backward(loss);
    CHECK(x.grad().data.abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("grad_reverse: identity forward, negated gradient") {
  auto rng = rng_stream(7, {3});
  TD xv = TD::randn(Shape{6}, rng);

  SUBCASE("forward is bitwise identity") {
    auto x = VarD::param(xv, "x");
    CHECK(testutil::bitwise_equal(grad_reverse(x, 1.0).value(), xv));
  }
  SUBCASE("d sum(grad_reverse(x))/dx is -1 everywhere") {
    auto x = VarD::param(xv, "x");
    backward(sum(grad_reverse(x, 1.0)));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == -1.0);
  }
  SUBCASE("gradient equals exact negation of the graph without it") {
    // same nonlinear composite, with and without the reversal node
    auto run = [&](bool reversed) {
      auto x = VarD::param(xv, "x");
      auto h = reversed ? grad_reverse(x, 1.0) : x;
      auto loss = sum(mul(sigmoid(h), exp(mul(h, 0.5))));
      backward(loss);
      return x.grad();
    };
    CHECK(testutil::bitwise_negation(run(false), run(true)));
  }
}

TEST_CASE("straight_through: hard forward, transparent backward") {
  TD soft_v(Shape{3}, {0.2, 0.5, 0.3});
  TD hard = TD::one_hot(3, 1);
  auto soft = VarD::param(soft_v, "soft");
  auto st = straight_through(hard, soft);
  CHECK(testutil::bitwise_equal(st.value(), hard));
  TD w(Shape{3}, {3.0, -1.0, 2.0});
  backward(sum(mul(st, VarD::constant(w))));
  CHECK(testutil::all_close(soft.grad(), w, 1e-15));
}

TEST_CASE("backward on sum gives ones; disconnected leaf stays zero") {
  auto rng = rng_stream(9, {4});
  auto x = VarD::param(TD::randn(Shape{2, 3}, rng), "x");
  auto other = VarD::param(TD::randn(Shape{4}, rng), "other");
  backward(sum(x));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
  CHECK_FALSE(other.has_grad());
  CHECK(other.grad().data.abs().maxCoeff() == 0.0);
}

TEST_CASE("backward error contracts") {
  auto rng = rng_stream(9, {5});
  auto x = VarD::param(TD::randn(Shape{3}, rng), "x");
  SUBCASE("non-scalar loss") { CHECK_THROWS_AS(backward(mul(x, 2.0)), GraphStateError); }
  SUBCASE("double backward without reset") {
    auto loss = sum(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), GraphStateError);
  }
}

TEST_CASE("shape mismatch raises a configuration error") {
  auto a = VarD::constant(TD::zeros(Shape{2, 3}));
  auto b = VarD::constant(TD::zeros(Shape{2, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("checked mode names the offending node") {
  checked_mode() = true;
  auto x = VarD::constant(TD(Shape{2}, {1.0, -1.0}));
  bool threw = false;
  try {
    auto inf = exp(mul(x, 1e9));  // overflows to +inf on the first lane
    (void)inf;
  } catch (const NumericError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
  checked_mode() = false;
  CHECK(threw);
}

TEST_CASE("trailing-suffix broadcasting") {
  auto a = VarD::param(TD(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), "a");
  auto b = VarD::param(TD(Shape{3}, {10, 20, 30}), "b");
  auto y = add(a, b);
  CHECK(y.value()[0] == 11.0);
  CHECK(y.value()[5] == 36.0);
  backward(sum(y));
  CHECK(b.grad()[0] == 2.0);  // summed over the leading dim
  CHECK(a.grad()[0] == 1.0);

  SUBCASE("scalar broadcast both sides") {
    auto s = VarD::param(TD::scalar(2.0), "s");
    auto z = mul(a, s);
    backward(sum(z));
    CHECK(s.grad()[0] == doctest::Approx(21.0));
  }
  SUBCASE("non-suffix shapes are rejected") {
    auto c = VarD::constant(TD::zeros(Shape{2}));
    CHECK_THROWS_AS(add(a, c), ShapeError);
  }
}

TEST_CASE("three-layer MLP gradients match finite differences") {
  auto rng = rng_stream(1234, {6});
  const int64_t in = 6, h1 = 8, h2 = 7, out = 4, batch = 3;
  TD x = TD::randn(Shape{batch, in}, rng);
  TD w1 = TD::randn(Shape{in, h1}, rng, 0.5), b1 = TD::randn(Shape{h1}, rng, 0.1);
  TD w2 = TD::randn(Shape{h1, h2}, rng, 0.5), b2 = TD::randn(Shape{h2}, rng, 0.1);
  TD w3 = TD::randn(Shape{h2, out}, rng, 0.5), b3 = TD::randn(Shape{out}, rng, 0.1);

  auto eval = [&](bool with_params, std::vector<VarD>* params) -> VarD {
    auto mk = [&](TD& t, const char* name) {
      auto v = with_params ? VarD::param(t, name) : VarD::constant(t);
      if (params) params->push_back(v);
      return v;
    };
    auto X = VarD::constant(x);
    auto W1 = mk(w1, "w1"), B1 = mk(b1, "b1");
    auto W2 = mk(w2, "w2"), B2 = mk(b2, "b2");
    auto W3 = mk(w3, "w3"), B3 = mk(b3, "b3");
    auto z1 = gelu(add(matmul(X, W1), B1));
    auto z2 = relu(add(matmul(z1, W2), B2));
    auto z3 = add(matmul(z2, W3), B3);
    return mean(mul(softmax_last(z3), z3));
  };

  std::vector<VarD> params;
  auto loss = eval(true, &params);
  backward(loss);

  std::vector<TD*> tensors = {&w1, &b1, &w2, &b2, &w3, &b3};
  for (size_t i = 0; i < tensors.size(); ++i) {
    auto fd = testutil::finite_diff([&] { return eval(false, nullptr).value().item(); },
                                    *tensors[i]);
    auto rep = testutil::compare_close(params[i].grad(), fd, 1e-4, 1e-7);
    CHECK_MESSAGE(rep.ok, "param ", i, " max_rel=", rep.max_rel, " max_abs=", rep.max_abs);
  }
}

TEST_CASE("gradient-check property over the op set") {
  // every composite op the higher layers rely on, 20 random instances each
  auto rng = rng_stream(777, {8});
  struct OpCase {
    const char* name;
    std::function<VarD(const VarD&)> apply;
    double lo, hi;
  };
  TD gamma = TD::ones(Shape{5});
  TD beta = TD::zeros(Shape{5});
  TD kernel(Shape{3, 3});
  kernel.data.setConstant(1.0 / 9.0);
  std::vector<OpCase> cases = {
      {"exp", [](const VarD& x) { return exp(x); }, -1.0, 1.0},
      {"log", [](const VarD& x) { return log(x); }, 0.1, 2.0},
      {"sigmoid", [](const VarD& x) { return sigmoid(x); }, -3.0, 3.0},
      {"relu", [](const VarD& x) { return relu(x); }, 0.05, 1.0},
      {"gelu", [](const VarD& x) { return gelu(x); }, -2.0, 2.0},
      {"softmax", [](const VarD& x) { return softmax_last(x); }, -2.0, 2.0},
      {"clamp", [](const VarD& x) { return clamp(x, 0.25, 0.75); }, 0.3, 0.7},
      {"l2norm", [](const VarD& x) { return l2_normalize_rows(x); }, 0.2, 1.0},
      {"layernorm",
       [&](const VarD& x) { return layer_norm(x, VarD::constant(gamma), VarD::constant(beta)); },
       -1.0, 1.0},
      {"mean_axis", [](const VarD& x) { return mean(x, 1); }, -1.0, 1.0},
      {"sum_axis", [](const VarD& x) { return sum(x, 0); }, -1.0, 1.0},
      {"div", [](const VarD& x) { return div(VarD::scalar(1.0), x); }, 0.5, 2.0},
  };
  for (const auto& c : cases) {
    for (int inst = 0; inst < 20; ++inst) {
      TD xv = TD::rand(Shape{4, 5}, rng, c.lo, c.hi);
      // random linear functional over whatever shape the op emits
      TD w = TD::randn(c.apply(VarD::constant(xv)).shape(), rng);
      auto eval = [&](const VarD& x) { return sum(mul(c.apply(x), VarD::constant(w))); };
      auto x = VarD::param(xv, "x");
      backward(eval(x));
      auto fd = testutil::finite_diff([&] { return eval(VarD::constant(xv)).value().item(); }, xv);
      auto rep = testutil::compare_close(x.grad(), fd, 1e-4, 1e-7);
      CHECK_MESSAGE(rep.ok, c.name, " instance ", inst, " max_rel=", rep.max_rel);
      if (!rep.ok) break;
    }
  }

  SUBCASE("conv2d_depthwise") {
    for (int inst = 0; inst < 20; ++inst) {
      TD xv = TD::rand(Shape{2, 5, 5}, rng);
      TD w = TD::randn(Shape{2, 5, 5}, rng);
      auto eval = [&](const VarD& x) {
        return sum(mul(conv2d_depthwise(x, kernel), VarD::constant(w)));
      };
      auto x = VarD::param(xv, "x");
      backward(eval(x));
      auto fd = testutil::finite_diff([&] { return eval(VarD::constant(xv)).value().item(); }, xv);
      CHECK(testutil::all_close(x.grad(), fd, 1e-4, 1e-7));
    }
  }
  SUBCASE("matmul family") {
    for (int inst = 0; inst < 20; ++inst) {
      TD av = TD::randn(Shape{2, 3, 4}, rng);
      TD bv = TD::randn(Shape{2, 4, 3}, rng);
      TD btv = TD::randn(Shape{2, 5, 4}, rng);
      auto eval = [&](bool grad) {
        auto a = grad ? VarD::param(av, "a") : VarD::constant(av);
        auto b = VarD::constant(bv);
        auto bt = VarD::constant(btv);
        auto y = add(bmm(a, b), 0.0);
        auto z = bmm_nt(a, bt);
        return std::make_pair(add(sum(y), sum(mul(z, 0.3))), a);
      };
      auto [loss, a] = eval(true);
      backward(loss);
      auto fd = testutil::finite_diff([&] { return eval(false).first.value().item(); }, av);
      CHECK(testutil::all_close(a.grad(), fd, 1e-4, 1e-7));
    }
  }
  SUBCASE("shape ops") {
    TD xv = TD::randn(Shape{2, 3, 4}, rng);
    TD w = TD::randn(Shape{24}, rng);
    auto eval = [&](const VarD& x) {
      auto p = permute(x, {2, 0, 1});
      auto r = reshape(p, Shape{24});
      auto sel = select(x, 1, 1);  // (2,4)
      return add(sum(mul(r, VarD::constant(w))), mul(sum(sel), 0.7));
    };
    auto x = VarD::param(xv, "x");
    backward(eval(x));
    auto fd = testutil::finite_diff([&] { return eval(VarD::constant(xv)).value().item(); }, xv);
    CHECK(testutil::all_close(x.grad(), fd, 1e-4, 1e-7));
  }
  SUBCASE("stack and select compose") {
    TD a1 = TD::randn(Shape{3}, rng), a2 = TD::randn(Shape{3}, rng);
    auto v1 = VarD::param(a1, "v1");
    auto v2 = VarD::param(a2, "v2");
    auto st = stack0(std::vector<VarD>{v1, v2});
    backward(sum(mul(select(st, 0, 1), 2.0)));
    CHECK(v1.grad().data.abs().maxCoeff() == 0.0);
    CHECK(v2.grad()[0] == 2.0);
  }
}

TEST_CASE("forward determinism under a fixed seed") {
  auto run = [] {
    auto rng = rng_stream(2024, {0});
    auto x = VarD::constant(TD::randn(Shape{8, 8}, rng));
    auto w = VarD::constant(TD::randn(Shape{8, 8}, rng));
    return mean(softmax_last(matmul(x, w))).value().item();
  };
  const double a = run(), b = run();
  CHECK(a == b);
}
