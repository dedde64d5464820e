#include <catch_amalgamated.hpp>

#include <unmt/gradcheck.hpp>
#include <unmt/rng.hpp>
#include <unmt/tensor.hpp>

#include <cmath>

using namespace unmt;
using Catch::Approx;
using TD = Tensor<double>;

namespace {

TD rand_tensor(Shape s, Rng& rng, bool rg = true, double range = 1.0) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = rng.uniform(-range, range);
  return TD(std::move(s), std::move(v), rg);
}

void expect_gradcheck(const std::function<TD()>& f, std::vector<TD> params) {
  const auto rep = grad_check(f, std::move(params), 1e-4, 64);
  INFO("worst param " << rep.worst_param << " index " << rep.worst_index << " analytic " << rep.worst_analytic
                      << " numeric " << rep.worst_numeric);
  CHECK(rep.max_rel_error <= 1e-6);
  CHECK(rep.checked > 0);
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand", "[tensor]") {
  Tensor<float> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<float> a({3, 2}, {1, 2, 3, 4, 5, 6});
  auto r = matmul(eye, a);
  REQUIRE(r.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 6; ++i) CHECK(r[i] == a[i]);
}

TEST_CASE("softmax of equal logits is uniform", "[tensor]") {
  auto s = softmax(Tensor<double>({1, 2}, {0, 0}));
  CHECK(s[0] == Approx(0.5));
  CHECK(s[1] == Approx(0.5));
}

TEST_CASE("masked softmax gives zero past the row length", "[tensor]") {
  auto s = softmax(Tensor<double>({2, 3}, {1, 2, 3, 1, 2, 3}), {2, 3});
  CHECK(s[2] == 0.0);
  CHECK(s[0] + s[1] == Approx(1.0));
  CHECK(s[3] + s[4] + s[5] == Approx(1.0));
}

TEST_CASE("cross entropy of uniform logits is ln 2", "[tensor]") {
  auto l = cross_entropy(Tensor<double>({1, 2}, {0, 0}), {0});
  CHECK(l[0] == Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(l[0] - 0.6931) < 1e-4);
}

TEST_CASE("cross entropy ignores the padding target", "[tensor]") {
  TD logits({2, 3}, {1, 2, 3, 3, 2, 1}, true);
  auto l = cross_entropy(logits, {2, 0}, 0);
  CHECK(l[1] == 0.0);
  backward(sum(l));
  for (std::size_t j = 3; j < 6; ++j) CHECK(logits.grad()[j] == 0.0);
}

TEST_CASE("derivative of x*x at 3 is 6", "[tensor][backward]") {
  TD x({1}, {3.0}, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("derivative of sum(sigmoid(x)) at 0 is 1/4", "[tensor][backward]") {
  TD x = TD::zeros({4}, true);
  backward(sum(sigmoid(x)));
  for (double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("gradients accumulate across uses: x + x has gradient 2", "[tensor][backward]") {
  TD x({3}, {0.5, -1.0, 2.0}, true);
  backward(sum(add(x, x)));
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward rejects non-scalar losses", "[tensor][backward]") {
  TD x({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
}

TEST_CASE("shape mismatch names the operation and both shapes", "[tensor]") {
  TD a = TD::zeros({2, 3}), b = TD::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(TD::zeros({2}), TD::zeros({3})), DimensionError);
  CHECK_THROWS_AS(mul(TD::zeros({2, 2}), TD::zeros({4})), DimensionError);
}

TEST_CASE("grad_check on x^2 at 2", "[gradcheck]") {
  TD x({1}, {2.0}, true);
  const auto rep = grad_check([&] { return mul(x, x); }, {x});
  CHECK(rep.max_rel_error <= 1e-8);
}

TEST_CASE("grad_check reports non-finite values", "[gradcheck]") {
  TD x({1}, {0.0}, true);
  CHECK_THROWS_AS(grad_check([&] { return scale(x, std::numeric_limits<double>::quiet_NaN()); }, {x}), NumericError);
}

TEST_CASE("every primitive matches central differences", "[gradcheck]") {
  Rng rng(11);
  auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 5}, rng), c = rand_tensor({3, 4}, rng);
  auto bias = rand_tensor({4}, rng);
  // fixed random projection turns non-scalar outputs into a scalar
  auto proj = [&](const TD& t) {
    Rng r(99);
    std::vector<double> w(t.size());
    for (auto& x : w) x = r.uniform(-1, 1);
    return weighted_sum(t, w);
  };

  SECTION("matmul") { expect_gradcheck([&] { return proj(matmul(a, b)); }, {a, b}); }
  SECTION("add / sub / mul / scale") {
    expect_gradcheck([&] { return proj(mul(add(a, c), sub(scale(a, 0.5), c))); }, {a, c});
  }
  SECTION("add_bias") { expect_gradcheck([&] { return proj(add_bias(a, bias)); }, {a, bias}); }
  SECTION("sigmoid / tanh") { expect_gradcheck([&] { return proj(tanh(sigmoid(a))); }, {a}); }
  SECTION("relu / leaky_relu away from the kink") {
    auto x = TD({2, 3}, {0.5, -0.7, 1.2, -0.3, 0.9, -1.5}, true);
    expect_gradcheck([&] { return proj(add(relu(x), leaky_relu(x, 0.2))); }, {x});
  }
  SECTION("softmax, masked and unmasked") {
    expect_gradcheck([&] { return proj(softmax(a)); }, {a});
    expect_gradcheck([&] { return proj(softmax(a, {4, 2, 3})); }, {a});
  }
  SECTION("cross_entropy") { expect_gradcheck([&] { return sum(cross_entropy(a, {0, 3, 1})); }, {a}); }
  SECTION("bce_with_logits") {
    expect_gradcheck([&] { return sum(bce_with_logits(a, std::vector<double>(12, 0.9))); }, {a});
  }
  SECTION("sum / mean / weighted_sum") {
    expect_gradcheck([&] { return add(mean(mul(a, a)), proj(a)); }, {a});
  }
  SECTION("embedding with repeated ids") {
    expect_gradcheck([&] { return proj(embedding(a, {2, 0, 2, 1})); }, {a});
  }
  SECTION("concat / slice_cols") {
    expect_gradcheck([&] { return proj(slice_cols(concat<double>({a, c, a}), 2, 9)); }, {a, c});
  }
  SECTION("select_rows / where_rows / mask_rows") {
    expect_gradcheck([&] { return proj(select_rows(where_rows({1, 0, 1}, a, c), {2, 2, 0})); }, {a, c});
    expect_gradcheck([&] { return proj(mask_rows(a, {0, 1, 1})); }, {a});
  }
  SECTION("stack_steps / rows_dot / weighted_rows") {
    auto h = rand_tensor({2, 4}, rng);
    auto s0 = rand_tensor({2, 4}, rng), s1 = rand_tensor({2, 4}, rng), s2 = rand_tensor({2, 4}, rng);
    expect_gradcheck(
        [&] {
          auto keys = stack_steps<double>({s0, s1, s2});
          auto w = softmax(rows_dot(h, keys), {3, 2});
          return proj(weighted_rows(w, keys));
        },
        {h, s0, s1, s2});
  }
}

TEST_CASE("forward and backward are bitwise deterministic", "[tensor]") {
  auto run = [] {
    Rng rng(5);
    auto a = rand_tensor({8, 16}, rng), b = rand_tensor({16, 8}, rng);
    auto l = sum(tanh(matmul(a, b)));
    backward(l);
    std::vector<double> out{l.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("operations on constants record no graph", "[tensor]") {
  TD a({2}, {1, 2}), b({2}, {3, 4});
  auto c = add(a, b);
  CHECK_FALSE(c.requires_grad());
  CHECK(c.node()->parents.empty());
}
