#include <doctest.h>

#include <cmath>
#include <random>

#include "dense_reference.hpp"
#include "hgp/autodiff.hpp"
#include "hgp/error.hpp"

using namespace hgp;
using namespace hgp::ad;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = u(gen);
  return t;
}

// Contracts an arbitrary output with fixed random weights into a scalar, so
// every output coordinate contributes to the gradient.
Var project(Tape& t, Var y, const Tensor& r) { return reduce_sum(elementwise_mul(y, t.leaf(r))); }

double check(const ScalarFunction& f, const Tensor& x) {
  const auto res = grad_check(f, x);
  CHECK(res.checked > 0);
  return res.max_rel_error;
}

}  // namespace

TEST_CASE("relu example") {
  Tape t;
  Var x = t.leaf(Tensor::vector({-1.0, 0.0, 2.0}), true);
  Var y = relu(x);
  CHECK(y.value() == Tensor::vector({0.0, 0.0, 2.0}));
  Var loss = reduce_sum(y);
  const auto g = t.backward(loss);
  CHECK(g[x] == Tensor::vector({0.0, 0.0, 1.0}));
}

TEST_CASE("softmax of equal logits") {
  Tape t;
  Var y = softmax(t.leaf(Tensor::matrix({{0.0, 0.0}})));
  CHECK(y.value()[0] == 0.5);
  CHECK(y.value()[1] == 0.5);
  // Large logits stay finite.
  Var z = softmax(t.leaf(Tensor::matrix({{1000.0, 0.0, -1000.0}})));
  CHECK(z.value()[0] == doctest::Approx(1.0));
  CHECK(z.value().size() == 3);
}

TEST_CASE("scatter_pool example") {
  Tape t;
  const std::vector<std::size_t> cluster_of{0, 0, 1};
  Var y = scatter_pool(t.leaf(Tensor::matrix({{1.0}, {3.0}, {4.0}})), cluster_of, 2);
  CHECK(y.value() == Tensor::matrix({{4.0}, {4.0}}));
}

TEST_CASE("sum of squares gradient") {
  Tape t;
  Var a = t.leaf(Tensor::vector({1.0, 2.0}), true);
  const auto g = t.backward(reduce_sum(elementwise_mul(a, a)));
  CHECK(g[a] == Tensor::vector({2.0, 4.0}));
}

TEST_CASE("gradient of a plain sum is all ones") {
  std::mt19937_64 gen(1);
  Tape t;
  Var x = t.leaf(random_tensor({3, 4}, gen), true);
  const auto g = t.backward(reduce_sum(x));
  for (double v : g[x].values()) CHECK(v == 1.0);
}

TEST_CASE("tape contracts") {
  SUBCASE("backward twice") {
    Tape t;
    Var x = t.leaf(Tensor::vector({1.0}), true);
    Var y = reduce_sum(x);
    t.backward(y);
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(y), TapeError);
    CHECK_THROWS_AS(relu(x), TapeError);
  }
  SUBCASE("non-scalar loss") {
    Tape t;
    Var x = t.leaf(Tensor::vector({1.0, 2.0}), true);
    CHECK_THROWS_AS(t.backward(x), ContractError);
  }
  SUBCASE("foreign var") {
    Tape a, b;
    Var x = a.leaf(Tensor::vector({1.0}), true);
    Var y = reduce_sum(x);
    CHECK_THROWS_AS(b.backward(y), TapeError);
    Var z = b.leaf(Tensor::vector({1.0}), true);
    CHECK_THROWS_AS(add(x, z), TapeError);
  }
  SUBCASE("shape mismatch") {
    Tape t;
    CHECK_THROWS_AS(add(t.leaf(Tensor({2})), t.leaf(Tensor({3}))), ShapeError);
    CHECK_THROWS_AS(matmul(t.leaf(Tensor({2, 3})), t.leaf(Tensor({2, 3}))), ShapeError);
  }
  SUBCASE("non-finite output names the primitive") {
    Tape t;
    try {
      ad::log(t.leaf(Tensor::vector({0.0})));
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
  }
  SUBCASE("unused requires_grad leaf still gets a zero gradient") {
    Tape t;
    Var x = t.leaf(Tensor::vector({1.0, 2.0}), true);
    Var unused = t.leaf(Tensor::vector({5.0}), true);
    const auto g = t.backward(reduce_sum(x));
    REQUIRE(g.has(unused));
    CHECK(g[unused][0] == 0.0);
  }
}

TEST_CASE("grad_check sanity") {
  std::mt19937_64 gen(4);
  const Tensor x = random_tensor({10}, gen);
  CHECK(check([](Tape&, Var v) { return reduce_sum(elementwise_mul(v, v)); }, x) <= 1e-7);
  // Linear case: central differences are exact up to the rounding of x +- eps,
  // which stays far below the tolerance for inputs of small magnitude.
  const Tensor small = random_tensor({10}, gen, -1e-3, 1e-3);
  const Tensor w = random_tensor({10}, gen, 0.5, 1.5);
  CHECK(check([&](Tape& t, Var v) { return project(t, v, w); }, small) <= 1e-10);
  // A wrong gradient is detected.
  const auto broken = grad_check(
      [](Tape& t, Var v) {
        // scale by 2 in value but record a backward that ignores the factor
        Tensor out = v.value();
        for (double& e : out.values()) e *= 2.0;
        Var y = t.record(OpKind::kScale, out, {v}, [](const Tensor& g, std::span<Tensor* const> in) {
          if (in[0])
            for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k];
        });
        return reduce_sum(y);
      },
      x);
  CHECK(broken.max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("grad_check skips coordinates that straddle a relu kink") {
  const auto res = grad_check([](Tape&, Var v) { return reduce_sum(relu(v)); }, Tensor::vector({1e-8, 1.0, -1.0}));
  CHECK(res.skipped == std::vector<std::size_t>{0});
  CHECK(res.checked == 2);
  CHECK(res.max_rel_error <= 1e-10);
}

TEST_CASE("composite relu(W x) against central differences") {
  std::mt19937_64 gen(5);
  for (int draw = 0; draw < 20; ++draw) {
    const Tensor x = random_tensor({3, 3}, gen);
    const Tensor w = random_tensor({3, 3}, gen);
    // Gradient with respect to W ...
    CHECK(check([&](Tape& t, Var wv) { return reduce_sum(relu(matmul(wv, t.leaf(x)))); }, w) <= 1e-5);
    // ... and with respect to x.
    CHECK(check([&](Tape& t, Var xv) { return reduce_sum(relu(matmul(t.leaf(w), xv))); }, x) <= 1e-5);
  }
}

TEST_CASE("per-primitive gradient checks over random draws") {
  std::mt19937_64 gen(6);
  double worst = 0.0;
  auto record = [&](double e) { worst = std::max(worst, e); };
  for (int draw = 0; draw < 20; ++draw) {
    const Tensor a = random_tensor({4, 3}, gen);
    const Tensor b = random_tensor({4, 3}, gen);
    const Tensor r43 = random_tensor({4, 3}, gen);
    const Tensor m32 = random_tensor({3, 2}, gen);
    const Tensor r42 = random_tensor({4, 2}, gen);
    const Tensor bias = random_tensor({3}, gen);
    const Tensor a3 = random_tensor({2, 4, 3}, gen);
    const Tensor r243 = random_tensor({2, 4, 3}, gen);
    const Tensor r242 = random_tensor({2, 4, 2}, gen);
    const Tensor r123 = random_tensor({12, 3}, gen);
    const Tensor r34 = random_tensor({3, 4}, gen);
    const Tensor r33 = random_tensor({3, 3}, gen);
    const Tensor r233 = random_tensor({2, 3, 3}, gen);

    record(check([&](Tape& t, Var v) { return project(t, matmul(v, t.leaf(m32)), r42); }, a));
    record(check([&](Tape& t, Var v) { return project(t, matmul(t.leaf(a), v), r42); }, m32));
    record(check([&](Tape& t, Var v) { return project(t, matmul(v, t.leaf(m32)), r242); },
                 a3));
    record(check([&](Tape& t, Var v) { return project(t, elementwise_mul(v, t.leaf(b)), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, add(v, t.leaf(b)), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, add_bias(t.leaf(a), v), r43); }, bias));
    record(check([&](Tape& t, Var v) { return project(t, add_bias(v, t.leaf(bias)), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, scale(v, -2.5), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, relu(v), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, sigmoid(v), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, softmax(v), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, softmax(v), r243); }, a3));
    record(check([&](Tape& t, Var v) { return project(t, ad::log(v), r43); }, random_tensor({4, 3}, gen, 0.5, 2.0)));
    record(check([&](Tape&, Var v) { return reduce_mean(elementwise_mul(v, v)); }, a));
    record(check(
        [&](Tape& t, Var v) {
          std::vector<Var> parts{v, t.leaf(b), v};
          return project(t, concat_rows(parts), r123);
        },
        a));
    record(check([&](Tape& t, Var v) { return project(t, reshape(v, {3, 4}), r34); }, a));

    const std::vector<std::size_t> cluster_of{1, 0, 1, 2};
    const Tensor w = random_tensor({4}, gen);
    record(check([&](Tape& t, Var v) { return project(t, scatter_pool(v, cluster_of, 3, t.leaf(w)), r33); },
                 a));
    record(check([&](Tape& t, Var v) { return project(t, scatter_pool(t.leaf(a), cluster_of, 3, v), r33); },
                 w));
    record(check([&](Tape& t, Var v) { return project(t, scatter_pool(v, cluster_of, 3, t.leaf(w)), r233); },
                 a3));

    Rng rng(static_cast<std::uint64_t>(draw));
    const Tensor mask = dropout_mask({4, 3}, 0.3, rng);
    record(check([&](Tape& t, Var v) { return project(t, dropout(v, mask), r43); }, a));

    const auto raw = oracle::random_raw_graph(4, 0.7, gen);
    auto g = std::make_shared<const GeneGraph>(oracle::to_gene_graph(raw));
    const LaplacianOperator lap(g);
    record(check([&](Tape& t, Var v) { return project(t, sparse_apply(v, lap), r43); }, a));
    record(check([&](Tape& t, Var v) { return project(t, sparse_apply(v, lap), r243); }, a3));

    const Tensor gamma = random_tensor({3}, gen, 0.5, 1.5);
    const Tensor beta = random_tensor({3}, gen);
    for (bool train : {true, false}) {
      BatchNormOptions opt;
      opt.train = train;
      opt.update_running_stats = false;
      BatchNormState st{random_tensor({3}, gen), random_tensor({3}, gen, 0.5, 2.0)};
      record(check([&](Tape& t, Var v) { return project(t, batchnorm(v, t.leaf(gamma), t.leaf(beta), st, opt), r43); },
                   a));
      record(check([&](Tape& t, Var v) { return project(t, batchnorm(t.leaf(a), v, t.leaf(beta), st, opt), r43); },
                   gamma));
      record(check([&](Tape& t, Var v) { return project(t, batchnorm(t.leaf(a), t.leaf(gamma), v, st, opt), r43); },
                   beta));
    }

    const std::vector<int> labels3{0, 2, 1, 2};
    const std::vector<double> cw{0.5, 1.0, 2.0};
    record(check([&](Tape&, Var v) { return softmax_cross_entropy(v, labels3, cw); }, a));
    record(check([&](Tape&, Var v) { return softmax_cross_entropy(v, labels3); }, a));
    const std::vector<int> labels2{0, 1, 1, 0};
    const std::vector<double> cw2{0.7, 1.3};
    record(check([&](Tape&, Var v) { return sigmoid_cross_entropy(v, labels2, cw2); }, random_tensor({4, 1}, gen)));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("dropout masks") {
  Rng rng(3);
  const Tensor none = dropout_mask({5, 5}, 0.0, rng);
  for (double v : none.values()) CHECK(v == 1.0);
  Rng rng2(3);
  const Tensor m = dropout_mask({100, 100}, 0.25, rng2);
  double kept = 0.0;
  for (double v : m.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) kept += 1.0;
  }
  CHECK(kept / 10000.0 == doctest::Approx(0.75).epsilon(0.03));
  CHECK_THROWS_AS(dropout_mask({2}, 1.0, rng), ContractError);
}

TEST_CASE("batch norm train mode normalizes the batch") {
  std::mt19937_64 gen(8);
  const Tensor x = random_tensor({16, 4}, gen, -3.0, 7.0);
  BatchNormState st{Tensor({4}, 0.0), Tensor({4}, 1.0)};
  Tape t;
  BatchNormOptions opt;
  opt.epsilon = 0.0;
  opt.update_running_stats = false;
  Var y = batchnorm(t.leaf(x), t.leaf(Tensor({4}, 1.0)), t.leaf(Tensor({4}, 0.0)), st, opt);
  for (std::size_t f = 0; f < 4; ++f) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < 16; ++b) mean += y.value().at(b, f);
    mean /= 16.0;
    for (std::size_t b = 0; b < 16; ++b) var += std::pow(y.value().at(b, f) - mean, 2);
    var /= 16.0;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-8);
  }
  // Running statistics were left alone.
  CHECK(st.running_mean == Tensor({4}, 0.0));
}

TEST_CASE("batch norm running statistics") {
  const Tensor x = Tensor::matrix({{1.0}, {3.0}});
  BatchNormState st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  Tape t;
  BatchNormOptions opt;
  batchnorm(t.leaf(x), t.leaf(Tensor({1}, 1.0)), t.leaf(Tensor({1}, 0.0)), st, opt);
  // mean 2, unbiased variance 2
  CHECK(st.running_mean[0] == doctest::Approx(0.2));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.2));
  // Eval mode uses the stored statistics.
  BatchNormOptions eval;
  eval.train = false;
  Tape t2;
  Var y = batchnorm(t2.leaf(Tensor::matrix({{0.2}})), t2.leaf(Tensor({1}, 2.0)), t2.leaf(Tensor({1}, 0.5)), st, eval);
  CHECK(y.value()[0] == doctest::Approx(0.5));
}

TEST_CASE("kink signature tracks relu branches") {
  Tape a, b;
  relu(a.leaf(Tensor::vector({1.0, -1.0})));
  relu(b.leaf(Tensor::vector({2.0, -0.5})));
  CHECK(a.kink_signature() == b.kink_signature());
  Tape c;
  relu(c.leaf(Tensor::vector({-1.0, -1.0})));
  CHECK(a.kink_signature() != c.kink_signature());
}
