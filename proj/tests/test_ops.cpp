#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "support.hpp"

#include "auxgen/ops.hpp"
#include "auxgen/rng.hpp"

using namespace auxgen;
using T = Tensor<double>;
using G = Graph<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T::from(std::move(shape), std::move(v));
}

// Reduces an op output to a scalar through fixed random coefficients so every
// output element contributes a distinct gradient.
T project(G& g, const T& out, std::uint64_t seed) {
  Rng rng(seed);
  auto coeff = random_tensor(out.shape(), rng);
  return ops::sum(g, ops::mul(g, out, coeff));
}

void check_op(std::vector<T> inputs, const std::function<T(G&, std::vector<T>&)>& op,
              double tol = 1e-6) {
  auto err = testing::max_input_grad_error(inputs, [&](G& g) { return project(g, op(g, inputs), 99); });
  CHECK(err < tol);
}

}  // namespace

TEST_CASE("elementwise and matrix ops pass finite-difference checks") {
  Rng rng(1);
  auto a = [&] { return random_tensor({3, 4}, rng); };
  check_op({a(), random_tensor({4, 5}, rng)}, [](G& g, auto& x) { return ops::matmul(g, x[0], x[1]); });
  check_op({a(), random_tensor({5, 4}, rng)}, [](G& g, auto& x) { return ops::matmul_nt(g, x[0], x[1]); });
  check_op({a(), random_tensor({2, 4}, rng), random_tensor({2}, rng)},
           [](G& g, auto& x) { return ops::linear(g, x[0], x[1], x[2]); });
  check_op({a(), a()}, [](G& g, auto& x) { return ops::add(g, x[0], x[1]); });
  check_op({a(), a()}, [](G& g, auto& x) { return ops::sub(g, x[0], x[1]); });
  check_op({a(), a()}, [](G& g, auto& x) { return ops::mul(g, x[0], x[1]); });
  check_op({a()}, [](G& g, auto& x) { return ops::scale(g, x[0], -1.7); });
  check_op({a(), random_tensor({4}, rng)}, [](G& g, auto& x) { return ops::add_row(g, x[0], x[1]); });
  check_op({a(), random_tensor({3}, rng)}, [](G& g, auto& x) { return ops::scale_rows(g, x[0], x[1]); });
  check_op({a()}, [](G& g, auto& x) { return ops::tanh(g, x[0]); });
  check_op({a()}, [](G& g, auto& x) { return ops::sigmoid(g, x[0]); });
  check_op({random_tensor({3, 4}, rng, 0.1, 1)}, [](G& g, auto& x) { return ops::relu(g, ops::scale(g, x[0], -1.0)); });
  check_op({random_tensor({3, 4}, rng, 0.1, 1)}, [](G& g, auto& x) { return ops::relu(g, x[0]); });
  check_op({a()}, [](G& g, auto& x) { return ops::transpose(g, x[0]); });
  check_op({a()}, [](G& g, auto& x) { return ops::reshape(g, x[0], {2, 6}); });
  check_op({a()}, [](G& g, auto& x) { return ops::slice_cols(g, x[0], 1, 2); });
  check_op({a(), random_tensor({3, 2}, rng)}, [](G& g, auto& x) { return ops::concat_cols(g, {x[0], x[1]}); });
  check_op({a(), random_tensor({1, 4}, rng)}, [](G& g, auto& x) { return ops::concat_rows(g, {x[0], x[1]}); });
  check_op({a()}, [](G& g, auto& x) { return ops::mean(g, x[0]); });
}

TEST_CASE("indexing ops pass finite-difference checks") {
  Rng rng(2);
  const std::vector<int> index{2, -1, 0, 2};
  check_op({random_tensor({3, 4}, rng)}, [&](G& g, auto& x) { return ops::gather_rows(g, x[0], index); });
  const std::vector<int> group{0, 1, -1, 1, 0};
  check_op({random_tensor({5, 3}, rng)}, [&](G& g, auto& x) { return ops::segment_sum(g, x[0], group, 3); });
  const std::vector<std::uint8_t> take{1, 0, 1};
  check_op({random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
           [&](G& g, auto& x) { return ops::select_rows(g, x[0], x[1], take); });
}

TEST_CASE("normalization, softmax and attention pass finite-difference checks") {
  Rng rng(3);
  auto mask = AttentionMask::open(3, 4);
  mask.block(0, 3);
  mask.block(2, 0);
  check_op({random_tensor({3, 4}, rng)}, [&](G& g, auto& x) { return ops::masked_softmax(g, x[0], mask); });
  check_op({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
           [](G& g, auto& x) { return ops::layer_norm(g, x[0], x[1], x[2]); });

  ops::AttentionShape shape{2, 3, 4, 2};
  auto bm = BatchedMask::closed(2, 3, 4);
  for (std::size_t b = 0; b < 2; ++b) {
    auto m = AttentionMask::open(3, 4);
    m.block(1, b);
    if (b == 1) m.block(2, 3);
    bm.place(b, m);
  }
  check_op({random_tensor({6, 4}, rng), random_tensor({8, 4}, rng), random_tensor({8, 4}, rng)},
           [&](G& g, auto& x) { return ops::attention(g, x[0], x[1], x[2], shape, bm); });
}

TEST_CASE("cross entropy passes finite-difference checks with class limits") {
  Rng rng(4);
  const std::vector<int> target{1, -1, 0, 3};
  const std::vector<double> weight{0.5, 1.0, 2.0, 0.25};
  const std::vector<int> limit{3, 5, 1, 5};
  std::vector<T> in{random_tensor({4, 5}, rng)};
  auto err = testing::max_input_grad_error(in, [&](G& g) {
    return ops::cross_entropy<double>(g, in[0], target, weight, limit);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("weighted sum accumulates in double and back-propagates weights") {
  std::vector<T> in{T::scalar(0.3), T::scalar(-1.2), T::scalar(2.5)};
  const std::vector<double> w{1.0, 0.25, 0.5};
  auto err = testing::max_input_grad_error(in, [&](G& g) { return ops::weighted_sum(g, in, w); });
  CHECK(err < 1e-9);
  double exact = 0;
  auto f = Tensor<float>::scalar(0.1f);
  Graph<float> gf(false);
  const auto out = ops::weighted_sum<float>(gf, {f, f}, {1.0, 2.0}, &exact);
  CHECK(exact == doctest::Approx(3.0 * double(0.1f)).epsilon(1e-15));
  CHECK(out.item() == static_cast<float>(exact));
}

TEST_CASE("cross entropy of uniform logits is log V and limited classes get no mass") {
  G g;
  auto logits = T::zeros({2, 50}, true);
  const std::vector<int> target{7, 2};
  const std::vector<double> weight{0.5, 0.5};
  std::vector<double> nll;
  const auto loss = ops::cross_entropy<double>(g, logits, target, weight, {}, &nll);
  CHECK(loss.item() == doctest::Approx(std::log(50.0)).epsilon(1e-12));
  CHECK(nll[0] == doctest::Approx(std::log(50.0)));

  G g2;
  auto l2 = T::from({1, 4}, {0.0, 0.0, 0.0, 100.0}, true);
  const std::vector<int> t2{1};
  const std::vector<double> w2{1.0};
  const std::vector<int> lim{3};
  const auto loss2 = ops::cross_entropy<double>(g2, l2, t2, w2, lim);
  CHECK(loss2.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  g2.backward(loss2);
  CHECK(l2.grad()[3] == 0.0);
}

TEST_CASE("masked softmax rows that are fully blocked give zeros and are counted") {
  G g;
  auto scores = T::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto mask = AttentionMask::open(2, 2);
  mask.block(1, 0);
  mask.block(1, 1);
  const auto p = ops::masked_softmax(g, scores, mask);
  CHECK(p.at(1, 0) == 0.0);
  CHECK(p.at(1, 1) == 0.0);
  CHECK(p.at(0, 0) + p.at(0, 1) == doctest::Approx(1.0));
  CHECK(g.diagnostics().fully_masked_rows == 1);
}

TEST_CASE("graph contracts") {
  SUBCASE("backward needs a scalar") {
    G g;
    auto x = T::zeros({2, 2}, true);
    auto y = ops::scale(g, x, 2.0);
    CHECK_THROWS_AS(g.backward(y), ContractError);
  }
  SUBCASE("backward runs once") {
    G g;
    auto x = T::scalar(1.0, true);
    auto y = ops::scale(g, x, 3.0);
    g.backward(y);
    CHECK(x.grad()[0] == 3.0);
    CHECK_THROWS_AS(g.backward(y), ContractError);
  }
  SUBCASE("shape mismatches are reported") {
    G g;
    CHECK_THROWS_AS(ops::matmul(g, T::zeros({2, 3}), T::zeros({2, 3})), DimensionError);
    CHECK_THROWS_AS(ops::add(g, T::zeros({2, 3}), T::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(T::from({2, 2}, {1.0}), DimensionError);
  }
  SUBCASE("a disabled graph records nothing") {
    G g(false);
    auto x = T::zeros({2, 2}, true);
    ops::tanh(g, x);
    CHECK(g.size() == 0);
  }
  SUBCASE("shared inputs accumulate gradient from every use") {
    G g;
    auto x = T::scalar(2.0, true);
    auto y = ops::mul(g, x, x);
    g.backward(ops::sum(g, y));
    CHECK(x.grad()[0] == doctest::Approx(4.0));
  }
}
