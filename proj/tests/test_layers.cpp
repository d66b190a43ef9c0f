#include <doctest.h>

#include <cmath>

#include "core/errors.hpp"
#include "core/layers.hpp"
#include "test_util.hpp"

using namespace peft;
using namespace peft::testing;

namespace {

void randomize(Param<double>& p, std::mt19937_64& rng, double scale = 0.5) {
  p.value = random_tensor<double>(p.value.shape(), rng, -scale, scale);
}

Linear<double> random_linear(std::size_t in, std::size_t out, const std::string& name, std::mt19937_64& rng) {
  Linear<double> l(in, out, name);
  randomize(l.weight, rng);
  randomize(l.bias, rng);
  return l;
}

AttentionLayer<double> random_attention(std::size_t d, std::size_t h, std::mt19937_64& rng) {
  AttentionLayer<double> a(d, h, "attn");
  for (auto* l : {&a.q_proj, &a.k_proj, &a.v_proj, &a.out_proj}) {
    randomize(l->weight, rng);
    randomize(l->bias, rng);
  }
  return a;
}

}  // namespace

TEST_CASE("linear: identity weight passes input through") {
  Linear<float> l(3, 3, "id");
  for (std::size_t i = 0; i < 3; ++i) l.weight.value.at(i, i) = 1.0f;
  const Tensor x = Tensor::matrix({{1, 2, 3}, {-4, 5, 0.5f}});
  CHECK(l.forward(x) == x);
  CHECK_THROWS_AS(l.forward(Tensor({2, 4})), ShapeError);
}

TEST_CASE("linear: gradients match central differences") {
  std::mt19937_64 rng(1);
  Linear<double> l = random_linear(6, 4, "fc", rng);
  Tensor64 x = random_tensor<double>({5, 6}, rng);
  const Tensor64 w = random_tensor<double>({5, 4}, rng);
  auto loss = [&] { return weighted_sum(l.forward(x), w); };

  Tensor64 dx;
  const GradReport r = check_param_grads({&l.weight, &l.bias}, loss, [&] { dx = l.backward(x, w); });
  CHECK(r.worst <= 1e-6);
  CHECK(grad_rel_err(dx, numeric_grad(x, loss)) <= 1e-6);
}

TEST_CASE("linear: frozen parameters keep zero gradients") {
  std::mt19937_64 rng(2);
  Linear<double> l = random_linear(6, 4, "fc", rng);
  l.weight.trainable = false;
  const Tensor64 x = random_tensor<double>({3, 6}, rng), dy = random_tensor<double>({3, 4}, rng);
  l.backward(x, dy);
  CHECK(max_abs(l.weight.grad) == 0.0);
  CHECK(max_abs(l.bias.grad) > 0.0);
  l.bias.trainable = false;
  l.bias.zero_grad();
  l.backward(x, dy);
  CHECK(max_abs(l.bias.grad) == 0.0);
}

TEST_CASE("layer norm: gradient check and normalization") {
  std::mt19937_64 rng(3);
  LayerNorm<double> ln(7, "ln");
  randomize(ln.scale, rng, 1.5);
  randomize(ln.shift, rng);
  Tensor64 x = random_tensor<double>({4, 7}, rng, -3, 3);
  const Tensor64 w = random_tensor<double>({4, 7}, rng);
  auto loss = [&] { return weighted_sum(ln.forward(x, nullptr), w); };
  Tensor64 dx;
  const GradReport r = check_param_grads({&ln.scale, &ln.shift}, loss, [&] {
    typename LayerNorm<double>::Cache c;
    ln.forward(x, &c);
    dx = ln.backward(c, w);
  });
  CHECK(r.worst <= 1e-5);
  CHECK(grad_rel_err(dx, numeric_grad(x, loss)) <= 1e-5);

  LayerNorm<double> plain(7, "plain");
  const Tensor64 y = plain.forward(x, nullptr);
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 7; ++j) mean += y.at(i, j) / 7.0;
    for (std::size_t j = 0; j < 7; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean) / 7.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("gelu: exact erf form and gradient") {
  const Tensor64 x = Tensor64::vector({-2.0, -0.5, 0.0, 0.5, 3.0});
  const Tensor64 y = gelu_forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y[i] == doctest::Approx(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)))).epsilon(1e-15));
  std::mt19937_64 rng(4);
  Tensor64 z = random_tensor<double>({3, 5}, rng, -3, 3);
  const Tensor64 w = random_tensor<double>({3, 5}, rng);
  auto loss = [&] { return weighted_sum(gelu_forward(z), w); };
  CHECK(grad_rel_err(gelu_backward(z, w), numeric_grad(z, loss)) <= 1e-5);
}

TEST_CASE("softmax: uniform on constants, rows sum to one, gradient") {
  const Tensor s = softmax_rows(Tensor({2, 5}, 3.25f));
  for (float v : s.data()) CHECK(v == doctest::Approx(0.2f).epsilon(1e-6));

  std::mt19937_64 rng(5);
  const Tensor big = random_tensor<float>({16, 33}, rng, -30, 30);
  const Tensor p = softmax_rows(big);
  for (std::size_t i = 0; i < 16; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 33; ++j) sum += p.at(i, j);
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }

  Tensor64 x = random_tensor<double>({3, 4}, rng, -2, 2);
  const Tensor64 w = random_tensor<double>({3, 4}, rng);
  auto loss = [&] { return weighted_sum(softmax_rows(x), w); };
  CHECK(grad_rel_err(softmax_rows_backward(softmax_rows(x), w), numeric_grad(x, loss)) <= 1e-5);
}

TEST_CASE("mean pool forward and backward") {
  const Tensor64 x = Tensor64::matrix({{1, 2}, {3, 4}, {5, 9}});
  CHECK(mean_pool_forward(x) == Tensor64::vector({3, 5}));
  std::mt19937_64 rng(6);
  Tensor64 z = random_tensor<double>({4, 3}, rng);
  const Tensor64 w = random_tensor<double>({3}, rng);
  auto loss = [&] { return weighted_sum(mean_pool_forward(z), w); };
  CHECK(grad_rel_err(mean_pool_backward(w, 4), numeric_grad(z, loss)) <= 1e-6);
}

TEST_CASE("cross entropy: closed form, range check, gradient") {
  const auto r = cross_entropy(Tensor64::vector({0.0, 0.0}), 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor64::vector({1000.0, 0.0}), 0).loss == doctest::Approx(0.0).scale(1.0));
  CHECK(std::isfinite(cross_entropy(Tensor64::vector({1000.0, -1000.0}), 1).loss));
  CHECK_THROWS_AS(cross_entropy(Tensor64::vector({0.0, 0.0}), 2), ConfigError);

  std::mt19937_64 rng(7);
  Tensor64 logits = random_tensor<double>({6}, rng, -3, 3);
  auto loss = [&] { return cross_entropy(logits, 4).loss; };
  CHECK(grad_rel_err(cross_entropy(logits, 4).dlogits, numeric_grad(logits, loss)) <= 1e-6);
}

TEST_CASE("attention: single token attends to itself") {
  std::mt19937_64 rng(8);
  AttentionLayer<double> a = random_attention(8, 2, rng);
  const Tensor64 x = random_tensor<double>({1, 8}, rng);
  const Tensor64 expect = a.out_proj.forward(a.v_proj.forward(x));
  CHECK(max_abs_diff(a.forward(x, nullptr), expect) <= 1e-12);
}

TEST_CASE("attention: head count must divide width") {
  CHECK_THROWS_AS(AttentionLayer<float>(10, 3, "bad"), ConfigError);
  CHECK_THROWS_AS(AttentionLayer<float>(8, 0, "bad"), ConfigError);
}

TEST_CASE("attention: gradients match central differences (d=8, h=2, T=3)") {
  std::mt19937_64 rng(9);
  AttentionLayer<double> a = random_attention(8, 2, rng);
  Tensor64 x = random_tensor<double>({3, 8}, rng);
  const Tensor64 w = random_tensor<double>({3, 8}, rng);
  auto loss = [&] { return weighted_sum(a.forward(x, nullptr), w); };
  Tensor64 dx;
  std::vector<Param<double>*> params;
  for (auto* l : {&a.q_proj, &a.k_proj, &a.v_proj, &a.out_proj}) {
    params.push_back(&l->weight);
    params.push_back(&l->bias);
  }
  const GradReport r = check_param_grads(params, loss, [&] {
    typename AttentionLayer<double>::Cache c;
    a.forward(x, &c);
    dx = a.backward(c, w);
  });
  CHECK_MESSAGE(r.worst <= 1e-5, r.worst_name);
  CHECK(grad_rel_err(dx, numeric_grad(x, loss)) <= 1e-5);
}

TEST_CASE("attention: dropout path is consistent with its own backward") {
  std::mt19937_64 rng(10);
  AttentionLayer<double> a = random_attention(8, 2, rng);
  a.dropout = 0.3;
  Tensor64 x = random_tensor<double>({4, 8}, rng);
  const Tensor64 w = random_tensor<double>({4, 8}, rng);
  // Re-seeding before each forward replays the same dropout mask.
  auto loss = [&] {
    Rng drop(77);
    return weighted_sum(a.forward(x, nullptr, &drop), w);
  };
  Tensor64 dx;
  const GradReport r = check_param_grads({&a.q_proj.weight, &a.v_proj.weight}, loss, [&] {
    typename AttentionLayer<double>::Cache c;
    Rng drop(77);
    a.forward(x, &c, &drop);
    CHECK_FALSE(c.keep.empty());
    dx = a.backward(c, w);
  });
  CHECK(r.worst <= 1e-5);
  CHECK(grad_rel_err(dx, numeric_grad(x, loss)) <= 1e-5);
  // Without an rng the layer is deterministic and dropout-free.
  CHECK(a.forward(x, nullptr) == a.forward(x, nullptr));
}

TEST_CASE("attention: permutation equivariance over tokens") {
  std::mt19937_64 rng(11);
  AttentionLayer<double> a = random_attention(8, 4, rng);
  const Tensor64 x = random_tensor<double>({5, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor64 px({5, 8});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) px.at(i, j) = x.at(perm[i], j);
  const Tensor64 y = a.forward(x, nullptr), py = a.forward(px, nullptr);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(py.at(i, j) == doctest::Approx(y.at(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("encoder block: gradients match central differences") {
  std::mt19937_64 rng(12);
  EncoderBlock<double> b(8, 2, 4, "layer0");
  for (auto* p : b.params()) randomize(*p, rng, 0.4);
  Tensor64 x = random_tensor<double>({3, 8}, rng);
  const Tensor64 w = random_tensor<double>({3, 8}, rng);
  auto loss = [&] { return weighted_sum(b.forward(x, nullptr), w); };
  Tensor64 dx;
  const GradReport r = check_param_grads(b.params(), loss, [&] {
    typename EncoderBlock<double>::Cache c;
    b.forward(x, &c);
    dx = b.backward(c, w);
  });
  CHECK_MESSAGE(r.worst <= 1e-5, r.worst_name);
  CHECK(grad_rel_err(dx, numeric_grad(x, loss)) <= 1e-5);
  CHECK(b.forward(x, nullptr).shape() == x.shape());
}
