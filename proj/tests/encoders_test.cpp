#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oncoclip/checkpoint.hpp"
#include "oncoclip/encoders.hpp"
#include "oncoclip/error.hpp"
#include "support/gradcheck.hpp"

using namespace oncoclip;
using namespace oncoclip::nn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

// sum(dy .* f(x)) so that dL/dy = dy.
double contract(const Matrix& y, const Matrix& dy) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * dy.data[i];
  return s;
}

}  // namespace

TEST_CASE("Mlp layout and parameter views") {
  Mlp m = Mlp::stack(6, {5, 4}, 3, Activation::tanh, Activation::identity);
  CHECK(m.param_count() == 6 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
  CHECK(m.weight(1).size() == 20);
  CHECK(m.bias(2).size() == 3);
  CHECK(m.weight(1).data() == m.params().data() + 35);
  const Mlp back = Mlp::from_layout(m.layout());
  CHECK(back.layers() == m.layers());
  CHECK_THROWS_AS(m.weight(3), std::out_of_range);
}

TEST_CASE("Mlp forward matches a hand evaluation") {
  Mlp m({{2, 2, Activation::tanh}});
  auto w = m.weight(0);
  w[0] = 0.5, w[1] = -1.0, w[2] = 2.0, w[3] = 0.25;
  m.bias(0)[0] = 0.1;
  m.bias(0)[1] = -0.2;
  const Matrix y = m.forward(Matrix::from_rows({{1.0, 2.0}}));
  CHECK(y(0, 0) == doctest::Approx(std::tanh(0.5 - 2.0 + 0.1)));
  CHECK(y(0, 1) == doctest::Approx(std::tanh(2.0 + 0.5 - 0.2)));

  Mlp id({{3, 3, Activation::identity}});
  id.init_identity();
  const Matrix x = Matrix::from_rows({{1, -2, 3}});
  CHECK(id.forward(x).data == x.data);
}

TEST_CASE("Mlp backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Mlp m = Mlp::stack(5, {7}, 3, Activation::tanh, Activation::identity);
    m.init_uniform(seed);
    Matrix x = random_matrix(4, 5, rng);
    const Matrix dy = random_matrix(4, 3, rng);
    MlpCache cache;
    m.forward(x, &cache);
    std::vector<double> grad(m.param_count(), 0.0);
    const Matrix dx = m.backward(cache, dy, grad);

    auto loss = [&] { return contract(m.forward(x), dy); };
    CHECK(testing::max_relative_error(m.params(), grad, loss) < 1e-5);
    CHECK(testing::max_relative_error(std::span<double>(x.data), dx.data, loss) < 1e-5);
  }
}

TEST_CASE("Mlp backward without a forward cache is a state error") {
  Mlp m = Mlp::stack(2, {}, 2, Activation::tanh, Activation::identity);
  std::vector<double> grad(m.param_count());
  CHECK_THROWS_AS(m.backward(MlpCache{}, Matrix(1, 2), grad), StateError);
}

TEST_CASE("encoder factories") {
  const auto img = ImageEncoder::make(12, {8, 6}, 3);
  CHECK(img.input_size() == 12);
  CHECK(img.feature_dim() == 6);
  const auto proj = ProjectionHead::make(6, 16, 3);
  CHECK(proj.embed_dim() == 16);
  const auto heads = MultiTaskHeads::make(6, 3);
  REQUIRE(heads.size() == 14);
  for (std::size_t k = 0; k < 14; ++k) CHECK(heads.heads[k].output_dim() == kAttributeClasses[k]);

  std::vector<double> x(12, 0.1);
  CHECK(forward_image(img, x).size() == 6);
  x.pop_back();
  CHECK_THROWS_AS(forward_image(img, x), std::invalid_argument);
}

TEST_CASE("text encoder mean pooling and dropout") {
  TextEncoder enc = TextEncoder::make(5, 3, 0.0, 1);
  const std::vector<std::uint32_t> toks{1, 3};
  const auto e = forward_text(enc, toks, nullptr);
  for (std::size_t d = 0; d < 3; ++d) CHECK(e[d] == doctest::Approx((enc.table(1, d) + enc.table(3, d)) / 2));

  const std::vector<std::uint32_t> bad{7};
  CHECK_THROWS_AS(forward_text(enc, bad, nullptr), std::invalid_argument);

  enc.dropout = 0.5;
  Rng a(4), b(4);
  CHECK(forward_text(enc, toks, &a) == forward_text(enc, toks, &b));
  CHECK(forward_text(enc, toks, nullptr) == e);  // no rng: dropout off

  // Gradient of sum(dy . f(table)) with a fixed dropout mask.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    TextCache cache;
    Rng draw(seed + 100);
    forward_text(enc, toks, &draw, &cache);
    const std::vector<double> dy{rng.normal(), rng.normal(), rng.normal()};
    Matrix g(5, 3);
    backward_text(enc, cache, dy, g);
    auto loss = [&] {
      Rng replay(seed + 100);
      const auto y = forward_text(enc, toks, &replay);
      return y[0] * dy[0] + y[1] * dy[1] + y[2] * dy[2];
    };
    CHECK(testing::max_relative_error(std::span<double>(enc.table.data), g.data, loss) < 1e-5);
  }
}

TEST_CASE("row normalisation backward") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix x = random_matrix(3, 4, rng);
    const Matrix dy = random_matrix(3, 4, rng);
    std::vector<double> norms;
    const Matrix y = l2_normalize_rows(x, &norms);
    for (std::size_t i = 0; i < 3; ++i) CHECK(dot(y.row(i), y.row(i)) == doctest::Approx(1.0));
    const Matrix dx = l2_normalize_rows_backward(y, norms, dy);
    auto loss = [&] { return contract(l2_normalize_rows(x), dy); };
    CHECK(testing::max_relative_error(std::span<double>(x.data), dx.data, loss) < 1e-5);
  }
  CHECK_THROWS_AS(l2_normalize_rows(Matrix(1, 3)), std::invalid_argument);
}

TEST_CASE("softmax") {
  const auto p = softmax(std::vector<double>{1000.0, 1000.0, 1000.0 + std::log(2.0)});
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[2] == doctest::Approx(0.5));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "oncoclip_ckpt_test";
  std::filesystem::remove_all(dir);
  Checkpoint c;
  c.meta["kind"] = "test";
  c.put("a", std::vector<double>{1.5, -2.25, 1e-300});
  c.put("b", std::vector<double>{});
  save_checkpoint(dir.string(), c);
  const Checkpoint back = load_checkpoint(dir.string());
  CHECK(back.meta["kind"] == "test");
  CHECK(back.get("a") == c.get("a"));
  CHECK(back.has("b"));
  CHECK_FALSE(back.has("c"));
  CHECK_THROWS(back.get("c"));
  std::filesystem::remove(dir / "params.bin");
  CHECK_THROWS_AS(load_checkpoint(dir.string()), DataError);
  std::filesystem::remove_all(dir);
}
