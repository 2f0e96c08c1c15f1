#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "restgate/errors.hpp"
#include "restgate/gradcheck.hpp"
#include "restgate/ops.hpp"
#include "restgate/param_io.hpp"

using namespace restgate;
using doctest::Approx;

namespace {

Tensor row(std::initializer_list<double> v) { return Tensor({1, 1, 1, v.size()}, std::vector<double>(v)); }

double channel_mean(const Tensor& t, std::size_t c) {
  const std::size_t B = t.dim(0), C = t.dim(1), HW = t.dim(2) * t.dim(3);
  double s = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < HW; ++k) s += t[(b * C + c) * HW + k];
  return s / static_cast<double>(B * HW);
}

double channel_var(const Tensor& t, std::size_t c) {
  const std::size_t B = t.dim(0), C = t.dim(1), HW = t.dim(2) * t.dim(3);
  const double m = channel_mean(t, c);
  double s = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < HW; ++k) s += (t[(b * C + c) * HW + k] - m) * (t[(b * C + c) * HW + k] - m);
  return s / static_cast<double>(B * HW);
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shapes must be positive and match the data") {
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK(Tensor({2, 3}).numel() == 6);
    CHECK(Tensor::scalar(3).item() == 3.0);
    CHECK_THROWS_AS(Tensor::from({1, 2}).item(), ContractError);
  }

  TEST_CASE("ops reject non-finite results") {
    CHECK_THROWS_AS(pow_scalar(Tensor::from({-1.0}), 0.5), NumericError);
    CHECK_THROWS_AS(scale(Tensor::from({1e308}), 1e10), NumericError);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("valid convolution of a short row") {
    const Tensor y = conv2d(row({1, 2, 3}), row({1, 1}), Padding::Valid);
    CHECK(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 5.0);
  }

  TEST_CASE("same padding keeps the width and pads the trailing side") {
    const Tensor y = conv2d(row({1, 2, 3}), row({1, 1}), Padding::Same);
    CHECK(y.shape() == Shape{1, 1, 1, 3});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 5.0);
    CHECK(y[2] == 3.0);
    const Tensor z = conv2d(fixtures::random_tensor({2, 3, 5, 7}, 1), fixtures::random_tensor({4, 3, 3, 4}, 2), Padding::Same);
    CHECK(z.shape() == Shape{2, 4, 5, 7});
  }

  TEST_CASE("unit 1x1 kernel is the identity") {
    const Tensor x = fixtures::random_tensor({2, 1, 3, 9}, 3);
    const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 1.0));
    CHECK(y.values() == x.values());
  }

  TEST_CASE("linear in the input and in the kernel") {
    const Tensor x = fixtures::random_tensor({2, 3, 4, 11}, 4);
    const Tensor y = fixtures::random_tensor({2, 3, 4, 11}, 5);
    const Tensor k = fixtures::random_tensor({2, 3, 2, 3}, 6);
    const Tensor k2 = fixtures::random_tensor({2, 3, 2, 3}, 7);
    const double a = 0.7, b = -1.3;
    const Tensor lhs = conv2d(add(scale(x, a), scale(y, b)), k);
    const Tensor rhs = add(scale(conv2d(x, k), a), scale(conv2d(y, k), b));
    for (std::size_t i = 0; i < lhs.numel(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) < 1e-12);
    const Tensor lk = conv2d(x, add(scale(k, a), scale(k2, b)));
    const Tensor rk = add(scale(conv2d(x, k), a), scale(conv2d(x, k2), b));
    for (std::size_t i = 0; i < lk.numel(); ++i) CHECK(std::abs(lk[i] - rk[i]) < 1e-12);
  }

  TEST_CASE("mismatched input channels and oversized kernels are rejected") {
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 3, 3}), Tensor({1, 3, 1, 1})), DimensionError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 1, 1, 3}), Tensor({1, 1, 1, 4})), LengthError);
  }
}

TEST_SUITE("batch_norm") {
  TEST_CASE("train mode standardizes each channel") {
    Tensor x = fixtures::random_tensor({4, 2, 3, 5}, 8, 2.0);
    for (auto& v : x.mutable_data()) v += 5.0;
    BatchNormState state(2);
    const Tensor y = batch_norm(x, state, Mode::Train);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(channel_mean(y, c)) < 1e-10);
      CHECK(std::abs(channel_var(y, c) - 1.0) < 1e-10);
    }
  }

  TEST_CASE("constant channel maps to the shift") {
    BatchNormState state(1);
    state.beta.mutable_data()[0] = 0.25;
    const Tensor y = batch_norm(Tensor({3, 1, 1, 4}, 7.0), state, Mode::Train);
    for (double v : y.values()) CHECK(v == 0.25);
  }

  TEST_CASE("two-sample hand case") {
    BatchNormState state(1, 1e-5);
    const Tensor y = batch_norm(Tensor({1, 1, 1, 2}, std::vector<double>{0, 2}), state, Mode::Train);
    CHECK(y[0] == Approx(-1.0).epsilon(1e-4));
    CHECK(y[1] == Approx(1.0).epsilon(1e-4));
  }

  TEST_CASE("running statistics follow the momentum update") {
    BatchNormState state(1, 1e-5, 0.1);
    batch_norm(Tensor({1, 1, 1, 2}, std::vector<double>{0, 2}), state, Mode::Train);
    CHECK(state.running_mean[0] == Approx(0.1));
    // unbiased batch variance of {0, 2} is 2
    CHECK(state.running_var[0] == Approx(0.9 + 0.1 * 2.0));
  }

  TEST_CASE("eval before any update uses mean 0 and variance 1") {
    BatchNormState state(1);
    const Tensor x = fixtures::random_tensor({2, 1, 2, 3}, 9);
    const Tensor y = batch_norm(x, state, Mode::Eval);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == Approx(x[i]));
  }

  TEST_CASE("train mode needs two values per channel") {
    BatchNormState state(1);
    CHECK_THROWS_AS(batch_norm(Tensor({1, 1, 1, 1}), state, Mode::Train), DomainError);
  }

  TEST_CASE("standardization holds across random inputs") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const double spread = std::pow(10.0, static_cast<double>(seed % 5) - 2.0);
      const Tensor x = fixtures::random_tensor({3, 3, 2, 6}, 100 + seed, spread);
      BatchNormState state(3);
      const Tensor y = batch_norm(x, state, Mode::Train);
      for (std::size_t c = 0; c < 3; ++c) {
        if (channel_var(x, c) <= 1e-6) continue;
        CHECK(std::abs(channel_mean(y, c)) < 1e-8);
        CHECK(std::abs(channel_var(y, c) - 1.0) < 1e-6);
      }
    }
  }
}

TEST_SUITE("activations") {
  TEST_CASE("reference points") {
    CHECK(activation(Activation::Sigmoid, Tensor::from({0.0}))[0] == 0.5);
    CHECK(std::abs(activation(Activation::Elu, Tensor::from({-1e9}))[0] + 1.0) < 1e-12);
    CHECK(std::abs(activation(Activation::Sigmoid, Tensor::from({1.0}))[0] - 0.7310585786300049) < 1e-15);
    CHECK(std::abs(activation(Activation::Sigmoid, Tensor::from({1.0}))[0] -
                   static_cast<double>(oracle::sigmoid(1.0L))) < 1e-15);
    CHECK(activation(Activation::Softplus, Tensor::from({0.0}))[0] == Approx(std::log(2.0)));
    CHECK(activation(Activation::Square, Tensor::from({-3.0}))[0] == 9.0);
    CHECK(activation(Activation::LogClamped, Tensor::from({0.0}))[0] == Approx(std::log(1e-7)));
    CHECK(activation(Activation::Elu, Tensor::from({2.5}))[0] == 2.5);
  }

  TEST_CASE("stable at extreme inputs") {
    const Tensor x = Tensor::from({-800.0, 800.0});
    const Tensor s = activation(Activation::Sigmoid, x);
    CHECK(s[0] == 0.0);
    CHECK(s[1] == 1.0);
    const Tensor sp = activation(Activation::Softplus, x);
    CHECK(sp[0] == Approx(0.0));
    CHECK(sp[1] == Approx(800.0));
  }

  TEST_CASE("sigmoid agrees with the extended-precision oracle") {
    const Tensor x = fixtures::uniform_tensor({200}, 11, -30.0, 30.0);
    const Tensor s = activation(Activation::Sigmoid, x);
    for (std::size_t i = 0; i < x.numel(); ++i)
      CHECK(std::abs(s[i] - static_cast<double>(oracle::sigmoid(x[i]))) < 1e-15);
  }
}

TEST_SUITE("reductions") {
  TEST_CASE("mean over both axes") {
    const Tensor x({2, 2}, std::vector<double>{1, 3, 5, 7});
    CHECK(reduce_mean(x, {0, 1}).item() == 4.0);
    const Tensor rows = reduce_mean(x, {1});
    CHECK(rows.shape() == Shape{2});
    CHECK(rows[0] == 2.0);
    CHECK(rows[1] == 6.0);
  }

  TEST_CASE("empty axis set is a no-op and constants are preserved") {
    const Tensor x = fixtures::random_tensor({3, 4}, 12);
    CHECK(reduce_mean(x, std::initializer_list<std::size_t>{}).values() == x.values());
    CHECK(reduce_mean(Tensor({3, 5}, 2.5), {0, 1}).item() == Approx(2.5));
  }

  TEST_CASE("invalid axes are rejected") { CHECK_THROWS_AS(reduce_mean(Tensor({2, 2}), {2}), DimensionError); }
}

TEST_SUITE("cosine and resampling") {
  TEST_CASE("cosine reference cases") {
    CHECK(cosine_similarity(Tensor::from({1, 0}), Tensor::from({0, 1})).item() == 0.0);
    CHECK(cosine_similarity(Tensor::from({3, -4}), Tensor::from({3, -4})).item() == Approx(1.0));
    CHECK(cosine_similarity(Tensor::from({1, 2}), Tensor::from({2, 1})).item() == Approx(0.8));
    CHECK(cosine_similarity(Tensor::from({0, 0}), Tensor::from({2, 1})).item() == 0.0);
  }

  TEST_CASE("cosine stays in [-1, 1]") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Tensor a = fixtures::random_tensor({16}, 200 + s);
      const double c = cosine_similarity(a, scale(a, 1.0 + static_cast<double>(s))).item();
      CHECK(c <= 1.0);
      CHECK(c >= -1.0);
      CHECK(cosine_similarity(a, scale(a, -2.0)).item() >= -1.0);
    }
  }

  TEST_CASE("linear resample cases") {
    const Tensor up = linear_resample(Tensor::from({0, 1}), 4);
    CHECK(up[0] == 0.0);
    CHECK(up[1] == Approx(1.0 / 3.0));
    CHECK(up[2] == Approx(2.0 / 3.0));
    CHECK(up[3] == 1.0);
    const Tensor v = fixtures::random_tensor({7}, 13);
    CHECK(linear_resample(v, 7).values() == v.values());
    const Tensor flat = linear_resample(Tensor({5}, 1.5), 12);
    for (double x : flat.values()) CHECK(x == 1.5);
    const Tensor single = linear_resample(Tensor::from({4.0}), 3);
    CHECK(single.values() == std::vector<double>{4.0, 4.0, 4.0});
  }
}

TEST_SUITE("dense ops") {
  TEST_CASE("matmul and dense by hand") {
    const Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor b({2, 1}, std::vector<double>{5, 6});
    const Tensor c = matmul(a, b);
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);
    const Tensor d = dense(a, Tensor({1, 2}, std::vector<double>{1, -1}), Tensor::from({0.5}));
    CHECK(d.shape() == Shape{2, 1});
    CHECK(d[0] == -0.5);
    CHECK(d[1] == -0.5);
    CHECK_THROWS_AS(matmul(a, Tensor({3, 1})), DimensionError);
  }

  TEST_CASE("average pooling by hand") {
    const Tensor y = avg_pool2d(row({1, 2, 3, 4}), {1, 2}, {1, 2});
    CHECK(y.values() == std::vector<double>{1.5, 3.5});
  }

  TEST_CASE("broadcasting elementwise ops") {
    const Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const Tensor y = mul(x, Tensor({1, 3}, std::vector<double>{1, 0, -1}));
    CHECK(y.values() == std::vector<double>{1, 0, -3, 4, 0, -6});
    CHECK_THROWS_AS(add(x, Tensor({2, 2})), DimensionError);
  }
}

TEST_SUITE("dropout") {
  TEST_CASE("identity in eval mode and at p = 0") {
    const Tensor x = fixtures::random_tensor({4, 8}, 14);
    CHECK(dropout(x, 0.5, Mode::Eval, 1).values() == x.values());
    CHECK(dropout(x, 0.0, Mode::Train, 1).values() == x.values());
  }

  TEST_CASE("train mode zeroes about p and rescales survivors") {
    const Tensor x({100, 100}, 1.0);
    const Tensor y = dropout(x, 0.25, Mode::Train, 42);
    std::size_t zeros = 0;
    for (double v : y.values()) {
      if (v == 0.0)
        ++zeros;
      else
        CHECK(v == Approx(1.0 / 0.75));
    }
    CHECK(static_cast<double>(zeros) / 1e4 == Approx(0.25).epsilon(0.1));
    CHECK(dropout(x, 0.25, Mode::Train, 42).values() == y.values());
    CHECK(dropout(x, 0.25, Mode::Train, 43).values() != y.values());
  }

  TEST_CASE("probability outside [0, 1) is rejected") {
    CHECK_THROWS_AS(dropout(Tensor({2}), 1.0, Mode::Train, 0), DomainError);
    CHECK_THROWS_AS(dropout(Tensor({2}), -0.1, Mode::Train, 0), DomainError);
  }
}

TEST_SUITE("cross entropy") {
  TEST_CASE("uniform logits give ln 4") {
    const int label[] = {2};
    CHECK(softmax_cross_entropy(Tensor({4}, 0.0), label).item() == Approx(1.3862943611198906));
  }

  TEST_CASE("non-negative and near zero only for a confident correct row") {
    const int labels[] = {0, 3};
    for (std::uint64_t s = 0; s < 20; ++s)
      CHECK(softmax_cross_entropy(fixtures::random_tensor({2, 4}, 300 + s, 5.0), labels).item() >= 0.0);
    const int zero[] = {0};
    CHECK(softmax_cross_entropy(Tensor({1, 4}, std::vector<double>{60, 0, 0, 0}), zero).item() < 1e-20);
  }

  TEST_CASE("labels out of range") {
    const int bad[] = {4};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 4}), bad), DomainError);
  }

  TEST_CASE("softmax rows sum to one") {
    const auto p = softmax_rows(fixtures::random_tensor({3, 4}, 15, 10.0));
    for (std::size_t r = 0; r < 3; ++r) CHECK(p[4 * r] + p[4 * r + 1] + p[4 * r + 2] + p[4 * r + 3] == Approx(1.0).epsilon(1e-12));
  }
}

TEST_SUITE("backward") {
  TEST_CASE("gradient of a sum is all ones") {
    Tensor x = Tensor::from({1, 2, 3});
    x.set_requires_grad();
    backward(sum(x));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
  }

  TEST_CASE("gradient of a sum of squares is 2x") {
    Tensor x = Tensor::from({1, -2});
    x.set_requires_grad();
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == -4.0);
  }

  TEST_CASE("gradients accumulate over consumers and the tape is cleared") {
    Tensor x = Tensor::from({3.0});
    x.set_requires_grad();
    backward(add(scale(x, 2.0), mul(x, x)));
    CHECK(x.grad()[0] == 8.0);
    CHECK(Tape::current().size() == 0);
  }

  TEST_CASE("non-scalar loss is a contract error") {
    Tensor x = Tensor::from({1, 2});
    x.set_requires_grad();
    const Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(backward(y), ContractError);
    Tape::current().clear();
  }

  TEST_CASE("no recording under NoGradGuard") {
    Tensor x = Tensor::from({1, 2});
    x.set_requires_grad();
    NoGradGuard guard;
    const Tensor y = sum(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(Tape::current().size() == 0);
  }
}

TEST_SUITE("check_gradients") {
  TEST_CASE("smooth program") {
    const auto f = [](const Tensor& x) { return sum(activation(Activation::Sigmoid, x)); };
    CHECK(check_gradients(f, fixtures::random_tensor({10}, 16)).max_rel_error < 1e-6);
  }

  TEST_CASE("linear program is exact up to rounding") {
    const Tensor w = fixtures::random_tensor({10}, 17);
    const auto f = [&](const Tensor& x) { return sum(mul(x, w)); };
    CHECK(check_gradients(f, fixtures::random_tensor({10}, 18)).max_rel_error < 1e-10);
  }
}

TEST_SUITE("parameter serialization") {
  TEST_CASE("round trip is bit exact") {
    const std::vector<NamedTensor> in = {{"a", fixtures::random_tensor({2, 3}, 19)},
                                         {"b.c", Tensor::from({std::numeric_limits<double>::denorm_min(), -0.0, 1e300})}};
    const auto bundle = serialize_parameters(in);
    const auto out = deserialize_parameters(bundle.manifest, bundle.blob);
    REQUIRE(out.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(out[i].name == in[i].name);
      CHECK(out[i].tensor.shape() == in[i].tensor.shape());
      CHECK(std::memcmp(out[i].tensor.data().data(), in[i].tensor.data().data(), 8 * in[i].tensor.numel()) == 0);
    }
  }

  TEST_CASE("blob and manifest must agree") {
    const auto bundle = serialize_parameters(std::vector<NamedTensor>{{"a", Tensor({4}, 1.0)}});
    auto short_blob = bundle.blob;
    short_blob.pop_back();
    CHECK_THROWS_AS(deserialize_parameters(bundle.manifest, short_blob), FormatError);
    auto long_blob = bundle.blob;
    long_blob.push_back(0);
    CHECK_THROWS_AS(deserialize_parameters(bundle.manifest, long_blob), FormatError);
    CHECK_THROWS_AS(deserialize_parameters("{not json", bundle.blob), FormatError);
  }
}
