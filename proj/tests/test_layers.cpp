#include <gtest/gtest.h>

#include "coadain/layers.hpp"
#include "test_util.hpp"

using namespace coadain;
using testutil::random_tensor;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Naive direct convolution used as an oracle.
Tensor<double> naive_conv(const Conv2d<double>& conv, const Tensor<double>& x,
                          const ComponentMask* mask) {
  const int k = conv.kernel(), s = conv.stride(), p = conv.padding();
  const int ho = (x.h() + 2 * p - k) / s + 1, wo = (x.w() + 2 * p - k) / s + 1;
  Tensor<double> y(x.n(), conv.out_channels(), ho, wo);
  for (int i = 0; i < x.n(); ++i)
    for (int o = 0; o < conv.out_channels(); ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = conv.bias.value[o];
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s - p + ky, ix = ox * s - p + kx;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                if (mask && mask->label(iy, ix) != mask->label(oy, ox)) continue;
                acc += conv.weight.value(o, c, ky, kx) * x(i, c, iy, ix);
              }
          y(i, o, oy, ox) = acc;
        }
  return y;
}

}  // namespace

TEST(Conv2d, MatchesNaiveConvolution) {
  Rng rng(1);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {4, 2, 1}, {1, 1, 0}, {7, 1, 3}, {5, 1, 2}}) {
    Conv2d<double> conv(3, 4, k, s, p);
    conv.init(rng);
    for (auto& b : conv.bias.value.span()) b = rng.uniform(-1, 1);
    auto x = random_tensor(rng, 2, 3, 8, 10);
    auto y = conv.forward(x);
    auto ref = naive_conv(conv, x, nullptr);
    ASSERT_EQ(y.shape(), ref.shape());
    for (size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, RestrictedMatchesNaiveOracle) {
  Rng rng(2);
  Conv2d<double> conv(2, 3, 3, 1, 1);
  conv.init(rng);
  auto x = random_tensor(rng, 2, 2, 6, 7);
  std::vector<ComponentMask> masks{testutil::random_mask(rng, 6, 7, 2),
                                   testutil::random_mask(rng, 6, 7, 3)};
  auto y = conv.forward(x, masks);
  for (int i = 0; i < 2; ++i) {
    auto xi = x.slice(i);
    auto ref = naive_conv(conv, xi, &masks[i]);
    for (size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(y.sample(i)[j], ref[j], 1e-12);
  }
}

TEST(Conv2d, RestrictedOutputIgnoresOtherComponents) {
  Rng rng(3);
  Conv2d<float> conv(2, 2, 3, 1, 1);
  conv.init(rng);
  auto mask = testutil::random_mask(rng, 8, 8, 2);
  std::vector<ComponentMask> masks{mask};
  auto x = random_tensor<float>(rng, 1, 2, 8, 8);
  auto x2 = x;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        if (mask.label(y, xx) == 1) x2(0, c, y, xx) += 5.0f;
      }
  auto a = conv.forward(x, masks), b = conv.forward(x2, masks);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        if (mask.label(y, xx) == 0) {
          EXPECT_EQ(a(0, c, y, xx), b(0, c, y, xx));
        }
      }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (auto [k, s, p, restricted] :
       {std::tuple{3, 1, 1, false}, {4, 2, 1, false}, {1, 1, 0, false}, {3, 1, 1, true}}) {
    Conv2d<double> conv(2, 3, k, s, p);
    conv.init(rng);
    auto x = random_tensor(rng, 2, 2, 6, 6);
    std::vector<ComponentMask> masks;
    if (restricted) masks = {testutil::random_mask(rng, 6, 6, 2), testutil::random_mask(rng, 6, 6, 2)};
    auto y0 = conv.forward(x, masks);
    auto w = random_tensor(rng, y0.n(), y0.c(), y0.h(), y0.w());
    auto loss = [&]() { return dot(conv.forward(x, masks), w); };
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    auto gx = conv.backward(x, w, masks);
    EXPECT_LT(testutil::rel_error(gx.storage(), testutil::numeric_grad(x.storage(), loss)), 1e-6);
    EXPECT_LT(testutil::rel_error(conv.weight.grad.storage(),
                                  testutil::numeric_grad(conv.weight.value.storage(), loss)),
              1e-6);
    EXPECT_LT(testutil::rel_error(conv.bias.grad.storage(),
                                  testutil::numeric_grad(conv.bias.value.storage(), loss)),
              1e-6);
  }
}

TEST(Conv2d, RejectsWrongChannelsAndBadRestriction) {
  Conv2d<float> conv(3, 2, 3, 1, 1);
  Tensor<float> x(1, 2, 4, 4);
  EXPECT_THROW(conv.forward(x), DimensionError);
  Conv2d<float> strided(3, 2, 4, 2, 1);
  Tensor<float> x3(1, 3, 4, 4);
  std::vector<ComponentMask> m{ComponentMask::uniform(4, 4, 2)};
  EXPECT_THROW(strided.forward(x3, m), ValidationError);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  Mlp<double> mlp({4, 6, 5, 3});
  mlp.init(rng);
  auto x = testutil::random_vector(rng, 4);
  auto w = testutil::random_vector(rng, 3);
  auto loss = [&]() {
    auto y = mlp.forward(x);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  Mlp<double>::Trace trace;
  mlp.forward(x, &trace);
  mlp.visit("m", [](const std::string&, Param<double>& p) { p.zero_grad(); });
  auto gx = mlp.backward(trace, w);
  EXPECT_LT(testutil::rel_error(gx, testutil::numeric_grad(x, loss)), 1e-6);
  mlp.visit("m", [&](const std::string& name, Param<double>& p) {
    EXPECT_LT(testutil::rel_error(p.grad.storage(), testutil::numeric_grad(p.value.storage(), loss)),
              1e-6)
        << name;
  });
}

TEST(Activations, BackwardMatchesFiniteDifferences) {
  Rng rng(6);
  auto x = random_tensor(rng, 1, 2, 4, 4);
  auto w = random_tensor(rng, 1, 2, 4, 4);
  {
    auto loss = [&]() { return dot(tanh_act(x), w); };
    auto g = tanh_backward(tanh_act(x), w);
    EXPECT_LT(testutil::rel_error(g.storage(), testutil::numeric_grad(x.storage(), loss)), 1e-7);
  }
  {
    auto loss = [&]() { return dot(leaky_relu(x, 0.2), w); };
    auto g = leaky_relu_backward(leaky_relu(x, 0.2), w, 0.2);
    EXPECT_LT(testutil::rel_error(g.storage(), testutil::numeric_grad(x.storage(), loss)), 1e-7);
  }
  {
    auto loss = [&]() { return dot(relu(x), w); };
    auto g = relu_backward(relu(x), w);
    EXPECT_LT(testutil::rel_error(g.storage(), testutil::numeric_grad(x.storage(), loss)), 1e-7);
  }
}

TEST(Resampling, UpsampleAndPoolAdjoints) {
  Rng rng(7);
  auto x = random_tensor(rng, 2, 3, 4, 6);
  auto up = upsample2x(x);
  EXPECT_EQ(up.h(), 8);
  EXPECT_EQ(up(1, 2, 5, 3), x(1, 2, 2, 1));
  auto wu = random_tensor(rng, 2, 3, 8, 12);
  auto gu = upsample2x_backward(wu);
  EXPECT_LT(testutil::rel_error(gu.storage(), testutil::numeric_grad(x.storage(), [&] {
              return dot(upsample2x(x), wu);
            })),
            1e-7);
  auto pooled = avgpool2x(x);
  EXPECT_NEAR(pooled(0, 0, 0, 0), (x(0, 0, 0, 0) + x(0, 0, 0, 1) + x(0, 0, 1, 0) + x(0, 0, 1, 1)) / 4,
              1e-15);
  auto wp = random_tensor(rng, 2, 3, 2, 3);
  auto gp = avgpool2x_backward(wp);
  EXPECT_LT(testutil::rel_error(gp.storage(), testutil::numeric_grad(x.storage(), [&] {
              return dot(avgpool2x(x), wp);
            })),
            1e-7);
  EXPECT_THROW(avgpool2x(Tensor<double>(1, 1, 3, 4)), DimensionError);
}

TEST(InstanceNorm, BatchGradientMatchesFiniteDifferences) {
  Rng rng(8);
  auto x = random_tensor(rng, 2, 3, 4, 4);
  auto w = random_tensor(rng, 2, 3, 4, 4);
  InstanceNormTrace<double> tr;
  instance_norm(x, &tr);
  auto g = instance_norm_backward(w, tr);
  auto n = testutil::numeric_grad(x.storage(), [&] { return dot(instance_norm(x), w); });
  EXPECT_LT(testutil::rel_error(g.storage(), n), 1e-6);
}
