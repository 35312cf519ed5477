#include <gtest/gtest.h>

#include <algorithm>
#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "coadain/metrics.hpp"
#include "test_util.hpp"

using namespace coadain;

namespace {

ActivationStats make_stats(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  ActivationStats s;
  s.mean = mean;
  s.covariance = cov;
  s.count = 10;
  return s;
}

Eigen::MatrixXd random_spd(Rng& rng, int d) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.uniform(-1, 1);
  return a * a.transpose() + 0.05 * Eigen::MatrixXd::Identity(d, d);
}

// Denman-Beavers iteration for the principal square root of a matrix with
// positive real spectrum; independent of the eigendecomposition route.
Eigen::MatrixXd db_sqrt(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd y = a, z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd yn = 0.5 * (y + z.inverse());
    const Eigen::MatrixXd zn = 0.5 * (z + y.inverse());
    y = yn;
    z = zn;
  }
  return y;
}

double oracle_frechet(const ActivationStats& p, const ActivationStats& q) {
  const Eigen::MatrixXd root = db_sqrt(p.covariance * q.covariance);
  return (p.mean - q.mean).squaredNorm() + p.covariance.trace() + q.covariance.trace() - 2 * root.trace();
}

FeatureExtractor small_extractor(int channels = 1) {
  return FeatureExtractor::seeded(3, channels, {{4, 3, 1, 1}, {6, 4, 2, 1}});
}

// Reference implementation written from the definition: unit-normalise the
// channel vector at every position, squared distance, mean over positions,
// sum over layers.
double oracle_lpips(const Tensor<double>& x, const Tensor<double>& y, const FeatureExtractor& fx) {
  double total = 0.0;
  Tensor<double> a = x, b = y;
  for (size_t l = 0; l < fx.num_layers(); ++l) {
    a = relu(fx.layer(l).forward(a));
    b = relu(fx.layer(l).forward(b));
    double sum = 0.0;
    for (int yy = 0; yy < a.h(); ++yy) {
      for (int xx = 0; xx < a.w(); ++xx) {
        double na = 0, nb = 0;
        for (int c = 0; c < a.c(); ++c) {
          na += a(0, c, yy, xx) * a(0, c, yy, xx);
          nb += b(0, c, yy, xx) * b(0, c, yy, xx);
        }
        na = std::sqrt(na) + 1e-10;
        nb = std::sqrt(nb) + 1e-10;
        for (int c = 0; c < a.c(); ++c) {
          const double d = a(0, c, yy, xx) / na - b(0, c, yy, xx) / nb;
          sum += d * d;
        }
      }
    }
    total += sum / (a.h() * a.w());
  }
  return total;
}

std::vector<uint8_t> centre_region(int h, int w) {
  std::vector<uint8_t> r(static_cast<size_t>(h) * w, 0);
  for (int y = h / 4; y < 3 * h / 4; ++y)
    for (int x = w / 4; x < 3 * w / 4; ++x) r[static_cast<size_t>(y) * w + x] = 1;
  return r;
}

}  // namespace

TEST(Frechet, SelfDistanceIsZero) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const int d = 1 + static_cast<int>(rng.uniform_int(8));
    Eigen::VectorXd m(d);
    for (int i = 0; i < d; ++i) m(i) = rng.uniform(-2, 2);
    const auto s = make_stats(m, random_spd(rng, d));
    EXPECT_NEAR(frechet_distance(s, s), 0.0, 1e-8);
  }
}

TEST(Frechet, OneDimensionalClosedForm) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const double m1 = rng.uniform(-3, 3), m2 = rng.uniform(-3, 3);
    const double s1 = rng.uniform(0.1, 2), s2 = rng.uniform(0.1, 2);
    const auto p = make_stats(Eigen::VectorXd::Constant(1, m1), Eigen::MatrixXd::Constant(1, 1, s1 * s1));
    const auto q = make_stats(Eigen::VectorXd::Constant(1, m2), Eigen::MatrixXd::Constant(1, 1, s2 * s2));
    const double expect = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    EXPECT_NEAR(frechet_distance(p, q), expect, 1e-10);
  }
}

TEST(Frechet, DiagonalClosedForm) {
  Eigen::VectorXd mp(3), mq(3);
  mp << 0.5, -1.0, 2.0;
  mq << 0.0, 1.0, 2.5;
  Eigen::Vector3d vp(1.0, 4.0, 0.25), vq(9.0, 1.0, 0.04);
  const auto p = make_stats(mp, vp.asDiagonal().toDenseMatrix());
  const auto q = make_stats(mq, vq.asDiagonal().toDenseMatrix());
  double expect = (mp - mq).squaredNorm();
  for (int i = 0; i < 3; ++i) expect += std::pow(std::sqrt(vp(i)) - std::sqrt(vq(i)), 2);
  EXPECT_NEAR(frechet_distance(p, q), expect, 1e-8);
}

TEST(Frechet, MatchesIterativeRootSymmetricAndNonNegative) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const int d = 2 + static_cast<int>(rng.uniform_int(5));
    Eigen::VectorXd m1(d), m2(d);
    for (int i = 0; i < d; ++i) {
      m1(i) = rng.uniform(-1, 1);
      m2(i) = rng.uniform(-1, 1);
    }
    const auto p = make_stats(m1, random_spd(rng, d));
    const auto q = make_stats(m2, random_spd(rng, d));
    const double pq = frechet_distance(p, q);
    const double qp = frechet_distance(q, p);
    EXPECT_GE(pq, 0.0);
    EXPECT_NEAR(pq, qp, 1e-8 * std::max(1.0, pq));
    EXPECT_NEAR(pq, oracle_frechet(p, q), 1e-7 * std::max(1.0, pq));
  }
}

TEST(Frechet, RejectsMismatchedAndNonFinite) {
  const auto p = make_stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto q = make_stats(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(frechet_distance(p, q), DimensionError);
  auto bad = p;
  bad.mean(0) = std::nan("");
  EXPECT_THROW(frechet_distance(bad, p), NumericError);
}

TEST(ActivationStats, WelfordMatchesTwoPass) {
  Rng rng(4);
  std::vector<std::vector<double>> rows;
  ActivationAccumulator acc;
  for (int i = 0; i < 57; ++i) {
    rows.push_back(testutil::random_vector(rng, 5, -3, 3));
    rows.back()[2] += 1e4;  // large offset: the naive sum-of-squares formula loses digits here
    acc.add(rows.back());
  }
  Eigen::MatrixXd x(57, 5);
  for (int i = 0; i < 57; ++i)
    for (int j = 0; j < 5; ++j) x(i, j) = rows[i][j];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred / 56.0;
  const auto s = acc.stats();
  EXPECT_EQ(s.count, 57);
  EXPECT_LT((s.mean - mean.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((s.covariance - cov).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ActivationStats, NeedsTwoSamples) {
  ActivationAccumulator acc;
  EXPECT_THROW(acc.stats(), ValidationError);
  acc.add({1.0, 2.0});
  EXPECT_THROW(acc.stats(), ValidationError);
  EXPECT_THROW(acc.add({1.0}), DimensionError);
}

TEST(Extractor, DeterministicHashAndRoundTrip) {
  const auto a = FeatureExtractor::seeded();
  const auto b = FeatureExtractor::seeded();
  const auto c = FeatureExtractor::seeded(kDefaultExtractorSeed + 1);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 64u);
  EXPECT_EQ(a.embedding_dim(), 64);

  const auto path = std::filesystem::temp_directory_path() / "coadain_test_extractor.bin";
  a.save(path);
  const auto loaded = FeatureExtractor::load(path);
  EXPECT_EQ(loaded.hash(), a.hash());
  EXPECT_EQ(loaded.descriptor(), a.descriptor());
  Rng rng(5);
  const auto img = testutil::random_tensor<double>(rng, 1, 1, 16, 16);
  EXPECT_EQ(loaded.embedding(img), a.embedding(img));
  std::filesystem::remove(path);
}

TEST(Extractor, KnownAnswerHash) {
  // SHA-256 of the ASCII string "abc".
  EXPECT_EQ(sha256_hex("abc", 3), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Extractor, ShippedWeightsMatchSeededDefault) {
  const auto shipped = std::filesystem::path(COADAIN_SOURCE_DIR) / "assets" / "extractor_v1.bin";
  ASSERT_TRUE(std::filesystem::exists(shipped));
  EXPECT_EQ(FeatureExtractor::load(shipped).hash(), FeatureExtractor::seeded().hash());
}

TEST(Lpips, IdentitySymmetryAndOracle) {
  const auto fx = small_extractor();
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto x = testutil::random_tensor<double>(rng, 1, 1, 12, 16);
    const auto y = testutil::random_tensor<double>(rng, 1, 1, 12, 16);
    EXPECT_EQ(lpips_distance(x, x, fx), 0.0);
    EXPECT_NEAR(lpips_distance(x, y, fx), lpips_distance(y, x, fx), 1e-14);
    EXPECT_GT(lpips_distance(x, y, fx), 0.0);
    EXPECT_NEAR(lpips_distance(x, y, fx), oracle_lpips(x, y, fx), 1e-12);
  }
}

TEST(Lpips, MaskedIgnoresPixelsOutsideRegion) {
  const auto fx = small_extractor();
  Rng rng(7);
  const auto region = centre_region(16, 16);
  auto x = testutil::random_tensor<double>(rng, 1, 1, 16, 16);
  auto y = testutil::random_tensor<double>(rng, 1, 1, 16, 16);
  const double base = lpips_distance(x, y, fx, std::span<const uint8_t>(region));
  for (size_t p = 0; p < region.size(); ++p) {
    if (!region[p]) {
      x[p] = rng.uniform(-1, 1);
      y[p] = rng.uniform(-1, 1);
    }
  }
  EXPECT_NEAR(lpips_distance(x, y, fx, std::span<const uint8_t>(region)), base, 1e-14);
  EXPECT_NE(lpips_distance(x, y, fx), base);

  auto y2 = x;
  EXPECT_EQ(lpips_distance(x, y2, fx, std::span<const uint8_t>(region)), 0.0);
  y2[8 * 16 + 8] += 0.5;  // inside the region
  EXPECT_GT(lpips_distance(x, y2, fx, std::span<const uint8_t>(region)), 0.0);
}

TEST(Lpips, RejectsBadInputs) {
  const auto fx = small_extractor();
  Rng rng(8);
  const auto x = testutil::random_tensor<double>(rng, 1, 1, 16, 16);
  const auto rgb = testutil::random_tensor<double>(rng, 1, 3, 16, 16);
  EXPECT_THROW(lpips_distance(rgb, rgb, fx), DimensionError);
  std::vector<uint8_t> empty(256, 0);
  EXPECT_THROW(lpips_distance(x, x, fx, std::span<const uint8_t>(empty)), ValidationError);
  std::vector<uint8_t> short_mask(10, 1);
  EXPECT_THROW(lpips_distance(x, x, fx, std::span<const uint8_t>(short_mask)), DimensionError);
}

namespace {

struct ProtocolFixture {
  std::vector<Tensor<double>> sources;
  std::vector<ComponentMask> masks;
  std::vector<Tensor<double>> reals;
};

ProtocolFixture protocol_fixture(int n) {
  ProtocolFixture f;
  Rng rng(9);
  for (int i = 0; i < n; ++i) {
    f.sources.push_back(testutil::random_tensor<double>(rng, 1, 3, 8, 8));
    f.masks.push_back(testutil::block_mask(rng, 8, 8, 2));
    f.reals.push_back(testutil::random_tensor<double>(rng, 1, 1, 8, 8));
  }
  return f;
}

// Output = mean of source channels, shifted by each component's first style
// value inside that component.
Translator<double> style_shift_translator() {
  return [](const Tensor<double>& src, const ComponentMask& m, std::span<const StyleCodeSet<double>> styles) {
    Tensor<double> out(static_cast<int>(styles.size()), 1, src.h(), src.w());
    for (size_t s = 0; s < styles.size(); ++s) {
      for (int y = 0; y < src.h(); ++y) {
        for (int x = 0; x < src.w(); ++x) {
          const double g = (src(0, 0, y, x) + src(0, 1, y, x) + src(0, 2, y, x)) / 3;
          out(static_cast<int>(s), 0, y, x) = g + 0.3 * styles[s][m.label(y, x)].values[0];
        }
      }
    }
    return out;
  };
}

}  // namespace

TEST(Diversity, StyleIgnoringModelScoresZero) {
  auto f = protocol_fixture(5);
  const auto fx = small_extractor();
  Translator<double> constant = [](const Tensor<double>& src, const ComponentMask&,
                                   std::span<const StyleCodeSet<double>> styles) {
    Tensor<double> out(static_cast<int>(styles.size()), 1, src.h(), src.w());
    for (int s = 0; s < out.n(); ++s)
      for (int y = 0; y < src.h(); ++y)
        for (int x = 0; x < src.w(); ++x) out(s, 0, y, x) = src(0, 0, y, x);
    return out;
  };
  DiversityOptions o;
  o.num_sources = 5;
  o.num_pairs = 20;
  o.style_dim = 3;
  const auto r = diversity_protocol<double>(constant, f.sources, f.masks, fx, o);
  EXPECT_EQ(r.mean, 0.0);
  EXPECT_EQ(r.std, 0.0);
}

TEST(Diversity, CountersAndDeterminism) {
  auto f = protocol_fixture(100);
  const auto fx = small_extractor();
  int64_t calls = 0;
  auto base = style_shift_translator();
  Translator<double> counted = [&](const Tensor<double>& s, const ComponentMask& m,
                                   std::span<const StyleCodeSet<double>> st) {
    ++calls;
    return base(s, m, st);
  };
  DiversityOptions o;
  o.num_sources = 100;
  o.num_pairs = 1000;
  o.style_dim = 3;
  o.seed = 11;
  const auto r = diversity_protocol<double>(counted, f.sources, f.masks, fx, o);
  EXPECT_EQ(r.counters.pair_evaluations, 1000);
  EXPECT_EQ(r.counters.translations, 2000);
  EXPECT_EQ(r.counters.sources, 100);
  EXPECT_EQ(calls, 1000);
  EXPECT_EQ(r.values.size(), 1000u);
  EXPECT_GT(r.mean, 0.0);
  EXPECT_GT(r.std, 0.0);
  const auto again = diversity_protocol<double>(base, f.sources, f.masks, fx, o);
  EXPECT_EQ(again.values, r.values);
  EXPECT_EQ(r.to_json()["counters"]["pair_evaluations"], 1000);
}

TEST(Diversity, VehicleModeOnlyVariesVehicleRegion) {
  auto f = protocol_fixture(4);
  const auto fx = small_extractor();
  auto base = style_shift_translator();
  Translator<double> check = [&](const Tensor<double>& s, const ComponentMask& m,
                                 std::span<const StyleCodeSet<double>> st) {
    EXPECT_EQ(st[0][1].values, st[1][1].values);
    EXPECT_NE(st[0][0].values, st[1][0].values);
    EXPECT_TRUE(m.present(0));
    return base(s, m, st);
  };
  DiversityOptions o;
  o.num_sources = 4;
  o.num_pairs = 8;
  o.style_dim = 3;
  o.mode = DiversityMode::vehicle;
  const auto r = diversity_protocol<double>(check, f.sources, f.masks, fx, o);
  EXPECT_EQ(r.protocol, "lpips-vehicle");
  EXPECT_GT(r.mean, 0.0);

  // Sources without a vehicle are not eligible.
  std::vector<ComponentMask> background(4, ComponentMask(8, 8, 2, std::vector<uint8_t>(64, 1)));
  EXPECT_THROW(diversity_protocol<double>(base, f.sources, background, fx, o), ValidationError);
}

TEST(ActivationStats, IdenticalImagesGiveZeroCovariance) {
  auto f = protocol_fixture(4);
  const auto fx = small_extractor();
  const std::vector<Tensor<double>> same(5, f.reals[0]);
  const auto s = activation_stats<double>(same, fx);
  const auto e = fx.embedding(f.reals[0]);
  for (int i = 0; i < s.dim(); ++i) EXPECT_NEAR(s.mean(i), e[i], 1e-12);
  EXPECT_LT(s.covariance.cwiseAbs().maxCoeff(), 1e-20);
}

TEST(ActivationStats, InvariantToImageOrder) {
  auto f = protocol_fixture(10);
  const auto fx = small_extractor();
  auto shuffled = f.reals;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[1], shuffled[6]);
  const auto a = activation_stats<double>(f.reals, fx);
  const auto b = activation_stats<double>(shuffled, fx);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.covariance - b.covariance).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fid, PassesCountersAndSampleStd) {
  auto f = protocol_fixture(12);
  const auto fx = small_extractor();
  FidOptions o;
  o.samplings = 3;
  o.style_dim = 3;
  o.seed = 4;
  const auto r = fid_protocol<double>(style_shift_translator(), f.sources, f.masks, f.reals, fx, o);
  EXPECT_EQ(r.counters.sampling_passes, 3);
  EXPECT_EQ(r.counters.translations, 36);
  ASSERT_EQ(r.values.size(), 3u);
  double m = (r.values[0] + r.values[1] + r.values[2]) / 3;
  double v = 0;
  for (double x : r.values) v += (x - m) * (x - m);
  EXPECT_NEAR(r.mean, m, 1e-12);
  EXPECT_NEAR(r.std, std::sqrt(v / 2), 1e-12);
  EXPECT_GT(r.std, 0.0);
  for (double x : r.values) EXPECT_GE(x, 0.0);
}

TEST(Fid, RealsAgainstThemselvesIsZero) {
  auto f = protocol_fixture(12);
  const auto fx = small_extractor();
  ActivationAccumulator acc;
  for (const auto& r : f.reals) acc.add(fx.embedding(r));
  EXPECT_NEAR(frechet_distance(acc.stats(), activation_stats<double>(f.reals, fx)), 0.0, 1e-8);
}

TEST(Report, CsvAppendsWithSingleHeader) {
  const auto path = std::filesystem::temp_directory_path() / "coadain_test_metrics.csv";
  std::filesystem::remove(path);
  ProtocolResult r;
  r.protocol = "fid";
  r.mean = 1.5;
  r.values = {1.0, 2.0};
  r.extractor = FeatureExtractor::seeded().descriptor();
  append_csv(path, r, "run1");
  append_csv(path, r, "run2");
  std::ifstream in(path);
  std::string line;
  int lines = 0, headers = 0;
  while (std::getline(in, line)) {
    ++lines;
    headers += line.rfind("label,", 0) == 0;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(headers, 1);
  std::filesystem::remove(path);
}
