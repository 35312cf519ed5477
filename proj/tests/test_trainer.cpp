#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "coadain/trainer.hpp"
#include "test_util.hpp"

using namespace coadain;

namespace {

RunConfig tiny_run() {
  RunConfig r;
  auto& c = r.model;
  c.num_components = 2;
  c.style_dim = 3;
  c.content_channels = 4;
  c.base_filters = 2;
  c.num_downsamples = 1;
  c.num_res_blocks = 1;
  c.image_height = 16;
  c.image_width = 16;
  c.discriminator_scales = 2;
  c.discriminator_filters = 2;
  c.mlp_hidden = 4;
  c.seed = 5;
  r.train.batch_size = 2;
  r.train.iterations = 6;
  r.train.checkpoint_every = 2;
  r.train.log_every = 1;
  r.train.seed = 9;
  r.train.learning_rate = 1e-3;
  return r;
}

template <class T>
Batch<T> make_batch(uint64_t seed, int n, int channels, bool with_vehicle = true) {
  Rng rng(seed);
  Batch<T> b{testutil::random_tensor<T>(rng, n, channels, 16, 16), {}};
  for (int i = 0; i < n; ++i) {
    if (with_vehicle) {
      b.masks.push_back(testutil::block_mask(rng, 16, 16, 2));
    } else {
      b.masks.push_back(ComponentMask(16, 16, 2, std::vector<uint8_t>(256, 1)));
    }
  }
  return b;
}

template <class T>
BatchSource<T> source(Domain d, uint64_t salt) {
  const int ch = d == Domain::rgb ? 3 : 1;
  return [=](int64_t step) { return make_batch<T>(derive_seed(salt, static_cast<uint64_t>(step)), 2, ch); };
}

template <class T>
std::vector<T> flat_params(Model<T>& m) {
  std::vector<T> out;
  m.visit_all([&](const std::string&, Param<T>& p) {
    out.insert(out.end(), p.value.span().begin(), p.value.span().end());
  });
  return out;
}

}  // namespace

TEST(Trainer, OptimizersPartitionTheParameters) {
  Trainer<float> t(tiny_run());
  std::set<std::string> gen, dis, all;
  for (const auto& s : t.generator_optimizer().slots()) gen.insert(s.name);
  for (const auto& s : t.discriminator_optimizer().slots()) dis.insert(s.name);
  t.model().visit_all([&](const std::string& n, Param<float>&) { all.insert(n); });
  EXPECT_EQ(gen.size() + dis.size(), all.size());
  for (const auto& n : dis) {
    EXPECT_EQ(gen.count(n), 0u);
    EXPECT_NE(n.find(".dis"), std::string::npos) << n;
  }
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = tiny_run();
  cfg.train.learning_rate = 0.0;
  Trainer<float> t(cfg);
  const auto before = flat_params(t.model());
  auto report = t.step(make_batch<float>(1, 2, 3), make_batch<float>(2, 2, 1));
  EXPECT_EQ(flat_params(t.model()), before);
  EXPECT_EQ(t.iteration(), 1);
  EXPECT_TRUE(std::isfinite(report.generator.total));
}

TEST(Trainer, StepUpdatesEachParameterGroup) {
  Trainer<float> t(tiny_run());
  std::map<std::string, AlignedVector<float>> before;
  t.model().visit_all([&](const std::string& n, Param<float>& p) { before[n] = p.value.storage(); });
  t.step(make_batch<float>(1, 2, 3), make_batch<float>(2, 2, 1));
  int changed = 0;
  t.model().visit_all([&](const std::string& n, Param<float>& p) { changed += p.value.storage() != before[n]; });
  // every parameter sits on some loss path, so all receive an update
  EXPECT_EQ(changed, static_cast<int>(before.size()));
}

TEST(Trainer, ReportCarriesEveryTerm) {
  Trainer<float> t(tiny_run());
  auto r = t.step(make_batch<float>(1, 2, 3), make_batch<float>(2, 2, 1));
  auto j = r.to_json();
  for (const char* key : {"gen.a2b.image_recon", "gen.a2b.content_recon", "gen.a2b.style_recon",
                          "gen.a2b.adversarial", "gen.a2b.ocdp", "gen.b2a.image_recon",
                          "gen.b2a.adversarial", "dis.a2b.adversarial", "dis.b2a.adversarial",
                          "gen.total", "dis.total"}) {
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(j[key].is_number()) << key;
  }
}

TEST(Trainer, OcdpAbsentWithoutVehicles) {
  Trainer<float> t(tiny_run());
  auto r = t.step(make_batch<float>(1, 2, 3, false), make_batch<float>(2, 2, 1));
  EXPECT_FALSE(r.generator.get("gen.a2b.ocdp").has_value());
  EXPECT_TRUE(std::isfinite(r.generator.total));
}

TEST(Trainer, DeterministicForFixedSeeds) {
  Trainer<float> a(tiny_run()), b(tiny_run());
  for (int s = 0; s < 4; ++s) {
    auto ba = source<float>(Domain::rgb, 1)(s), bb = source<float>(Domain::thermal, 2)(s);
    EXPECT_EQ(a.step(ba, bb), b.step(ba, bb));
  }
  EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));
}

TEST(Trainer, RejectsMismatchedBatches) {
  Trainer<float> t(tiny_run());
  auto ba = make_batch<float>(1, 2, 3);
  EXPECT_THROW(t.step(make_batch<float>(1, 2, 1), make_batch<float>(2, 2, 1)), DimensionError);
  ba.masks.pop_back();
  EXPECT_THROW(t.step(ba, make_batch<float>(2, 2, 1)), DimensionError);
}

TEST(Trainer, GeneratorGradientMatchesFiniteDifferences) {
  // End-to-end check of the hand-written backward pass: d(total)/d(param)
  // against central differences, for a sample of entries of every
  // generator-side parameter.
  auto cfg = tiny_run();
  cfg.train.loss_weights = {2.0, 0.7, 0.9, 1.3, 0.5};
  Trainer<double> t(cfg);
  // Fresh biases are exactly zero, which parks dead-input pixels on the ReLU
  // kink where central differences are meaningless. Move off it.
  Rng jitter(8);
  t.model().visit_all([&](const std::string& n, Param<double>& p) {
    if (n.ends_with(".bias")) {
      for (auto& v : p.value.span()) v += jitter.uniform(-0.05, 0.05);
    }
  });
  auto ba = make_batch<double>(31, 2, 3), bb = make_batch<double>(32, 2, 1);
  t.generator_optimizer().zero_grad();
  t.generator_loss(ba, bb, true);
  Rng pick(4);
  double worst = 0.0;
  std::string worst_name;
  for (auto& slot : t.generator_optimizer().slots()) {
    auto& p = *slot.param;
    for (int trial = 0; trial < 3; ++trial) {
      const size_t i = pick.uniform_int(p.value.size());
      const double keep = p.value[i], h = 1e-6;
      p.value[i] = keep + h;
      const double up = t.generator_loss(ba, bb, false).total;
      p.value[i] = keep - h;
      const double down = t.generator_loss(ba, bb, false).total;
      p.value[i] = keep;
      const double num = (up - down) / (2 * h);
      const double err = std::abs(num - p.grad[i]) / std::max({std::abs(num), std::abs(p.grad[i]), 1e-3});
      if (err > worst) {
        worst = err;
        worst_name = slot.name;
      }
    }
  }
  EXPECT_LT(worst, 1e-3) << worst_name;
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  auto dir = testutil::temp_dir("ckpt_rt");
  Trainer<float> t(tiny_run());
  auto sa = source<float>(Domain::rgb, 1), sb = source<float>(Domain::thermal, 2);
  for (int s = 0; s < 2; ++s) t.step(sa(s), sb(s));
  save_checkpoint(t, dir / "c.bin");
  auto u = load_checkpoint<float>(dir / "c.bin");
  EXPECT_EQ(u.iteration(), 2);
  EXPECT_EQ(flat_params(u.model()), flat_params(t.model()));
  EXPECT_EQ(u.generator_optimizer().step_count(), 2);
  for (size_t i = 0; i < t.generator_optimizer().slots().size(); ++i) {
    EXPECT_EQ(u.generator_optimizer().slots()[i].m, t.generator_optimizer().slots()[i].m);
    EXPECT_EQ(u.generator_optimizer().slots()[i].v, t.generator_optimizer().slots()[i].v);
  }
  // forward passes agree bitwise
  auto ba = sa(7);
  auto styles = t.sample_styles(0, 2, 2).to_b;
  auto x1 = t.model().translate(ba.images, ba.masks, styles);
  auto x2 = u.model().translate(ba.images, ba.masks, styles);
  EXPECT_EQ(x1.storage(), x2.storage());
  // and training continues identically
  EXPECT_EQ(t.step(sa(2), sb(2)), u.step(sa(2), sb(2)));
}

TEST(Checkpoint, RejectsVersionMismatchAndNamesMissingFields) {
  auto dir = testutil::temp_dir("ckpt_bad");
  Trainer<float> t(tiny_run());
  save_checkpoint(t, dir / "c.bin");
  auto a = Archive::load(dir / "c.bin");
  a.metadata["format_version"] = kCheckpointFormatVersion + 1;
  a.save(dir / "v.bin");
  try {
    load_checkpoint<float>(dir / "v.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("format_version"), std::string::npos);
  }
  a = Archive::load(dir / "c.bin");
  a.metadata.erase("iteration");
  a.save(dir / "m.bin");
  try {
    load_checkpoint<float>(dir / "m.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint<double>(dir / "c.bin"), FormatError);
}

TEST(Fit, WritesLogsAndCheckpointsAndResumesExactly) {
  auto dir = testutil::temp_dir("fit");
  auto sa = source<float>(Domain::rgb, 1), sb = source<float>(Domain::thermal, 2);

  Trainer<float> full(tiny_run());
  auto res = fit(full, sa, sb, {dir / "full", {}});
  EXPECT_EQ(res.iterations, 6);
  EXPECT_EQ(res.periodic_checkpoints.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "full" / "config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "full" / "checkpoints" / "final.bin"));
  EXPECT_TRUE(std::filesystem::exists(checkpoint_path(dir / "full", 4)));

  // interrupted run: stop after 3 steps, resume from the step-2 checkpoint
  auto cfg = tiny_run();
  cfg.train.iterations = 3;
  Trainer<float> part(cfg);
  fit(part, sa, sb, {dir / "part", {}});
  auto resumed = load_checkpoint<float>(checkpoint_path(dir / "part", 2));
  EXPECT_EQ(resumed.iteration(), 2);
  // the resumed trainer keeps its stored config; extend the horizon
  auto cfg6 = resumed.config();
  cfg6.train.iterations = 6;
  save_checkpoint(resumed, dir / "tmp.bin");
  auto a = Archive::load(dir / "tmp.bin");
  a.metadata["config"] = to_json(cfg6);
  a.save(dir / "tmp.bin");
  auto cont = load_checkpoint<float>(dir / "tmp.bin");
  fit(cont, sa, sb, {dir / "part", {}});
  EXPECT_EQ(flat_params(cont.model()), flat_params(full.model()));

  std::ifstream log(dir / "part" / "metrics.jsonl");
  std::vector<int64_t> its;
  std::string line;
  while (std::getline(log, line)) its.push_back(nlohmann::json::parse(line)["iteration"].get<int64_t>());
  EXPECT_EQ(its, (std::vector<int64_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Fit, DivergenceNamesLastGoodCheckpoint) {
  auto dir = testutil::temp_dir("fit_nan");
  auto sa = source<float>(Domain::rgb, 1);
  BatchSource<float> bad = [&](int64_t step) {
    auto b = source<float>(Domain::thermal, 2)(step);
    if (step == 3) b.images[0] = std::numeric_limits<float>::quiet_NaN();
    return b;
  };
  Trainer<float> t(tiny_run());
  try {
    fit(t, sa, bad, {dir, {}});
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.iteration(), 3);
    EXPECT_NE(std::string(e.what()).find("ckpt_000002"), std::string::npos) << e.what();
  }
}
