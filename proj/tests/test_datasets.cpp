#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "coadain/datasets.hpp"
#include "test_util.hpp"

using namespace coadain;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_triple(const fs::path& root, const std::string& stem, int h, int w, uint8_t label = 1,
                  bool rgb = true, bool thermal = true, bool seg = true) {
  if (rgb) {
    auto im = PngImage::blank(w, h, 3, 8);
    std::fill(im.data.begin(), im.data.end(), 100);
    write_png(root / "rgb" / (stem + ".png"), im);
  }
  if (thermal) write_png(root / "thermal" / (stem + ".png"), PngImage::blank(w, h, 1, 16));
  if (seg) {
    auto im = PngImage::blank(w, h, 1, 8);
    std::fill(im.data.begin(), im.data.end(), label);
    write_png(root / "seg" / (stem + ".png"), im);
  }
}

}  // namespace

TEST(Png, RoundTripsEightAndSixteenBit) {
  auto dir = testutil::temp_dir("png_rt");
  Rng rng(1);
  for (auto [c, depth] : {std::pair{3, 8}, {1, 16}, {1, 8}}) {
    auto im = PngImage::blank(7, 5, c, depth);
    for (auto& v : im.data) v = static_cast<uint16_t>(rng.uniform_int(depth == 8 ? 256 : 65536));
    write_png(dir / "x.png", im);
    auto back = read_png(dir / "x.png");
    EXPECT_EQ(back.channels, c);
    EXPECT_EQ(back.bit_depth, depth);
    EXPECT_EQ(back.data, im.data);
  }
  auto bad = PngImage::blank(2, 2, 1, 8);
  bad.data[0] = 300;
  EXPECT_THROW(write_png(dir / "b.png", bad), ValidationError);
  std::ofstream(dir / "junk.png") << "nope";
  EXPECT_THROW(read_png(dir / "junk.png"), FormatError);
  EXPECT_THROW(read_png(dir / "none.png"), IoError);
}

TEST(Scan, EmptyDirectoryGivesEmptyManifestWithWarning) {
  auto dir = testutil::temp_dir("scan_empty");
  auto m = scan_dataset(dir, "train", {{0, 0}, {1, 1}});
  EXPECT_TRUE(m.empty());
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_THROW(scan_dataset(dir / "missing", "train", {}), IoError);
}

TEST(Scan, ReportsOrphansAndSortsByStem) {
  auto dir = testutil::temp_dir("scan_orphan");
  for (const char* s : {"c", "a", "b"}) write_triple(dir, s, 4, 6);
  write_triple(dir, "d", 4, 6, 1, true, false, false);
  auto m = scan_dataset(dir, "train", {{0, 0}, {1, 1}});
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.entries[0].stem, "a");
  EXPECT_EQ(m.entries[2].stem, "c");
  ASSERT_EQ(m.orphans.size(), 1u);
  EXPECT_EQ(m.orphans[0], "d: missing thermal, seg");
}

TEST(Scan, FreiburgLayoutFixtureListsEntriesInFilenameOrder) {
  auto dir = testutil::temp_dir("scan_fixture");
  // Freiburg-style stems; vehicle-like ids fold into component 0
  const std::vector<std::string> stems{"fl_ir_aligned_1570722156_952177040", "fl_ir_aligned_1570722157_052178240",
                                       "fl_ir_aligned_1570722157_152179440", "fl_ir_aligned_1570722157_252180640",
                                       "fl_ir_aligned_1570722157_352181840"};
  for (size_t i = 0; i < stems.size(); ++i) write_triple(dir, stems[4 - i], 8, 16, static_cast<uint8_t>(i % 2 ? 13 : 7));
  std::map<int, int> lm{{7, 1}, {13, 0}};
  auto m = scan_dataset(dir, "test", lm);
  ASSERT_EQ(m.size(), 5u);
  for (size_t i = 0; i < stems.size(); ++i) EXPECT_EQ(m.entries[i].stem, stems[i]);
  EXPECT_EQ(m.split, "test");
}

TEST(Scan, UnmappedLabelIsNamed) {
  auto dir = testutil::temp_dir("scan_label");
  write_triple(dir, "a", 4, 4, 42);
  try {
    scan_dataset(dir, "train", {{0, 0}, {1, 1}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(Preprocess, ConstantGrayAndNormalisation) {
  auto rgb = PngImage::blank(14, 8, 3, 8);
  std::fill(rgb.data.begin(), rgb.data.end(), 51);
  auto th = PngImage::blank(14, 8, 1, 16);
  std::fill(th.data.begin(), th.data.end(), 3000);
  auto seg = PngImage::blank(14, 8, 1, 8);
  std::fill(seg.data.begin(), seg.data.end(), 9);
  PreprocessOptions o;
  o.height = 4;
  o.width = 8;
  o.thermal_min = 1000;
  o.thermal_max = 5000;
  o.label_map = {{9, 1}};
  auto s = preprocess<double>(rgb, th, seg, o);
  for (double v : s.rgb.span()) EXPECT_NEAR(v, 51 / 127.5 - 1, 1e-12);
  for (double v : s.thermal.span()) EXPECT_NEAR(v, 0.0, 1e-12);
  // only background labels: the mask is all component 1
  EXPECT_EQ(s.mask.count(1), 32u);
  EXPECT_FALSE(s.mask.present(0));
}

TEST(Preprocess, ValuesStayInRangeAndMaskIsPartition) {
  Rng rng(3);
  auto rgb = PngImage::blank(20, 10, 3, 8), th = PngImage::blank(20, 10, 1, 16), seg = PngImage::blank(20, 10, 1, 8);
  for (auto& v : rgb.data) v = static_cast<uint16_t>(rng.uniform_int(256));
  for (auto& v : th.data) v = static_cast<uint16_t>(rng.uniform_int(65536));
  for (auto& v : seg.data) v = static_cast<uint16_t>(rng.uniform_int(2));
  PreprocessOptions o;
  o.height = 6;
  o.width = 12;
  o.thermal_min = 10000;  // values below/above the recorded range are clamped
  o.thermal_max = 50000;
  auto s = preprocess<float>(rgb, th, seg, o);
  for (float v : s.rgb.span()) EXPECT_TRUE(v >= -1.f && v <= 1.f);
  for (float v : s.thermal.span()) EXPECT_TRUE(v >= -1.f && v <= 1.f);
  auto oh = s.mask.one_hot<float>();
  for (size_t p = 0; p < s.mask.pixels(); ++p) EXPECT_EQ(oh[p] + oh[s.mask.pixels() + p], 1.f);
}

TEST(Preprocess, CheckerboardSegMatchesDownsampleMask) {
  auto rgb = PngImage::blank(16, 8, 3, 8), th = PngImage::blank(16, 8, 1, 16), seg = PngImage::blank(16, 8, 1, 8);
  std::vector<uint8_t> labels(8 * 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) {
      seg.at(y, x) = (x + y) % 2;
      labels[y * 16 + x] = (x + y) % 2;
    }
  PreprocessOptions o;
  o.height = 4;
  o.width = 8;
  auto s = preprocess<double>(rgb, th, seg, o);
  EXPECT_EQ(s.mask, downsample_mask(ComponentMask(8, 16, 2, labels), 4, 8));
}

TEST(Preprocess, BilinearHalfPixelOracle) {
  // 2x upsampling of a 1x2 ramp with half-pixel centres: [a, .75a+.25b, .25a+.75b, b]
  std::vector<double> src{0.0, 100.0};
  auto out = resize_bilinear(src, 1, 2, 1, 1, 4);
  EXPECT_NEAR(out[0], 0.0, 1e-12);
  EXPECT_NEAR(out[1], 25.0, 1e-12);
  EXPECT_NEAR(out[2], 75.0, 1e-12);
  EXPECT_NEAR(out[3], 100.0, 1e-12);
  // 2x downsampling averages neighbouring pairs
  std::vector<double> src4{0, 10, 20, 30};
  auto down = resize_bilinear(src4, 1, 4, 1, 1, 2);
  EXPECT_NEAR(down[0], 5.0, 1e-12);
  EXPECT_NEAR(down[1], 25.0, 1e-12);
}

TEST(Preprocess, SizeMismatchRejected) {
  auto rgb = PngImage::blank(16, 8, 3, 8), th = PngImage::blank(16, 9, 1, 16), seg = PngImage::blank(16, 8, 1, 8);
  EXPECT_THROW(preprocess<float>(rgb, th, seg, PreprocessOptions{}), ValidationError);
  PreprocessOptions o;
  o.source_height = 320;
  o.source_width = 700;
  auto th2 = PngImage::blank(16, 8, 1, 16);
  EXPECT_THROW(preprocess<float>(rgb, th2, seg, o), ValidationError);
}

TEST(Synthetic, TemperatureChangesThermalInsideVehicleOnly) {
  SceneSpec a;
  a.vehicles = {{10, 30, 30, 14, 0.6, 0.4}, {70, 40, 24, 12, 0.8, 0.7}};
  a.seed = 5;
  SceneSpec b = a;
  b.vehicles[0].temperature = 0.9;
  auto ia = render_scene(a), ib = render_scene(b);
  EXPECT_EQ(ia.rgb.data, ib.rgb.data);
  EXPECT_EQ(ia.seg.data, ib.seg.data);
  int inside_diff = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const bool in = detail::in_vehicle(a.vehicles[0], y, x);
      if (!in) {
        EXPECT_EQ(ia.thermal.at(y, x), ib.thermal.at(y, x));
      } else {
        inside_diff += ia.thermal.at(y, x) != ib.thermal.at(y, x);
      }
    }
  EXPECT_GT(inside_diff, 100);
}

TEST(Synthetic, AlbedoChangesRgbOnly) {
  SceneSpec a;
  a.vehicles = {{10, 30, 30, 14, 0.6, 0.4}};
  SceneSpec b = a;
  b.vehicles[0].albedo = 0.9;
  auto ia = render_scene(a), ib = render_scene(b);
  EXPECT_EQ(ia.thermal.data, ib.thermal.data);
  EXPECT_NE(ia.rgb.data, ib.rgb.data);
}

TEST(Synthetic, ZeroVehiclesAndBoundsAndDeterminism) {
  SceneSpec s;
  auto t = generate_synthetic_scene<float>(s);
  EXPECT_EQ(t.mask.count(1), 64u * 128u);
  SceneSpec bad;
  bad.vehicles = {{120, 10, 20, 10, 0.5, 0.5}};
  EXPECT_THROW(render_scene(bad), ValidationError);
  auto spec = random_scene_spec(77, 64, 128);
  EXPECT_EQ(render_scene(spec).thermal.data, render_scene(spec).thermal.data);
  EXPECT_NO_THROW(spec.validate());
}

TEST(Synthetic, WriterIsByteIdenticalPerSeed) {
  auto dir = testutil::temp_dir("synth");
  write_synthetic_dataset(dir / "a", 10, 3);
  write_synthetic_dataset(dir / "b", 10, 3);
  for (const char* sub : {"rgb", "thermal", "seg"}) {
    int files = 0;
    for (const auto& f : fs::directory_iterator(dir / "a" / sub)) {
      ++files;
      EXPECT_EQ(slurp(f.path()), slurp(dir / "b" / sub / f.path().filename()));
    }
    EXPECT_EQ(files, 10);
  }
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_THROW(write_synthetic_dataset(dir / "c", 0, 3), ValidationError);
  // read back through the ordinary dataset path
  auto m = scan_dataset(dir / "a", "train", {{0, 0}, {1, 1}});
  PreprocessOptions o;
  o.height = 64;
  o.width = 128;
  auto data = load_dataset<float>(m, o);
  auto direct = generate_synthetic_scene<float>(random_scene_spec(derive_seed(3, 4), 64, 128));
  EXPECT_EQ(data.samples[4].rgb.storage(), direct.rgb.storage());
  EXPECT_EQ(data.samples[4].mask, direct.mask);
}

TEST(Batches, CountsAndDeterminism) {
  BatchIterator it(10, 4, 1);
  EXPECT_EQ(it.batches_per_epoch(), 2u);
  std::set<size_t> seen;
  for (int s = 0; s < 2; ++s)
    for (size_t i : it.batch_at(s)) seen.insert(i);
  EXPECT_EQ(seen.size(), 8u);
  BatchIterator again(10, 4, 1);
  for (int s = 0; s < 7; ++s) EXPECT_EQ(it.batch_at(s), again.batch_at(s));
  EXPECT_THROW(BatchIterator(3, 4, 1), ValidationError);
  EXPECT_THROW(BatchIterator(3, 0, 1), ValidationError);
}

TEST(Batches, SeedsGiveDifferentPermutations) {
  // Over 100 seeds the epoch orders are (almost surely) all distinct and the
  // first slot is spread over every index.
  std::set<std::vector<size_t>> orders;
  std::vector<int> first(10, 0);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto o = BatchIterator(10, 2, seed).epoch_order(0);
    orders.insert(o);
    ++first[o[0]];
  }
  EXPECT_EQ(orders.size(), 100u);
  for (int c : first) {
    EXPECT_GT(c, 0);
    EXPECT_LT(c, 30);
  }
}
