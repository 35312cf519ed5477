#pragma once

// Entry points behind the command-line tool. Each command reports progress
// on `out`, problems on `err`, and returns the process exit status.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/config.hpp"
#include "coadain/datasets.hpp"
#include "coadain/metrics.hpp"
#include "coadain/png_io.hpp"
#include "coadain/trainer.hpp"

namespace coadain {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kRunRootEnv = "COADAIN_RUN_ROOT";

/// Bad flag values or combinations; mapped to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Relative run directories are placed under $COADAIN_RUN_ROOT when set.
inline fs::path resolve_run_dir(const std::string& run_dir) {
  fs::path p(run_dir);
  const char* root = std::getenv(kRunRootEnv);
  if (p.is_relative() && root && *root) p = fs::path(root) / p;
  return p;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Runs `body`, translating library errors into an exit status and a message.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---- make-synthetic ---------------------------------------------------------------

struct MakeSyntheticArgs {
  fs::path out_dir;
  int num_scenes = 0;
  uint64_t seed = 0;
  int height = 64;
  int width = 128;
};

inline int cmd_make_synthetic(const MakeSyntheticArgs& a, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (a.num_scenes < 1) throw UsageError("--num-scenes must be >= 1");
    if (a.height < 8 || a.width < 8) throw UsageError("--height and --width must be >= 8");
    write_synthetic_dataset(a.out_dir, a.num_scenes, a.seed, a.height, a.width);
    out << "wrote " << a.num_scenes << " scenes to " << a.out_dir.string() << '\n';
    return kExitOk;
  });
}

// ---- train ------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  bool resume = false;
  /// Overrides train.iterations when positive.
  int64_t iterations = 0;
  bool quiet = false;
};

inline std::map<int64_t, fs::path> list_checkpoints(const fs::path& run_dir) {
  std::map<int64_t, fs::path> found;
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return found;
  static const std::regex pattern("ckpt_([0-9]+)\\.bin");
  for (const auto& f : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = f.path().filename().string();
    if (std::regex_match(name, m, pattern)) found[std::stoll(m[1].str())] = f.path();
  }
  if (fs::exists(dir / "final.bin")) {
    const auto it = Archive::load(dir / "final.bin").meta("iteration").get<int64_t>();
    if (!found.count(it)) found[it] = dir / "final.bin";
  }
  return found;
}

/// Batch streams for the two domains over one dataset. The domains are drawn
/// in independent orders, so a step never pairs an rgb image with its own
/// thermal counterpart.
inline std::pair<BatchSource<float>, BatchSource<float>> unpaired_sources(
    std::shared_ptr<const LoadedDataset<float>> data, const TrainConfig& tc) {
  auto iter_a = std::make_shared<BatchIterator>(data->size(), tc.batch_size, derive_seed(tc.seed, hash_tag("batches-a")));
  auto iter_b = std::make_shared<BatchIterator>(data->size(), tc.batch_size, derive_seed(tc.seed, hash_tag("batches-b")));
  return {[data, iter_a](int64_t s) { return data->batch(Domain::rgb, iter_a->batch_at(s)); },
          [data, iter_b](int64_t s) { return data->batch(Domain::thermal, iter_b->batch_at(s)); }};
}

inline int cmd_train(const TrainArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    RunConfig cfg = load_run_config(a.config);
    if (a.iterations > 0) cfg.train.iterations = a.iterations;
    if (cfg.data.train_root.empty()) throw ValidationError("data.train_root is not set");
    if (!fs::is_directory(cfg.data.train_root)) {
      throw IoError("data.train_root: dataset directory " + cfg.data.train_root + " does not exist");
    }
    const fs::path run_dir = resolve_run_dir(cfg.run_dir);

    std::optional<Trainer<float>> trainer;
    if (a.resume) {
      const auto ckpts = list_checkpoints(run_dir);
      if (ckpts.empty()) throw IoError("--resume: no checkpoints under " + (run_dir / "checkpoints").string());
      trainer.emplace(load_checkpoint<float>(ckpts.rbegin()->second));
      trainer->set_total_iterations(cfg.train.iterations);
      out << "resuming from " << ckpts.rbegin()->second.string() << " at iteration " << trainer->iteration()
          << '\n';
    } else {
      trainer.emplace(cfg);
    }
    const RunConfig& rc = trainer->config();

    const auto manifest = scan_dataset(rc.data.train_root, "train", rc.data.label_map);
    for (const auto& w : manifest.warnings) err << "warning: " << w << '\n';
    for (const auto& o : manifest.orphans) err << "warning: skipping " << o << '\n';
    if (manifest.empty()) throw ValidationError("no training samples under " + rc.data.train_root);
    const auto data =
        std::make_shared<const LoadedDataset<float>>(load_dataset<float>(manifest, PreprocessOptions::from(rc.model, rc.data)));
    const auto [sa, sb] = unpaired_sources(data, rc.train);

    FitOptions fo;
    fo.run_dir = run_dir;
    const int64_t every = std::max<int64_t>(1, rc.train.iterations / 20);
    if (!a.quiet) {
      fo.on_step = [&](int64_t it, const StepReport& r) {
        if (it % every == 0 || it + 1 == rc.train.iterations) {
          out << "iteration " << it << "  gen " << r.generator.total << "  dis " << r.discriminator.total
              << '\n';
        }
      };
    }
    out << "training " << manifest.size() << " samples for " << rc.train.iterations << " iterations into "
        << run_dir.string() << '\n';
    const auto res = fit(*trainer, sa, sb, fo);
    out << "final checkpoint " << res.final_checkpoint.string() << '\n';
    return kExitOk;
  });
}

// ---- translate --------------------------------------------------------------------

enum class Resample { vehicles, background, all };

inline Resample parse_resample(const std::string& s) {
  if (s == "vehicles") return Resample::vehicles;
  if (s == "background") return Resample::background;
  if (s == "all") return Resample::all;
  throw UsageError("--resample must be vehicles, background or all (got '" + s + "')");
}

inline const char* resample_name(Resample r) {
  switch (r) {
    case Resample::vehicles: return "vehicles";
    case Resample::background: return "background";
    case Resample::all: return "all";
  }
  return "?";
}

/// Style sets for one input: the first is drawn fresh, the rest vary only
/// the components selected by `mode` and copy the others from the first.
template <class T>
std::vector<StyleCodeSet<T>> translation_styles(uint64_t seed, int index, int num_styles, Resample mode,
                                                const ModelConfig& m) {
  Rng rng(derive_seed(seed, static_cast<uint64_t>(index), hash_tag("translate")));
  std::vector<StyleCodeSet<T>> sets{sample_style_set<T>(rng, m.num_components, m.style_dim)};
  for (int s = 1; s < num_styles; ++s) {
    switch (mode) {
      case Resample::all:
        sets.push_back(sample_style_set<T>(rng, m.num_components, m.style_dim));
        break;
      case Resample::vehicles:
        sets.push_back(resample_component(sets[0], kVehicleComponent, rng));
        break;
      case Resample::background: {
        auto next = sets[0];
        for (int k = 0; k < m.num_components; ++k) {
          if (k != kVehicleComponent) next = resample_component(next, k, rng);
        }
        sets.push_back(std::move(next));
        break;
      }
    }
  }
  return sets;
}

/// Translates one rgb image under several style sets at once.
template <class T>
Tensor<T> translate_many(const Model<T>& model, const Tensor<T>& rgb, const ComponentMask& mask,
                         std::span<const StyleCodeSet<T>> styles) {
  std::vector<Tensor<T>> copies(styles.size(), rgb);
  std::vector<ComponentMask> masks(styles.size(), mask);
  return model.translate(stack<T>(copies), masks, styles, Domain::rgb);
}

inline std::string output_name(const std::string& stem, int style) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_s%02d.png", style);
  return stem + buf;
}

struct TranslateArgs {
  fs::path checkpoint;
  fs::path input_dir;
  fs::path out_dir;
  int num_styles = 2;
  std::string resample = "vehicles";
  uint64_t seed = 0;
};

/// Writes <out>/<resample>/<stem>_sNN.png (16-bit thermal), the
/// preprocessed source under <out>/source/, and <out>/translate_<resample>.json.
inline int cmd_translate(const TranslateArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const Resample mode = parse_resample(a.resample);
    if (a.num_styles < 1) throw UsageError("--num-styles must be >= 1");
    if (!fs::is_directory(a.input_dir / "rgb")) {
      throw IoError("input directory " + a.input_dir.string() + " has no rgb/ subdirectory");
    }
    const auto trainer = load_checkpoint<float>(a.checkpoint);
    const RunConfig& rc = trainer.config();
    const auto opts = PreprocessOptions::from(rc.model, rc.data);

    std::vector<fs::path> inputs;
    for (const auto& f : fs::directory_iterator(a.input_dir / "rgb")) {
      if (f.is_regular_file() && f.path().extension() == ".png") inputs.push_back(f.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw UsageError("no rgb images under " + (a.input_dir / "rgb").string());

    nlohmann::json outputs = nlohmann::json::array();
    std::vector<std::string> failures;
    for (size_t i = 0; i < inputs.size(); ++i) {
      const std::string stem = inputs[i].stem().string();
      const fs::path seg = a.input_dir / "seg" / (stem + ".png");
      try {
        if (!fs::exists(seg)) throw IoError("missing segmentation " + seg.string());
        auto [rgb, mask] = preprocess_rgb<float>(read_png(inputs[i]), read_png(seg), opts);
        const auto styles = translation_styles<float>(a.seed, static_cast<int>(i), a.num_styles, mode, rc.model);
        const Tensor<float> y = translate_many<float>(trainer.model(), rgb, mask, styles);
        write_png(a.out_dir / "source" / (stem + ".png"), tensor_to_png8(rgb, 0));
        nlohmann::json files = nlohmann::json::array();
        for (int s = 0; s < a.num_styles; ++s) {
          const fs::path p = a.out_dir / resample_name(mode) / output_name(stem, s);
          write_png(p, thermal_to_png(y, s, rc.data.thermal_min, rc.data.thermal_max));
          files.push_back(p.filename().string());
        }
        outputs.push_back({{"stem", stem}, {"files", files}});
      } catch (const std::exception& e) {
        failures.push_back(stem + ": " + e.what());
        err << "error: " << stem << ": " << e.what() << '\n';
      }
    }
    write_json(a.out_dir / (std::string("translate_") + resample_name(mode) + ".json"),
               {{"checkpoint", fs::absolute(a.checkpoint).string()},
                {"input_dir", fs::absolute(a.input_dir).string()},
                {"resample", resample_name(mode)},
                {"num_styles", a.num_styles},
                {"seed", a.seed},
                {"outputs", outputs},
                {"errors", failures},
                {"config", to_json(rc)}});
    out << "translated " << outputs.size() << " of " << inputs.size() << " inputs (" << resample_name(mode)
        << ")\n";
    return failures.empty() ? kExitOk : kExitFailure;
  });
}

// ---- eval -------------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;  // optional with --real-vs-real
  fs::path config;      // preprocessing settings when no checkpoint is given
  fs::path dataset;
  std::string which;
  std::optional<uint64_t> seed;
  int sources = 0;    // 0: take eval.lpips_sources
  int pairs = 0;      // 0: take eval.lpips_pairs
  int samplings = 0;  // 0: take eval.fid_samplings
  bool real_vs_real = false;
  fs::path extractor;  // empty: eval.extractor, else the built-in one
  fs::path report;     // empty: <run dir>/eval/<which>.json
  std::string label;
};

inline FeatureExtractor resolve_extractor(const fs::path& path, int channels) {
  if (!path.empty()) return FeatureExtractor::load(path);
  return FeatureExtractor::seeded(kDefaultExtractorSeed, channels);
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (a.which != "lpips" && a.which != "lpips-vehicle" && a.which != "fid") {
      throw UsageError("--which must be lpips, lpips-vehicle or fid (got '" + a.which + "')");
    }
    if (a.real_vs_real && a.which != "fid") throw UsageError("--real-vs-real applies to --which fid only");
    if (a.checkpoint.empty() && !a.real_vs_real) throw UsageError("--checkpoint is required");

    std::optional<Trainer<float>> trainer;
    RunConfig rc;
    if (!a.checkpoint.empty()) {
      trainer.emplace(load_checkpoint<float>(a.checkpoint));
      rc = trainer->config();
    } else if (!a.config.empty()) {
      rc = load_run_config(a.config);
    }
    const uint64_t seed = a.seed.value_or(rc.eval.seed);
    const auto manifest = scan_dataset(a.dataset, "test", rc.data.label_map);
    if (manifest.empty()) throw ValidationError("no samples under " + a.dataset.string());
    const auto data = load_dataset<float>(manifest, PreprocessOptions::from(rc.model, rc.data));
    const fs::path ext_path = !a.extractor.empty() ? a.extractor : fs::path(rc.eval.extractor);
    const FeatureExtractor fx = resolve_extractor(ext_path, rc.model.thermal_channels);

    std::vector<Tensor<float>> rgb, thermal;
    std::vector<ComponentMask> masks;
    for (const auto& s : data.samples) {
      rgb.push_back(s.rgb);
      thermal.push_back(s.thermal);
      masks.push_back(s.mask);
    }

    Translator<float> translator;
    std::span<const Tensor<float>> sources = rgb;
    if (a.real_vs_real) {
      sources = thermal;
      translator = [](const Tensor<float>& src, const ComponentMask&, std::span<const StyleCodeSet<float>> st) {
        std::vector<Tensor<float>> copies(st.size(), src);
        return stack<float>(copies);
      };
    } else {
      const Model<float>& model = trainer->model();
      translator = [&model](const Tensor<float>& src, const ComponentMask& m,
                            std::span<const StyleCodeSet<float>> st) { return translate_many<float>(model, src, m, st); };
    }

    ProtocolResult r;
    if (a.which == "fid") {
      FidOptions o;
      o.samplings = a.samplings > 0 ? a.samplings : rc.eval.fid_samplings;
      o.seed = seed;
      o.num_components = rc.model.num_components;
      o.style_dim = rc.model.style_dim;
      r = fid_protocol<float>(translator, sources, masks, thermal, fx, o);
    } else {
      DiversityOptions o;
      o.num_sources = a.sources > 0 ? a.sources : rc.eval.lpips_sources;
      o.num_pairs = a.pairs > 0 ? a.pairs : rc.eval.lpips_pairs;
      o.seed = seed;
      o.mode = a.which == "lpips" ? DiversityMode::all : DiversityMode::vehicle;
      o.num_components = rc.model.num_components;
      o.style_dim = rc.model.style_dim;
      o.vehicle_component = kVehicleComponent;
      r = diversity_protocol<float>(translator, sources, masks, fx, o);
    }

    nlohmann::json report = r.to_json();
    report["dataset"] = fs::absolute(a.dataset).string();
    report["checkpoint"] = a.checkpoint.empty() ? "" : fs::absolute(a.checkpoint).string();
    report["real_vs_real"] = a.real_vs_real;
    report["values"] = r.values;
    report["config"] = to_json(rc);
    fs::path report_path = a.report;
    if (report_path.empty()) {
      const fs::path base = a.checkpoint.empty() ? fs::path(".") : a.checkpoint.parent_path().parent_path();
      report_path = base / "eval" / (a.which + ".json");
    }
    write_json(report_path, report);
    append_csv(report_path.parent_path() / "metrics.csv", r,
               a.label.empty() ? (a.checkpoint.empty() ? std::string("real") : a.checkpoint.string()) : a.label);
    out << a.which << ": " << r.mean << " +/- " << r.std << "  (report " << report_path.string() << ")\n";
    return kExitOk;
  });
}

// ---- gallery ----------------------------------------------------------------------

inline constexpr int kGalleryMargin = 4;
inline constexpr uint16_t kGalleryBackground = 255;

struct GalleryLayout {
  int panel_width = 0;
  int panel_height = 0;
  int columns = 0;
  int rows = 0;
  int width() const { return columns * panel_width + (columns + 1) * kGalleryMargin; }
  int height() const { return rows * panel_height + (rows + 1) * kGalleryMargin; }
};

namespace detail {

inline std::vector<fs::path> outputs_for(const fs::path& dir, const std::string& stem) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  const std::regex pattern(std::regex_replace(stem, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") +
                           "_s[0-9]+\\.png");
  for (const auto& f : fs::directory_iterator(dir)) {
    if (std::regex_match(f.path().filename().string(), pattern)) files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// 16-bit thermal outputs are stretched from the recorded range to 8 bits.
inline void blit(PngImage& canvas, const PngImage& panel, int x0, int y0, double lo, double hi) {
  for (int y = 0; y < panel.height; ++y) {
    for (int x = 0; x < panel.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src_c = panel.channels == 3 ? c : 0;
        double v = panel.at(y, x, src_c);
        if (panel.bit_depth == 16) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0) * 255.0;
        canvas.at(y0 + y, x0 + x, c) = static_cast<uint16_t>(std::lround(v));
      }
    }
  }
}

}  // namespace detail

struct GalleryArgs {
  fs::path run_dir;
  fs::path out_dir;
};

/// One grid per source: row one holds the source followed by the
/// vehicle-resampled outputs, row two the all-resampled outputs.
inline int cmd_gallery(const GalleryArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const fs::path src_dir = a.run_dir / "source";
    std::vector<fs::path> sources;
    if (fs::is_directory(src_dir)) {
      for (const auto& f : fs::directory_iterator(src_dir)) {
        if (f.path().extension() == ".png") sources.push_back(f.path());
      }
    }
    if (sources.empty()) throw UsageError("no translate outputs under " + a.run_dir.string());
    std::sort(sources.begin(), sources.end());

    double lo = 0.0, hi = 65535.0;
    for (const char* mode : {"vehicles", "all"}) {
      const fs::path rep = a.run_dir / (std::string("translate_") + mode + ".json");
      if (!fs::exists(rep)) continue;
      std::ifstream in(rep);
      const auto j = nlohmann::json::parse(in);
      lo = j["config"]["data"]["thermal_min"].get<double>();
      hi = j["config"]["data"]["thermal_max"].get<double>();
    }

    int written = 0;
    for (const auto& src_path : sources) {
      const std::string stem = src_path.stem().string();
      const auto vehicles = detail::outputs_for(a.run_dir / "vehicles", stem);
      const auto all = detail::outputs_for(a.run_dir / "all", stem);
      const PngImage src = read_png(src_path);
      GalleryLayout g{src.width, src.height,
                      1 + static_cast<int>(std::max(vehicles.size(), all.size())), all.empty() ? 1 : 2};
      PngImage canvas = PngImage::blank(g.width(), g.height(), 3, 8);
      std::fill(canvas.data.begin(), canvas.data.end(), kGalleryBackground);
      auto place = [&](const fs::path& p, int row, int col) {
        const PngImage panel = read_png(p);
        if (panel.width != g.panel_width || panel.height != g.panel_height) {
          throw ValidationError("gallery: " + p.string() + " does not match the source size");
        }
        detail::blit(canvas, panel, kGalleryMargin + col * (g.panel_width + kGalleryMargin),
                     kGalleryMargin + row * (g.panel_height + kGalleryMargin), lo, hi);
      };
      place(src_path, 0, 0);
      for (size_t i = 0; i < vehicles.size(); ++i) place(vehicles[i], 0, 1 + static_cast<int>(i));
      for (size_t i = 0; i < all.size(); ++i) place(all[i], 1, 1 + static_cast<int>(i));
      write_png(a.out_dir / (stem + ".png"), canvas);
      ++written;
    }
    out << "wrote " << written << " gallery images to " << a.out_dir.string() << '\n';
    return kExitOk;
  });
}

// ---- export-extractor ---------------------------------------------------------------

struct ExportExtractorArgs {
  fs::path out;
  uint64_t seed = kDefaultExtractorSeed;
  int channels = 1;
};

inline int cmd_export_extractor(const ExportExtractorArgs& a, std::ostream& out = std::cout,
                                std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (a.channels < 1) throw UsageError("--channels must be >= 1");
    const auto fx = FeatureExtractor::seeded(a.seed, a.channels);
    fx.save(a.out);
    out << fx.name() << " v" << fx.version() << " sha256 " << fx.hash() << '\n';
    return kExitOk;
  });
}

}  // namespace coadain
