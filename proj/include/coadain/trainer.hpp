#pragma once

// Bidirectional unpaired training: one discriminator update followed by one
// generator update per step, checkpointing, and the metrics log.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/archive.hpp"
#include "coadain/batch.hpp"
#include "coadain/config.hpp"
#include "coadain/losses.hpp"
#include "coadain/nets.hpp"
#include "coadain/optim.hpp"
#include "coadain/rng.hpp"

namespace coadain {

inline constexpr int kCheckpointFormatVersion = 1;

struct StepReport {
  LossReport generator;
  LossReport discriminator;

  /// Flat record: "gen.<stream>.<term>" / "dis.<stream>.<term>" plus both totals.
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto* r : {&generator, &discriminator}) {
      for (const auto& t : r->terms) {
        j[t.key()] = t.value ? nlohmann::json(*t.value) : nlohmann::json(nullptr);
      }
    }
    j["gen.total"] = generator.total;
    j["dis.total"] = discriminator.total;
    return j;
  }

  bool operator==(const StepReport&) const = default;
};

/// Raised when a loss turns non-finite; carries whatever was computed.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, int64_t iteration)
      : NumericError(what), iteration_(iteration) {}
  int64_t iteration() const { return iteration_; }

 private:
  int64_t iteration_;
};

namespace detail {

template <class T>
Tensor<T> scaled(Tensor<T> t, double w) {
  const T s = static_cast<T>(w);
  for (auto& v : t.span()) v *= s;
  return t;
}

template <class T>
void scale_all(std::vector<Tensor<T>>& ts, double w) {
  for (auto& t : ts) t = scaled(std::move(t), w);
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.n(), t.c(), t.h(), t.w());
}

/// Runs every style encoder of a bank and assembles per-sample code sets.
template <class T>
std::vector<StyleCodeSet<T>> encode_bank(const std::vector<StyleEncoder<T>>& bank,
                                         const Tensor<T>& images,
                                         std::span<const ComponentMask> masks,
                                         std::vector<typename StyleEncoder<T>::Trace>* traces) {
  std::vector<StyleCodeSet<T>> sets(images.n());
  if (traces) traces->assign(bank.size(), {});
  for (size_t k = 0; k < bank.size(); ++k) {
    auto codes = bank[k].forward(images, masks, traces ? &(*traces)[k] : nullptr);
    for (int i = 0; i < images.n(); ++i) sets[i].codes.push_back(std::move(codes[i]));
  }
  return sets;
}

/// Back-propagates per-sample, per-component code gradients through a bank;
/// returns the image gradient. Codes that were absent receive nothing.
template <class T>
Tensor<T> backward_bank(std::vector<StyleEncoder<T>>& bank,
                        std::vector<typename StyleEncoder<T>::Trace>& traces,
                        const std::vector<StyleCodeSet<T>>& codes,
                        const std::vector<std::vector<std::vector<T>>>& grads, double weight,
                        const Tensor<T>& like) {
  Tensor<T> g = zeros_like(like);
  for (size_t k = 0; k < bank.size(); ++k) {
    std::vector<std::vector<T>> gk(codes.size());
    bool any = false;
    for (size_t i = 0; i < codes.size(); ++i) {
      if (!codes[i][static_cast<int>(k)].present || grads[i].size() <= k || grads[i][k].empty()) continue;
      gk[i] = grads[i][k];
      for (auto& v : gk[i]) v *= static_cast<T>(weight);
      any = true;
    }
    if (any) g += bank[k].backward(traces[k], gk);
  }
  return g;
}

}  // namespace detail

/// Model, both optimizers and the iteration counter.
template <class T>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.model.validate();
    cfg_.train.validate();
    model_ = std::make_unique<Model<T>>(cfg_.model);
    const AdamOptions opts{cfg_.train.learning_rate, cfg_.train.adam_beta1, cfg_.train.adam_beta2,
                           1e-8, cfg_.train.weight_decay};
    gen_opt_ = Adam<T>(opts);
    dis_opt_ = Adam<T>(opts);
    gen_opt_.bind([&](auto&& f) { model_->visit_generator(f); });
    dis_opt_.bind([&](auto&& f) { model_->visit_discriminator(f); });
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;

  const RunConfig& config() const { return cfg_; }
  Model<T>& model() { return *model_; }
  const Model<T>& model() const { return *model_; }
  Adam<T>& generator_optimizer() { return gen_opt_; }
  Adam<T>& discriminator_optimizer() { return dis_opt_; }
  const Adam<T>& generator_optimizer() const { return gen_opt_; }
  const Adam<T>& discriminator_optimizer() const { return dis_opt_; }
  int64_t iteration() const { return iteration_; }
  void set_iteration(int64_t it) { iteration_ = it; }

  /// Moves the training horizon, e.g. to extend a resumed run. Only the
  /// iteration count changes; everything else stays as stored.
  void set_total_iterations(int64_t n) {
    if (n < 1) throw ValidationError("train.iterations must be >= 1");
    cfg_.train.iterations = n;
  }

  /// Style codes sampled for step `iteration`: targets for the a->b and
  /// b->a translations and the second a->b sampling that differs from the
  /// first in the vehicle code only.
  struct SampledStyles {
    std::vector<StyleCodeSet<T>> to_b;
    std::vector<StyleCodeSet<T>> to_b_alt;
    std::vector<StyleCodeSet<T>> to_a;
  };

  SampledStyles sample_styles(int64_t iteration, int na, int nb) const {
    Rng rng(derive_seed(cfg_.train.seed, static_cast<uint64_t>(iteration), hash_tag("styles")));
    const int k = cfg_.model.num_components, d = cfg_.model.style_dim;
    SampledStyles s;
    for (int i = 0; i < na; ++i) s.to_b.push_back(sample_style_set<T>(rng, k, d));
    for (int i = 0; i < na; ++i) s.to_b_alt.push_back(resample_component(s.to_b[i], kVehicleComponent, rng));
    for (int i = 0; i < nb; ++i) s.to_a.push_back(sample_style_set<T>(rng, k, d));
    return s;
  }

  /// One training step: discriminator update, then generator update.
  StepReport step(const Batch<T>& ba, const Batch<T>& bb) {
    check_batch(ba, Domain::rgb);
    check_batch(bb, Domain::thermal);
    // The discriminator update does not touch the generator networks, so one
    // generator forward serves both updates.
    Forward f = forward(ba, bb);
    StepReport report;
    report.discriminator = discriminator_update(f, ba, bb);
    gen_opt_.zero_grad();
    report.generator = generator_pass(f, ba, bb, true);
    gen_opt_.step();
    ++iteration_;
    return report;
  }

  /// Generator objective at the current parameters and iteration, without
  /// updating anything. With `accumulate` the gradients are added to the
  /// generator parameters' grad buffers.
  LossReport generator_loss(const Batch<T>& ba, const Batch<T>& bb, bool accumulate) {
    check_batch(ba, Domain::rgb);
    check_batch(bb, Domain::thermal);
    Forward f = forward(ba, bb);
    return generator_pass(f, ba, bb, accumulate);
  }

 private:
  using CTrace = typename ContentEncoder<T>::Trace;
  using STraces = std::vector<typename StyleEncoder<T>::Trace>;
  using GTrace = typename Generator<T>::Trace;
  using DTrace = typename Discriminator<T>::Trace;

  struct Forward {
    SampledStyles styles;
    CTrace tca, tcb;
    Tensor<T> c_a, c_b;
    STraces tsa, tsb;
    std::vector<StyleCodeSet<T>> s_a, s_b;
    GTrace tg_aa, tg_bb, tg_ab, tg_ab2, tg_ba;
    Tensor<T> x_aa, x_bb, x_ab, x_ab2, x_ba;
  };

  bool ocdp_possible() const { return cfg_.model.num_components > kVehicleComponent; }

  Forward forward(const Batch<T>& ba, const Batch<T>& bb) {
    auto& A = model_->nets(Domain::rgb);
    auto& B = model_->nets(Domain::thermal);
    const std::span<const ComponentMask> ma(ba.masks), mb(bb.masks);
    Forward f;
    f.styles = sample_styles(iteration_, ba.size(), bb.size());
    f.c_a = A.content.forward(ba.images, ma, &f.tca);
    f.c_b = B.content.forward(bb.images, mb, &f.tcb);
    f.s_a = detail::encode_bank(A.style, ba.images, ma, &f.tsa);
    f.s_b = detail::encode_bank(B.style, bb.images, mb, &f.tsb);
    f.x_aa = A.generator.forward(f.c_a, ma, f.s_a, &f.tg_aa);
    f.x_bb = B.generator.forward(f.c_b, mb, f.s_b, &f.tg_bb);
    f.x_ab = B.generator.forward(f.c_a, ma, f.styles.to_b, &f.tg_ab);
    f.x_ba = A.generator.forward(f.c_b, mb, f.styles.to_a, &f.tg_ba);
    if (ocdp_possible()) f.x_ab2 = B.generator.forward(f.c_a, ma, f.styles.to_b_alt, &f.tg_ab2);
    return f;
  }

  LossReport discriminator_update(const Forward& f, const Batch<T>& ba, const Batch<T>& bb) {
    const LossWeights& w = cfg_.train.loss_weights;
    auto& A = model_->nets(Domain::rgb);
    auto& B = model_->nets(Domain::thermal);
    dis_opt_.zero_grad();
    DTrace tra, tfa, trb, tfb;
    auto lra = A.discriminator.forward(ba.images, &tra);
    auto lfa = A.discriminator.forward(f.x_ba, &tfa);
    auto lrb = B.discriminator.forward(bb.images, &trb);
    auto lfb = B.discriminator.forward(f.x_ab, &tfb);
    auto ra = adversarial_loss<T>(lra, AdversarialRole::discriminator, true);
    auto fa = adversarial_loss<T>(lfa, AdversarialRole::discriminator, false);
    auto rb = adversarial_loss<T>(lrb, AdversarialRole::discriminator, true);
    auto fb = adversarial_loss<T>(lfb, AdversarialRole::discriminator, false);
    LossReport report;
    try {
      // D_b judges a->b translations, D_a judges b->a
      report = total_loss({{"adversarial", "a2b", "discriminator", w.adversarial,
                            static_cast<double>(rb.value) + static_cast<double>(fb.value)},
                           {"adversarial", "b2a", "discriminator", w.adversarial,
                            static_cast<double>(ra.value) + static_cast<double>(fa.value)}});
    } catch (const NumericError& e) {
      throw TrainingDiverged(diagnostic(e.what()), iteration_);
    }
    if (w.adversarial > 0) {
      for (auto* r : {&ra, &fa, &rb, &fb}) detail::scale_all(r->grad_logits, w.adversarial);
      A.discriminator.backward(tra, ra.grad_logits);
      A.discriminator.backward(tfa, fa.grad_logits);
      B.discriminator.backward(trb, rb.grad_logits);
      B.discriminator.backward(tfb, fb.grad_logits);
    }
    dis_opt_.step();
    return report;
  }

  LossReport generator_pass(Forward& f, const Batch<T>& ba, const Batch<T>& bb, bool backward) {
    const LossWeights& w = cfg_.train.loss_weights;
    auto& A = model_->nets(Domain::rgb);
    auto& B = model_->nets(Domain::thermal);
    const std::span<const ComponentMask> ma(ba.masks), mb(bb.masks);
    const auto& styles = f.styles;

    DTrace td_ab, td_ba;
    auto l_ab = B.discriminator.forward(f.x_ab, &td_ab);
    auto l_ba = A.discriminator.forward(f.x_ba, &td_ba);
    auto adv_ab = adversarial_loss<T>(l_ab, AdversarialRole::generator, true);
    auto adv_ba = adversarial_loss<T>(l_ba, AdversarialRole::generator, true);

    CTrace tc_ab, tc_ba;
    Tensor<T> c_ab = B.content.forward(f.x_ab, ma, &tc_ab);
    Tensor<T> c_ba = A.content.forward(f.x_ba, mb, &tc_ba);
    STraces ts_ab, ts_ba;
    auto s_ab = detail::encode_bank(B.style, f.x_ab, ma, &ts_ab);
    auto s_ba = detail::encode_bank(A.style, f.x_ba, mb, &ts_ba);

    auto rec_a = image_recon_loss(f.x_aa, ba.images);
    auto rec_b = image_recon_loss(f.x_bb, bb.images);
    auto lat_ab = latent_recon_loss<T>(c_ab, f.c_a, s_ab, styles.to_b, ma);
    auto lat_ba = latent_recon_loss<T>(c_ba, f.c_b, s_ba, styles.to_a, mb);

    // diversity penalty, averaged over the samples that contain vehicles
    std::optional<double> ocdp_value;
    Tensor<T> g_ab = detail::zeros_like(f.x_ab);
    Tensor<T> g_ab2;
    if (ocdp_possible()) {
      g_ab2 = detail::zeros_like(f.x_ab);
      std::vector<OcdpResult<T>> per;
      int present = 0;
      double sum = 0.0;
      for (int i = 0; i < ba.size(); ++i) {
        per.push_back(ocdp_loss<T>(f.x_ab.slice(i), f.x_ab2.slice(i), ma[i], styles.to_b[i],
                                   styles.to_b_alt[i], kVehicleComponent));
        if (per.back().present) {
          ++present;
          sum += static_cast<double>(per.back().value);
        }
      }
      if (present > 0) {
        ocdp_value = sum / present;
        const T scale = static_cast<T>(w.ocdp / present);
        for (int i = 0; i < ba.size(); ++i) {
          if (!per[i].present) continue;
          auto d1 = g_ab.sample(i);
          auto d2 = g_ab2.sample(i);
          for (size_t j = 0; j < d1.size(); ++j) {
            d1[j] += scale * per[i].grad_out1[j];
            d2[j] += scale * per[i].grad_out2[j];
          }
        }
      }
    }

    auto opt = [](const std::optional<T>& v) {
      return v ? std::optional<double>(static_cast<double>(*v)) : std::nullopt;
    };
    StreamTerms a2b{static_cast<double>(rec_a.value), static_cast<double>(lat_ab.content.value),
                    opt(lat_ab.style.value), static_cast<double>(adv_ab.value), ocdp_value};
    StreamTerms b2a{static_cast<double>(rec_b.value), static_cast<double>(lat_ba.content.value),
                    opt(lat_ba.style.value), static_cast<double>(adv_ba.value), std::nullopt};
    LossReport report;
    try {
      report = total_generator_loss(a2b, b2a, w);
    } catch (const NumericError& e) {
      throw TrainingDiverged(diagnostic(e.what()), iteration_);
    }
    if (!backward) return report;

    // translations: adversarial, then latent reconstruction through the
    // re-encoders. The discriminators receive gradients here too; they are
    // cleared before the next discriminator update.
    Tensor<T> g_ba = detail::zeros_like(f.x_ba);
    if (w.adversarial > 0) {
      detail::scale_all(adv_ab.grad_logits, w.adversarial);
      detail::scale_all(adv_ba.grad_logits, w.adversarial);
      g_ab += B.discriminator.backward(td_ab, adv_ab.grad_logits);
      g_ba += A.discriminator.backward(td_ba, adv_ba.grad_logits);
    }
    Tensor<T> g_ca = detail::zeros_like(f.c_a);
    Tensor<T> g_cb = detail::zeros_like(f.c_b);
    if (w.content_recon > 0) {
      g_ab += B.content.backward(tc_ab, detail::scaled(lat_ab.content.grad_a, w.content_recon));
      g_ba += A.content.backward(tc_ba, detail::scaled(lat_ba.content.grad_a, w.content_recon));
      g_ca += detail::scaled(lat_ab.content.grad_b, w.content_recon);
      g_cb += detail::scaled(lat_ba.content.grad_b, w.content_recon);
    }
    if (w.style_recon > 0) {
      if (lat_ab.style.value) {
        g_ab += detail::backward_bank(B.style, ts_ab, s_ab, lat_ab.style.grad_rt, w.style_recon, f.x_ab);
      }
      if (lat_ba.style.value) {
        g_ba += detail::backward_bank(A.style, ts_ba, s_ba, lat_ba.style.grad_rt, w.style_recon, f.x_ba);
      }
    }
    g_ca += B.generator.backward(f.tg_ab, g_ab).content;
    g_cb += A.generator.backward(f.tg_ba, g_ba).content;
    if (ocdp_value && w.ocdp > 0) g_ca += B.generator.backward(f.tg_ab2, g_ab2).content;

    // within-domain reconstructions, including the style encoders
    if (w.image_recon > 0) {
      auto ga = A.generator.backward(f.tg_aa, detail::scaled(rec_a.grad_a, w.image_recon));
      auto gb = B.generator.backward(f.tg_bb, detail::scaled(rec_b.grad_a, w.image_recon));
      g_ca += ga.content;
      g_cb += gb.content;
      detail::backward_bank(A.style, f.tsa, f.s_a, ga.styles, 1.0, ba.images);
      detail::backward_bank(B.style, f.tsb, f.s_b, gb.styles, 1.0, bb.images);
    }
    A.content.backward(f.tca, g_ca);
    B.content.backward(f.tcb, g_cb);
    return report;
  }

  void check_batch(const Batch<T>& b, Domain d) const {
    if (b.size() < 1) throw ValidationError("train_step: empty batch");
    if (b.masks.size() != static_cast<size_t>(b.size())) {
      throw DimensionError("train_step: batch has " + std::to_string(b.size()) + " images and " +
                           std::to_string(b.masks.size()) + " masks");
    }
    if (b.images.c() != cfg_.model.channels(d) || b.images.h() != cfg_.model.image_height ||
        b.images.w() != cfg_.model.image_width) {
      throw DimensionError(std::string("train_step: domain ") + domain_name(d) + " batch shape " +
                           b.images.shape_string() + " does not match the model");
    }
  }

  std::string diagnostic(const std::string& what) const {
    return "training diverged at iteration " + std::to_string(iteration_) + ": " + what;
  }

  RunConfig cfg_;
  std::unique_ptr<Model<T>> model_;
  Adam<T> gen_opt_;
  Adam<T> dis_opt_;
  int64_t iteration_ = 0;
};

// ---- checkpoints --------------------------------------------------------------

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
void save_checkpoint(const Trainer<T>& trainer, const std::filesystem::path& path) {
  Archive a;
  a.metadata = {{"format_version", kCheckpointFormatVersion},
                {"iteration", trainer.iteration()},
                {"seed", trainer.config().train.seed},
                {"dtype", dtype_name<T>()},
                {"config", to_json(trainer.config())},
                {"optimizer",
                 {{"generator_steps", trainer.generator_optimizer().step_count()},
                  {"discriminator_steps", trainer.discriminator_optimizer().step_count()}}}};
  auto& model = const_cast<Model<T>&>(trainer.model());
  model.visit_all([&](const std::string& name, Param<T>& p) {
    std::vector<int64_t> shape(p.value.shape().begin(), p.value.shape().end());
    a.put("param." + name, std::span<const T>(p.value.span()), shape);
  });
  for (const auto& [tag, opt] : {std::pair{"gen", &trainer.generator_optimizer()},
                                 std::pair{"dis", &trainer.discriminator_optimizer()}}) {
    for (const auto& s : opt->slots()) {
      a.put(std::string("adam.") + tag + ".m." + s.name, std::span<const double>(s.m));
      a.put(std::string("adam.") + tag + ".v." + s.name, std::span<const double>(s.v));
    }
  }
  a.save(path);
}

/// Loads a checkpoint written by save_checkpoint. The stored format version
/// and value type must match this build.
template <class T>
Trainer<T> load_checkpoint(const std::filesystem::path& path) {
  Archive a = Archive::load(path);
  const auto& version = a.meta("format_version");
  if (!version.is_number_integer() || version.get<int>() != kCheckpointFormatVersion) {
    throw FormatError("checkpoint " + path.string() + " has format_version " + version.dump() +
                      ", this build reads version " + std::to_string(kCheckpointFormatVersion));
  }
  if (a.meta("dtype") != dtype_name<T>()) {
    throw FormatError("checkpoint " + path.string() + " stores " + a.meta("dtype").dump() +
                      " parameters, expected " + dtype_name<T>());
  }
  RunConfig cfg;
  try {
    cfg = run_config_from_json(a.meta("config"));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path.string() + " carries an invalid config: " + e.what());
  }
  Trainer<T> t(cfg);
  t.model().visit_all([&](const std::string& name, Param<T>& p) {
    const auto& v = a.get<T>("param." + name);
    if (v.size() != p.value.size()) {
      throw FormatError("checkpoint array 'param." + name + "' has " + std::to_string(v.size()) +
                        " values, model expects " + std::to_string(p.value.size()));
    }
    std::copy(v.begin(), v.end(), p.value.span().begin());
  });
  const auto& opt_meta = a.meta("optimizer");
  for (const auto& [tag, opt, key] :
       {std::tuple{"gen", &t.generator_optimizer(), "generator_steps"},
        std::tuple{"dis", &t.discriminator_optimizer(), "discriminator_steps"}}) {
    std::map<std::string, std::vector<double>> m, v;
    for (const auto& s : opt->slots()) {
      m[s.name] = a.get<double>(std::string("adam.") + tag + ".m." + s.name);
      v[s.name] = a.get<double>(std::string("adam.") + tag + ".v." + s.name);
    }
    if (!opt_meta.contains(key)) {
      throw FormatError("archive: missing metadata field 'optimizer." + std::string(key) + "'");
    }
    opt->load_state(opt_meta.at(key).template get<int64_t>(), m, v);
  }
  t.set_iteration(a.meta("iteration").get<int64_t>());
  return t;
}

// ---- fit ------------------------------------------------------------------------

template <class T>
using BatchSource = std::function<Batch<T>(int64_t step)>;

struct FitOptions {
  std::filesystem::path run_dir;
  /// Called after every step with (completed step index, report).
  std::function<void(int64_t, const StepReport&)> on_step;
};

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> periodic_checkpoints;
  int64_t iterations = 0;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int64_t it) {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%06lld.bin", static_cast<long long>(it));
  return run_dir / "checkpoints" / name;
}

namespace detail {

/// Drops log records at or beyond `from` so a resumed run continues the
/// numbering without duplicates.
inline void trim_metrics_log(const std::filesystem::path& log, int64_t from) {
  if (!std::filesystem::exists(log)) return;
  std::ifstream in(log);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (nlohmann::json::parse(line).at("iteration").get<int64_t>() < from) keep.push_back(line);
    } catch (const nlohmann::json::exception&) {
      // a torn final line from an interrupted run
    }
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace detail

/// Runs steps until config().train.iterations, continuing from the
/// trainer's current iteration. Writes run_dir/config.json,
/// run_dir/metrics.jsonl, periodic checkpoints and checkpoints/final.bin.
template <class T>
FitResult fit(Trainer<T>& trainer, const BatchSource<T>& batches_a, const BatchSource<T>& batches_b,
              const FitOptions& opts) {
  namespace fs = std::filesystem;
  const auto& tc = trainer.config().train;
  tc.validate();
  if (!batches_a || !batches_b) throw ValidationError("fit: both domains need a batch source");
  std::error_code ec;
  fs::create_directories(opts.run_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create run directory " + opts.run_dir.string() + ": " + ec.message());
  {
    std::ofstream cfg(opts.run_dir / "config.json", std::ios::trunc);
    if (!cfg) throw IoError("cannot write " + (opts.run_dir / "config.json").string());
    cfg << to_json(trainer.config()).dump(2) << '\n';
  }
  const fs::path log_path = opts.run_dir / "metrics.jsonl";
  detail::trim_metrics_log(log_path, trainer.iteration());
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open metrics log " + log_path.string());

  FitResult result;
  std::optional<fs::path> last_good;
  const auto start = std::chrono::steady_clock::now();
  while (trainer.iteration() < tc.iterations) {
    const int64_t it = trainer.iteration();
    StepReport report;
    try {
      report = trainer.step(batches_a(it), batches_b(it));
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string(e.what()) + " at iteration " + std::to_string(it) +
                                 "; last good checkpoint: " +
                                 (last_good ? last_good->string() : std::string("none")),
                             it);
    }
    if (it % tc.log_every == 0) {
      auto rec = report.to_json();
      rec["iteration"] = it;
      rec["wall_clock"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << rec.dump() << '\n';
      log.flush();
    }
    if (opts.on_step) opts.on_step(it, report);
    const int64_t done = trainer.iteration();
    if (done % tc.checkpoint_every == 0) {
      auto p = checkpoint_path(opts.run_dir, done);
      save_checkpoint(trainer, p);
      result.periodic_checkpoints.push_back(p);
      last_good = p;
    }
  }
  result.final_checkpoint = opts.run_dir / "checkpoints" / "final.bin";
  save_checkpoint(trainer, result.final_checkpoint);
  result.iterations = trainer.iteration();
  return result;
}

}  // namespace coadain
