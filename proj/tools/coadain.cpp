#include <CLI11.hpp>

#include "coadain/commands.hpp"

using namespace coadain;

int main(int argc, char** argv) {
  CLI::App app{"Component-aware RGB to thermal translation"};
  app.require_subcommand(1);

  MakeSyntheticArgs synth;
  auto* make = app.add_subcommand("make-synthetic", "Render a synthetic rgb/thermal/seg dataset");
  make->add_option("--out", synth.out_dir, "Output dataset directory")->required();
  make->add_option("--num-scenes", synth.num_scenes, "Number of scenes")->required();
  make->add_option("--seed", synth.seed, "Generator seed");
  make->add_option("--height", synth.height, "Image height");
  make->add_option("--width", synth.width, "Image width");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a model from a run configuration");
  tr->add_option("--config", train.config, "Run configuration (JSON)")->required();
  tr->add_flag("--resume", train.resume, "Continue from the newest checkpoint in the run directory");
  tr->add_option("--iterations", train.iterations, "Override train.iterations");
  tr->add_flag("--quiet", train.quiet, "Suppress per-iteration progress");

  TranslateArgs trans;
  auto* tl = app.add_subcommand("translate", "Translate rgb inputs to thermal with sampled styles");
  tl->add_option("--checkpoint", trans.checkpoint, "Checkpoint file")->required();
  tl->add_option("--input", trans.input_dir, "Directory with rgb/ and seg/")->required();
  tl->add_option("--out", trans.out_dir, "Output directory")->required();
  tl->add_option("--num-styles", trans.num_styles, "Outputs per input");
  tl->add_option("--resample", trans.resample, "vehicles | background | all");
  tl->add_option("--seed", trans.seed, "Style sampling seed");

  EvalArgs ev;
  uint64_t eval_seed = 0;
  auto* el = app.add_subcommand("eval", "Run an evaluation protocol");
  el->add_option("--which", ev.which, "lpips | lpips-vehicle | fid")->required();
  el->add_option("--dataset", ev.dataset, "Test dataset directory")->required();
  el->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  el->add_option("--config", ev.config, "Run configuration used when no checkpoint is given");
  auto* seed_opt = el->add_option("--seed", eval_seed, "Protocol seed (default eval.seed)");
  el->add_option("--sources", ev.sources, "Source images for lpips protocols");
  el->add_option("--pairs", ev.pairs, "Pairs for lpips protocols");
  el->add_option("--samplings", ev.samplings, "Sampling passes for fid");
  el->add_flag("--real-vs-real", ev.real_vs_real, "Score real thermals against themselves (fid)");
  el->add_option("--extractor", ev.extractor, "Feature extractor weights file");
  el->add_option("--report", ev.report, "JSON report path");
  el->add_option("--label", ev.label, "Row label in metrics.csv");

  GalleryArgs gal;
  auto* gl = app.add_subcommand("gallery", "Compose comparison grids from a translate run");
  gl->add_option("--run", gal.run_dir, "Translate output directory")->required();
  gl->add_option("--out", gal.out_dir, "Gallery output directory")->required();

  ExportExtractorArgs ex;
  auto* xl = app.add_subcommand("export-extractor", "Write the built-in feature extractor weights");
  xl->add_option("--out", ex.out, "Weights file")->required();
  xl->add_option("--seed", ex.seed, "Initialisation seed");
  xl->add_option("--channels", ex.channels, "Input channels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*make) return cmd_make_synthetic(synth);
  if (*tr) return cmd_train(train);
  if (*tl) return cmd_translate(trans);
  if (*el) {
    if (*seed_opt) ev.seed = eval_seed;
    return cmd_eval(ev);
  }
  if (*gl) return cmd_gallery(gal);
  return cmd_export_extractor(ex);
}
