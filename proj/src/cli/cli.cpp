#include "cotmisr/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cotmisr/checkpoint.hpp"
#include "cotmisr/config.hpp"
#include "cotmisr/errors.hpp"
#include "cotmisr/metrics.hpp"
#include "cotmisr/trainer.hpp"

namespace fs = std::filesystem;

namespace cotmisr::cli {

namespace {

// Environment override for the dataset root.
void apply_env(ExperimentConfig& cfg) {
  if (const char* root = std::getenv("COTMISR_DATA_ROOT"); root && *root) cfg.data.root = root;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg = load_experiment_config(a.config);
  apply_env(cfg);
  if (a.seed) cfg.train.seed = *a.seed;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (!a.data.empty()) cfg.data.root = a.data;
  cfg.validate();
  const Dataset data = load_dataset(cfg);
  out << "train: " << data.train.size() << " scenes, val: " << data.val.size() << " scenes\n";
  const FitResult r = fit(cfg, data, cfg.out_dir, a.resume, &out);
  out << "done: " << r.epochs_run << " epochs, " << r.steps << " steps";
  if (!r.final_val.empty()) out << ", final val cPSNR " << format_metric(mean_score(r.final_val).cpsnr);
  out << "\nartifacts in " << cfg.out_dir << "\n";
  return ok;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string band = "ALL";
  std::string manifest;
  std::string split = "val";
  std::string out;
  double min_clearance = 0.85;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const BandSelection bands = parse_band_selection(a.band);
  const auto ck = load_checkpoint<float>(a.checkpoint);
  std::string root = a.data;
  if (root.empty())
    if (const char* env = std::getenv("COTMISR_DATA_ROOT"); env && *env) root = env;
  if (root.empty()) throw ConfigError("eval: --data (or COTMISR_DATA_ROOT) is required");

  std::vector<std::string> ids;
  if (!a.manifest.empty()) {
    const SplitManifest m = read_manifest(a.manifest);
    if (a.split == "train" || a.split == "all") ids.insert(ids.end(), m.train.begin(), m.train.end());
    if (a.split == "val" || a.split == "all") ids.insert(ids.end(), m.val.begin(), m.val.end());
    if (a.split != "train" && a.split != "val" && a.split != "all")
      throw ConfigError("eval: --split must be train, val or all");
  } else {
    ids = list_scenes(root, bands);
  }
  std::vector<LrStack> scenes;
  for (const auto& id : ids) {
    LrStack s = load_scene(fs::path(root) / id);
    if (!band_selected(bands, s.band)) continue;
    scenes.push_back(prepare_stack(s, ck.config.k, a.min_clearance));
  }
  if (scenes.empty()) throw DataError("eval: no scenes for band " + band_selection_name(bands));
  const EvalResult r = evaluate(ck.params, ck.config, scenes);
  std::ostringstream report;
  write_eval_report(report, r);
  if (a.out.empty()) out << report.str();
  else write_file(a.out, report.str());
  return ok;
}

struct InferArgs {
  std::string checkpoint;
  std::string scene_dir;
  std::string out;
  std::string band;
  double min_clearance = 0.85;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint<float>(a.checkpoint);
  std::optional<Band> band;
  if (!a.band.empty()) band = parse_band(a.band);
  else band = Band::nir;  // the band does not influence inference
  const LrStack s = prepare_stack(load_scene(a.scene_dir, band), ck.config.k, a.min_clearance);
  const Image sr = super_resolve(ck.params, ck.config, s);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_png_image(a.out, sr);
  out << "wrote " << a.out << " (" << sr.height << "x" << sr.width << ")\n";
  return ok;
}

int cmd_params(const std::string& config_path, std::ostream& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  cfg.model.validate();
  auto counts = [](const CotConfig& c) {
    Rng rng(0);
    return init_params<float>(c, rng);
  };
  const auto p = counts(cfg.model);
  const std::size_t enc = count_params(p, ParamGroup::encoder), cot = count_params(p, ParamGroup::cot);
  out << "arch " << to_string(cfg.model.architecture()) << "\n";
  out << "encoder " << enc << "\ncot " << cot << "\ntotal " << count_params(p) << "\n";
  out << "attention ablation (same dims):\n";
  for (auto [name, ca, sa] : {std::tuple{"CA+SA", true, true}, {"CA", true, false}, {"SA", false, true}}) {
    CotConfig c = cfg.model;
    c.lrca.use_ca = ca;
    c.lrca.use_sa = sa;
    out << "  " << name << " " << count_params(counts(c)) << "\n";
  }
  return ok;
}

struct AblateArgs {
  std::string suite;
  std::string config;
  std::string out;
  bool synthesize = false;
  std::optional<std::uint64_t> seed;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  ExperimentConfig base = load_experiment_config(a.config);
  apply_env(base);
  if (a.seed) base.train.seed = *a.seed;
  const fs::path out_dir = a.out.empty() ? fs::path(base.out_dir) : fs::path(a.out);
  if (a.synthesize) {
    SynthConfig sc;
    sc.seed = base.train.seed;
    sc.k = base.model.k;
    sc.scale = base.model.scale;
    const fs::path root = out_dir / "data";
    synthesize_dataset(root, sc);
    base.data.root = root.string();
  }

  struct Variant {
    std::string name;
    ExperimentConfig cfg;
  };
  std::vector<Variant> variants;
  if (a.suite == "arch") {
    for (const char* arch : {"8c4t", "4c4t4c", "(2c1t)x4"}) {
      ExperimentConfig c = base;
      c.model.arch = arch;
      variants.push_back({arch, c});
    }
  } else if (a.suite == "attention") {
    for (auto [name, ca, sa] : {std::tuple{"CA+SA", true, true}, {"CA", true, false}, {"SA", false, true}}) {
      ExperimentConfig c = base;
      c.model.lrca.use_ca = ca;
      c.model.lrca.use_sa = sa;
      variants.push_back({name, c});
    }
  } else {
    throw ConfigError("ablate: --suite must be arch or attention");
  }

  base.validate();
  const Dataset data = load_dataset(base);
  std::ostringstream csv;
  csv << "variant,arch,use_ca,use_sa,params,val_cpsnr,val_cssim,bicubic_cpsnr,bicubic_cssim\n";
  for (std::size_t i = 0; i < variants.size(); ++i) {
    auto& v = variants[i];
    v.cfg.out_dir = (out_dir / ("variant" + std::to_string(i))).string();
    v.cfg.validate();
    out << "== " << v.name << "\n";
    const FitResult r = fit(v.cfg, data, v.cfg.out_dir, false, &out);
    const auto ck = load_checkpoint<float>(fs::path(v.cfg.out_dir) / "checkpoint_last.bin");
    const EvalResult ev = evaluate(ck.params, ck.config, data.val.empty() ? data.train : data.val);
    const SceneScore m = mean_score(ev.model), b = mean_score(ev.bicubic);
    csv << v.name << ',' << to_string(v.cfg.model.architecture()) << ',' << (v.cfg.model.lrca.use_ca ? 1 : 0) << ','
        << (v.cfg.model.lrca.use_sa ? 1 : 0) << ',' << count_params(ck.params) << ',' << format_metric(m.cpsnr) << ','
        << format_metric(m.cssim) << ',' << format_metric(b.cpsnr) << ',' << format_metric(b.cssim) << '\n';
  }
  write_file(out_dir / ("ablation_" + a.suite + ".csv"), csv.str());
  out << csv.str();
  return ok;
}

int cmd_synth(const SynthConfig& sc, const std::string& out_root, std::ostream& out) {
  const auto ids = synthesize_dataset(out_root, sc);
  out << "wrote " << ids.size() << " scenes under " << out_root << "\n";
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-frame super-resolution with CoT-MISR networks"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model from an experiment config");
  t->add_option("--config", train.config, "Experiment config file")->required();
  t->add_option("--seed", train.seed, "Override train.seed");
  t->add_option("--out", train.out, "Override out_dir");
  t->add_option("--data", train.data, "Override data.root");
  t->add_flag("--resume", train.resume, "Continue from out_dir/checkpoint_last.bin");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint (cPSNR/cSSIM per band) against the bicubic baseline");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Dataset root");
  e->add_option("--band", eval.band, "NIR, RED or ALL");
  e->add_option("--manifest", eval.manifest, "Restrict to a split from this manifest");
  e->add_option("--split", eval.split, "train, val or all (with --manifest)");
  e->add_option("--out", eval.out, "Write the CSV report here instead of stdout");
  e->add_option("--min-clearance", eval.min_clearance, "Frame clearance threshold");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Super-resolve one scene directory to a 16-bit PNG");
  i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  i->add_option("--scene-dir", infer.scene_dir, "Scene directory with LR/QM files")->required();
  i->add_option("--out", infer.out, "Output PNG")->required();
  i->add_option("--band", infer.band, "Band label (informational)");
  i->add_option("--min-clearance", infer.min_clearance, "Frame clearance threshold");

  std::string params_config;
  auto* p = app.add_subcommand("params", "Print per-group and total parameter counts");
  p->add_option("--config", params_config, "Experiment config file")->required();

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train and compare the architecture or attention variants");
  a->add_option("--suite", ablate.suite, "arch or attention")->required();
  a->add_option("--config", ablate.config, "Base experiment config")->required();
  a->add_option("--out", ablate.out, "Output directory");
  a->add_option("--seed", ablate.seed, "Override train.seed");
  a->add_flag("--synthesize", ablate.synthesize, "Generate the default synthetic dataset under <out>/data first");

  SynthConfig synth;
  std::string synth_out, synth_bands = "NIR";
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset in the on-disk scene layout");
  s->add_option("--out", synth_out, "Dataset root")->required();
  s->add_option("--scenes", synth.n_scenes, "Scenes per band");
  s->add_option("--hr-size", synth.hr_size, "HR side in pixels");
  s->add_option("--scale", synth.scale, "Upscale factor");
  s->add_option("--k", synth.k, "Frames per scene");
  s->add_option("--shift", synth.shift_px, "Max HR-pixel shift per axis");
  s->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma");
  s->add_option("--seed", synth.seed, "Seed");
  s->add_option("--bands", synth_bands, "NIR, RED or ALL");
  s->add_option("--cloud-probability", synth.cloud_probability, "Chance of cloud occlusion per frame");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return ok;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return ok;
    } catch (const CLI::ParseError& ex) {
      err << "error: " << ex.what() << "\n";
      const CLI::App* sub = nullptr;
      for (const auto* c : app.get_subcommands()) sub = c;
      err << (sub ? sub->help() : app.help());
      return config_error;
    }
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (i->parsed()) return cmd_infer(infer, out);
    if (p->parsed()) return cmd_params(params_config, out);
    if (a->parsed()) return cmd_ablate(ablate, out);
    if (s->parsed()) {
      synth.bands = parse_band_selection(synth_bands);
      return cmd_synth(synth, synth_out, out);
    }
    return config_error;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return config_error;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return data_error;
  } catch (const ShapeError& ex) {
    err << "data error: " << ex.what() << "\n";
    return data_error;
  } catch (const NumericalError& ex) {
    err << "numerical error: " << ex.what() << "\n";
    return numerical_error;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return failure;
  }
}

}  // namespace cotmisr::cli
