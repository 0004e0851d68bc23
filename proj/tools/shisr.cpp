// Command-line front end: dataset preparation, training, evaluation,
// single-image inference and the gradient-check suite.

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "shisr/config.hpp"
#include "shisr/data.hpp"
#include "shisr/gradcheck.hpp"
#include "shisr/image.hpp"
#include "shisr/metrics.hpp"
#include "shisr/trainer.hpp"

namespace fs = std::filesystem;
using namespace shisr;

namespace {

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

bool is_bool_key(const std::string& key) {
  const std::string v = TrainConfig{}.get(key);
  return v == "true" || v == "false";
}

// Every config key as a flag of the same name; applied on top of a config
// file and the optional micro preset.
struct ConfigFlags {
  std::string config_file;
  bool micro = false;
  std::map<std::string, std::string> values;
  std::deque<bool> bools;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value configuration file")
        ->check(CLI::ExistingFile);
    app->add_flag("--micro", micro, "use the small test-sized networks");
    for (const std::string& key : TrainConfig::keys()) {
      const std::string flag = "--" + dashed(key);
      if (is_bool_key(key)) {
        bools.push_back(false);
        options[key] = app->add_flag(flag, bools.back(), "config key " + key);
      } else {
        options[key] = app->add_option(flag, values[key], "config key " + key);
      }
    }
  }

  void apply(TrainConfig& cfg) const {
    if (micro) cfg.use_micro_profile();
    std::size_t b = 0;
    for (const std::string& key : TrainConfig::keys()) {
      const CLI::Option* opt = options.at(key);
      if (is_bool_key(key)) {
        if (opt->count() > 0) cfg.set(key, bools[b] ? "true" : "false");
        ++b;
      } else if (opt->count() > 0) {
        cfg.set(key, values.at(key));
      }
    }
  }

  TrainConfig build(TrainConfig base = {}) const {
    if (!config_file.empty()) base = TrainConfig::load(config_file);
    apply(base);
    base.validate();
    return base;
  }
};

// --seed / --deterministic for commands that do not take a full config.
struct CommonFlags {
  std::uint64_t seed = 0;
  bool deterministic = true;
  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "random seed");
    app->add_flag("--deterministic", deterministic, "deterministic execution (always on)");
  }
};

void print_rows(const std::vector<MetricRow>& rows) { std::cout << metrics_table(rows); }

int cmd_make_manifest(const fs::path& root, const fs::path& out, std::uint64_t seed,
                      double test_ratio, int folds) {
  const Manifest m = make_manifest(root, seed, test_ratio, folds);
  const FoldAssignment f = kfold_split(m.records, folds, seed);
  for (const std::string& w : f.warnings) std::cerr << "warning: " << w << '\n';
  write_manifest(out, m);
  std::size_t test = 0;
  for (const ManifestRecord& r : m.records) test += r.split == Split::Test;
  std::cout << "wrote " << m.records.size() << " records (" << m.records.size() - test
            << " train, " << test << " test) to " << out.string() << '\n';
  return 0;
}

int cmd_make_synthetic(const fs::path& out, int count, int classes, int size,
                       std::uint64_t seed) {
  const auto pairs = synthetic_textures(count, classes, size, 1, seed);
  int index = 0;
  for (const SamplePair& p : pairs) {
    char name[96];
    std::snprintf(name, sizeof name, "SOB_B_%s-00-SYN%02d-%s-%03d.png", kClassNames[p.label],
                  p.label, to_string(p.magnification).substr(0, to_string(p.magnification).size() - 1).c_str(),
                  ++index);
    save_png(out / kClassNames[p.label] / name, p.hr);
  }
  std::cout << "wrote " << pairs.size() << " images under " << out.string() << '\n';
  return 0;
}

int cmd_make_lr(const fs::path& manifest_path, const fs::path& out, int scale, int hr_size,
                const std::string& split_name, int fold) {
  Manifest m = read_manifest(manifest_path);
  m.validate(true);
  const auto selection = select_records(m, parse_split(split_name), fold);
  ManifestPairs source(m, selection, scale, hr_size, false, 0);
  std::ofstream csv;
  fs::create_directories(out);
  csv.open(out / "pairs.csv");
  csv << "hr,lr,label,magnification\n";
  for (std::size_t i = 0; i < source.size(); ++i) {
    const SamplePair p = source.get(i, 0);
    const std::string stem = fs::path(m.records[selection[i]].path).stem().string();
    const fs::path hr = fs::path("hr") / (stem + ".png");
    const fs::path lr = fs::path("lr") / (stem + ".png");
    save_png(out / hr, p.hr);
    save_png(out / lr, p.lr);
    csv << hr.generic_string() << ',' << lr.generic_string() << ',' << p.label << ','
        << to_string(p.magnification) << '\n';
  }
  std::cout << "wrote " << source.size() << " LR/HR pairs (x" << scale << ") to "
            << out.string() << '\n';
  return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& resume) {
  auto data = make_source(cfg, Split::Train);
  Trainer trainer(cfg, data, cfg.run_dir);
  if (!resume.empty()) {
    trainer.resume(resume);
    std::cout << "resumed at epoch " << trainer.epoch() << '\n';
  }
  std::cout << "training " << trainer.model().params.scalar_count("sr.") << " SR and "
            << trainer.model().params.scalar_count("cf.") << " CF parameters on " << data->size()
            << " samples\n";
  trainer.fit([&](const EpochSummary& s) {
    std::printf("epoch %3d  lr %.3e  loss %.5f  (l1 %.4f  fl_sr %.4f  fl_hr %.4f  ntx %.4f)  "
                "train acc %.3f\n",
                s.epoch + 1, s.lr, s.mean.total, s.mean.l1, s.mean.focal_sr, s.mean.focal_hr,
                s.mean.ntxent, s.train_accuracy);
    std::fflush(stdout);
  });
  std::cout << "checkpoints in " << (fs::path(cfg.run_dir) / "checkpoints").string() << '\n';
  return 0;
}

std::unique_ptr<JointModel> load_model(const std::string& checkpoint, TrainConfig& cfg,
                                       const ConfigFlags& flags) {
  if (checkpoint.empty()) {
    std::cerr << "warning: no --checkpoint given; using randomly initialized weights\n";
    cfg = flags.build(cfg);
    return std::make_unique<JointModel>(cfg);
  }
  const WeightFile file = read_weights(checkpoint);
  cfg = flags.build(checkpoint_config(file));
  auto model = std::make_unique<JointModel>(cfg);
  load_model_weights(file, *model);
  return model;
}

int cmd_eval(const std::string& checkpoint, const ConfigFlags& flags, const std::string& mode_name,
             const std::string& color, const fs::path& out_dir) {
  TrainConfig cfg;
  auto model = load_model(checkpoint, cfg, flags);
  const EvalMode mode = parse_eval_mode(mode_name);
  const ColorSpace space = color == "y" ? ColorSpace::Y : ColorSpace::RGB;
  auto data = make_source(cfg, Split::Test);
  const auto rows = evaluate(*model, *data, cfg, mode, cfg.batch_size, space);
  print_rows(rows);
  const fs::path dir = out_dir.empty() ? fs::path(cfg.run_dir) / "eval" : out_dir;
  fs::create_directories(dir);
  write_file(dir / ("metrics_" + mode_name + ".csv"), metrics_csv(rows));
  write_file(dir / ("confusion_" + mode_name + ".csv"), confusion_csv(rows));
  std::cout << "wrote " << (dir / ("metrics_" + mode_name + ".csv")).string() << '\n';
  return 0;
}

int cmd_super_resolve(const std::string& checkpoint, const ConfigFlags& flags,
                      const fs::path& input, const fs::path& output) {
  TrainConfig cfg;
  auto model = load_model(checkpoint, cfg, flags);
  const Tensor lr = load_png(input);
  NoGradGuard no_grad;
  const Tensor sr = clamp_unit(model->sr.forward(lr));
  save_png(output, sr);
  std::cout << input.string() << " (" << lr.shape().w << "x" << lr.shape().h << ") -> "
            << output.string() << " (" << sr.shape().w << "x" << sr.shape().h << ")\n";
  return 0;
}

int cmd_classify(const std::string& checkpoint, const ConfigFlags& flags, const fs::path& input,
                 bool direct) {
  TrainConfig cfg;
  auto model = load_model(checkpoint, cfg, flags);
  model->set_training(false);
  NoGradGuard no_grad;
  Tensor img = load_png(input);
  if (!direct) img = model->sr.forward(img);
  const Tensor probs = softmax(model->cf.classify(img).logits, 1);
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k) {
    if (probs.data()[k] > probs.data()[best]) best = k;
  }
  std::cout << kClassNames[best] << '\n';
  for (int k = 0; k < kNumClasses; ++k) {
    std::printf("  %-3s %.6f\n", kClassNames[k], static_cast<double>(probs.data()[k]));
  }
  return 0;
}

int cmd_gradcheck(int seeds, const std::string& filter) {
  int failures = 0;
  int ran = 0;
  for (const GradCheckCase& c : gradient_suite()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    ++ran;
    double worst = 0.0;
    bool ok = true;
    for (int s = 0; s < seeds; ++s) {
      const GradCheckResult r = c.run(static_cast<std::uint64_t>(1000 + s), {});
      worst = std::max(worst, r.max_rel_error);
      ok = ok && r.passed;
    }
    std::printf("%-4s %-36s max relative error %.3e over %d seeds\n", ok ? "PASS" : "FAIL",
                c.name.c_str(), worst, seeds);
    failures += !ok;
  }
  if (ran == 0) throw ConfigError("no gradient-check case matches '" + filter + "'");
  std::printf("%d case(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint super-resolution and classification of histopathology images"};
  app.require_subcommand(1);

  // make-manifest
  auto* mm = app.add_subcommand("make-manifest", "walk a BreaKHis tree and write a manifest CSV");
  CommonFlags mm_common;
  mm_common.attach(mm);
  std::string mm_root, mm_out;
  double mm_ratio = 0.3;
  int mm_folds = 5;
  mm->add_option("--root", mm_root, "dataset root")->required();
  mm->add_option("--out", mm_out, "manifest CSV to write")->required();
  mm->add_option("--test-ratio", mm_ratio, "test share per (magnification, class)");
  mm->add_option("--folds", mm_folds, "number of cross-validation folds");

  // make-synthetic
  auto* ms = app.add_subcommand("make-synthetic", "write a synthetic texture dataset as PNGs");
  CommonFlags ms_common;
  ms_common.attach(ms);
  std::string ms_out;
  int ms_count = 16, ms_classes = 4, ms_size = 64;
  ms->add_option("--out", ms_out, "output directory")->required();
  ms->add_option("--count", ms_count, "number of images");
  ms->add_option("--classes", ms_classes, "number of classes (1-8)");
  ms->add_option("--size", ms_size, "image side in pixels");

  // make-lr
  auto* ml = app.add_subcommand("make-lr", "materialize centre-cropped LR/HR pairs");
  CommonFlags ml_common;
  ml_common.attach(ml);
  std::string ml_manifest, ml_out, ml_split = "test";
  int ml_scale = 2, ml_hr = 384, ml_fold = -1;
  ml->add_option("--manifest", ml_manifest, "manifest CSV")->required();
  ml->add_option("--out", ml_out, "output directory")->required();
  ml->add_option("--scale", ml_scale, "2, 4 or 8");
  ml->add_option("--hr-size", ml_hr, "HR patch side");
  ml->add_option("--split", ml_split, "train or test");
  ml->add_option("--fold", ml_fold, "test fold (-1: manifest split column)");

  // train
  auto* tr = app.add_subcommand("train", "joint SR + classification training");
  ConfigFlags tr_flags;
  tr_flags.attach(tr);
  std::string tr_resume;
  tr->add_option("--resume", tr_resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ConfigFlags ev_flags;
  ev_flags.attach(ev);
  std::string ev_ckpt, ev_mode = "joint", ev_color = "rgb", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--mode", ev_mode, "joint, cf-hr, cf-lr or bicubic");
  ev->add_option("--color", ev_color, "rgb or y")->check(CLI::IsMember({"rgb", "y"}));
  ev->add_option("--out", ev_out, "directory for the metric CSVs");

  // super-resolve
  auto* sr = app.add_subcommand("super-resolve", "upscale one PNG with the SR network");
  ConfigFlags sr_flags;
  sr_flags.attach(sr);
  std::string sr_ckpt, sr_in, sr_out;
  sr->add_option("--checkpoint", sr_ckpt, "checkpoint file")->check(CLI::ExistingFile);
  sr->add_option("--input", sr_in, "input PNG")->required()->check(CLI::ExistingFile);
  sr->add_option("--output", sr_out, "output PNG")->required();

  // classify
  auto* cl = app.add_subcommand("classify", "predict the class of one PNG");
  ConfigFlags cl_flags;
  cl_flags.attach(cl);
  std::string cl_ckpt, cl_in;
  bool cl_direct = false;
  cl->add_option("--checkpoint", cl_ckpt, "checkpoint file")->check(CLI::ExistingFile);
  cl->add_option("--input", cl_in, "input PNG (treated as LR unless --direct)")
      ->required()
      ->check(CLI::ExistingFile);
  cl->add_flag("--direct", cl_direct, "classify the input as is, without super-resolving it");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  CommonFlags gc_common;
  gc_common.attach(gc);
  int gc_seeds = 5;
  std::string gc_filter;
  gc->add_option("--seeds", gc_seeds, "random seeds per case");
  gc->add_option("--filter", gc_filter, "only cases whose name contains this text");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mm) return cmd_make_manifest(mm_root, mm_out, mm_common.seed, mm_ratio, mm_folds);
    if (*ms) return cmd_make_synthetic(ms_out, ms_count, ms_classes, ms_size, ms_common.seed);
    if (*ml) return cmd_make_lr(ml_manifest, ml_out, ml_scale, ml_hr, ml_split, ml_fold);
    if (*tr) return cmd_train(tr_flags.build(), tr_resume);
    if (*ev) return cmd_eval(ev_ckpt, ev_flags, ev_mode, ev_color, ev_out);
    if (*sr) return cmd_super_resolve(sr_ckpt, sr_flags, sr_in, sr_out);
    if (*cl) return cmd_classify(cl_ckpt, cl_flags, cl_in, cl_direct);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_filter);
  } catch (const shisr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
