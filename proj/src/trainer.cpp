#include "shisr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "shisr/image.hpp"

namespace shisr {

namespace fs = std::filesystem;
using nlohmann::json;

JointModel::JointModel(const TrainConfig& config) {
  config.validate();
  Rng sr_rng(mix_seed(config.seed, 1));
  Rng cf_rng(mix_seed(config.seed, 2));
  sr = SRNet(config.sr_config(), sr_rng);
  cf = CFNet(config.cf_config(), cf_rng);
  params = sr.parameters("sr");
  params.append(cf.parameters("cf"));
}

namespace {

int argmax_row(std::span<const Real> row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(row.size()); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

std::vector<int> predictions(const Tensor& logits) {
  const int n = logits.shape().n;
  const int k = logits.shape().c;
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = argmax_row(logits.data().subspan(static_cast<std::size_t>(i) * k, k));
  return out;
}

double value_or_zero(const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

std::string describe(const Batch& batch, const StepGraph* g) {
  std::ostringstream out;
  out << "batch indices [";
  for (std::size_t i = 0; i < batch.indices.size(); ++i) out << (i ? "," : "") << batch.indices[i];
  out << "]";
  if (g) {
    out << "; l1=" << value_or_zero(g->terms.l1) << " focal_sr=" << value_or_zero(g->terms.focal_sr)
        << " focal_hr=" << value_or_zero(g->terms.focal_hr)
        << " ntxent=" << value_or_zero(g->terms.ntxent);
  }
  return out.str();
}

}  // namespace

StepGraph forward_losses(JointModel& model, const Batch& batch, const TrainConfig& config) {
  const LossWeights weights = config.loss_weights();
  StepGraph g;
  g.sr = model.sr.forward(batch.lr);
  g.terms.l1 = l1_loss(g.sr, batch.hr);
  g.sr_class = model.cf.classify(g.sr);
  g.terms.focal_sr = focal_loss(g.sr_class.logits, batch.labels, weights.gamma, weights.alpha);
  if (config.uses_hr_branch()) {
    g.hr_class = model.cf.classify(batch.hr);
    g.terms.focal_hr = focal_loss(g.hr_class.logits, batch.labels, weights.gamma, weights.alpha);
    if (config.uses_ntxent()) {
      g.terms.ntxent = nt_xent_loss(g.sr_class.features, g.hr_class.features, weights.tau);
    }
  }
  g.total = total_loss(g.terms, weights);
  return g;
}

StepLosses train_step(JointModel& model, Adam& optimizer, const Batch& batch,
                      const TrainConfig& config) {
  model.set_training(true);
  optimizer.zero_grad();
  StepGraph g;
  try {
    g = forward_losses(model, batch, config);
  } catch (const NumericError& e) {
    throw NumericError(std::string("non-finite value during the forward pass (") + e.what() +
                       "); " + describe(batch, nullptr));
  }
  if (!std::isfinite(g.total.item())) {
    throw NumericError("non-finite loss; " + describe(batch, &g));
  }
  backward(g.total);
  optimizer.step();

  StepLosses s;
  s.l1 = value_or_zero(g.terms.l1);
  s.focal_sr = value_or_zero(g.terms.focal_sr);
  s.focal_hr = value_or_zero(g.terms.focal_hr);
  s.ntxent = value_or_zero(g.terms.ntxent);
  s.total = g.total.item();
  const std::vector<int> pred = predictions(g.sr_class.logits);
  for (std::size_t i = 0; i < pred.size(); ++i) s.correct += pred[i] == batch.labels[i];
  s.count = static_cast<int>(pred.size());
  return s;
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const PairSource> train_data,
                 fs::path run_dir)
    : config_(std::move(config)),
      data_(std::move(train_data)),
      run_dir_(std::move(run_dir)),
      rng_(mix_seed(config_.seed, 3)) {
  config_.validate();
  if (!data_ || data_->size() == 0) throw ConfigError("training set is empty");
  if (data_->size() < 2) throw ConfigError("training needs at least 2 samples per batch");
  model_ = std::make_unique<JointModel>(config_);
  AdamOptions opts;
  opts.lr = config_.lr;
  optimizer_ = std::make_unique<Adam>(model_->params, opts);
  if (!run_dir_.empty()) {
    fs::create_directories(run_dir_ / "checkpoints");
    write_file(run_dir_ / "config.txt", config_.to_text());
  }
}

void Trainer::log_line(const std::string& line) const {
  if (run_dir_.empty()) return;
  std::ofstream out(run_dir_ / "log.jsonl", std::ios::app);
  out << line << '\n';
}

EpochSummary Trainer::run_epoch() {
  EpochSummary summary;
  summary.epoch = epoch_;
  summary.lr = lr_schedule(epoch_, config_);
  optimizer_->set_lr(summary.lr);
  const std::uint64_t order_seed = rng_.engine()();
  const auto batches =
      epoch_batches(data_->size(), config_.batch_size, order_seed, epoch_, true, 2);
  for (const auto& indices : batches) {
    std::vector<SamplePair> samples;
    samples.reserve(indices.size());
    for (std::size_t i : indices) samples.push_back(data_->get(i, epoch_));
    const Batch batch = collate(samples, indices);
    const StepLosses s = train_step(*model_, *optimizer_, batch, config_);
    ++step_;
    log_line(json{{"type", "step"},
                  {"epoch", epoch_},
                  {"step", step_},
                  {"l1", s.l1},
                  {"focal_sr", s.focal_sr},
                  {"focal_hr", s.focal_hr},
                  {"ntxent", s.ntxent},
                  {"total", s.total},
                  {"lr", summary.lr}}
                 .dump());
    summary.mean.l1 += s.l1;
    summary.mean.focal_sr += s.focal_sr;
    summary.mean.focal_hr += s.focal_hr;
    summary.mean.ntxent += s.ntxent;
    summary.mean.total += s.total;
    summary.mean.correct += s.correct;
    summary.mean.count += s.count;
    ++summary.steps;
  }
  const double n = summary.steps;
  summary.mean.l1 /= n;
  summary.mean.focal_sr /= n;
  summary.mean.focal_hr /= n;
  summary.mean.ntxent /= n;
  summary.mean.total /= n;
  summary.train_accuracy = static_cast<double>(summary.mean.correct) / summary.mean.count;
  log_line(json{{"type", "epoch"},
                {"epoch", epoch_},
                {"step", step_},
                {"l1", summary.mean.l1},
                {"focal_sr", summary.mean.focal_sr},
                {"focal_hr", summary.mean.focal_hr},
                {"ntxent", summary.mean.ntxent},
                {"total", summary.mean.total},
                {"lr", summary.lr},
                {"train_accuracy", summary.train_accuracy}}
               .dump());
  ++epoch_;
  return summary;
}

fs::path Trainer::checkpoint_path(int epoch) const {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.shw", epoch);
  return run_dir_ / "checkpoints" / name;
}

std::vector<EpochSummary> Trainer::fit(const std::function<void(const EpochSummary&)>& on_epoch) {
  std::vector<EpochSummary> out;
  while (epoch_ < config_.epochs) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
    const bool last = epoch_ == config_.epochs;
    if (!run_dir_.empty() && (epoch_ % config_.checkpoint_every == 0 || last)) {
      save_checkpoint(checkpoint_path(epoch_));
      if (last) save_checkpoint(run_dir_ / "checkpoints" / "last.shw");
    }
  }
  return out;
}

WeightFile model_checkpoint(const JointModel& model, const TrainConfig& config,
                            const Adam* optimizer, int epoch, const Rng* rng) {
  WeightFile file = snapshot(model.params);
  json classes = json::array();
  for (const char* c : kClassNames) classes.push_back(c);
  // The run directory is left out so that identical runs in different
  // directories write identical bytes.
  TrainConfig stored = config;
  stored.run_dir.clear();
  file.meta["config"] = stored.to_text();
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(config.training_hash()));
  file.meta["training_hash"] = hash;
  file.meta["epoch"] = epoch;
  file.meta["classes"] = classes;
  if (rng) file.meta["rng"] = rng->state();
  if (optimizer) {
    const auto& params = optimizer->params();
    const auto& states = optimizer->states();
    long step = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      step = std::max(step, states[i].step);
      for (const char* which : {"m", "v"}) {
        const std::vector<Real>& src = which[0] == 'm' ? states[i].m : states[i].v;
        WeightEntry e;
        e.name = std::string("adam.") + which + "." + params[i].name;
        e.shape = params[i].value.shape();
        if (src.empty()) {
          e.values.assign(e.shape.numel(), 0.0f);
        } else {
          e.values.assign(src.begin(), src.end());
        }
        file.tensors.push_back(std::move(e));
      }
    }
    file.meta["adam_step"] = step;
  }
  return file;
}

WeightFile Trainer::checkpoint() const {
  WeightFile file = model_checkpoint(*model_, config_, optimizer_.get(), epoch_, &rng_);
  file.meta["global_step"] = step_;
  return file;
}

void Trainer::save_checkpoint(const fs::path& path) const { write_weights(path, checkpoint()); }

TrainConfig checkpoint_config(const WeightFile& file) {
  if (!file.meta.contains("config") || !file.meta["config"].is_string()) {
    throw IoError("checkpoint has no stored configuration");
  }
  return TrainConfig::from_text(file.meta["config"].get<std::string>());
}

void load_model_weights(const WeightFile& file, JointModel& model) {
  restore(file, model.params);
}

void Trainer::resume(const fs::path& path) {
  const WeightFile file = read_weights(path);
  const TrainConfig stored = checkpoint_config(file);
  if (stored.training_hash() != config_.training_hash()) {
    throw ConfigError("checkpoint '" + path.string() +
                      "' was written with a different training configuration");
  }
  load_model_weights(file, *model_);
  const long step = file.meta.value("adam_step", 0L);
  const auto& params = optimizer_->params();
  auto& states = optimizer_->states();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const WeightEntry* m = file.find("adam.m." + params[i].name);
    const WeightEntry* v = file.find("adam.v." + params[i].name);
    if (!m || !v) throw IoError("checkpoint lacks optimizer state for '" + params[i].name + "'");
    states[i].m.assign(m->values.begin(), m->values.end());
    states[i].v.assign(v->values.begin(), v->values.end());
    states[i].step = step;
  }
  epoch_ = file.meta.value("epoch", 0);
  step_ = file.meta.value("global_step", 0L);
  if (file.meta.contains("rng")) rng_.restore(file.meta["rng"].get<std::string>());
}

std::string to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::Joint: return "joint";
    case EvalMode::CfHr: return "cf-hr";
    case EvalMode::CfLr: return "cf-lr";
    case EvalMode::Bicubic: return "bicubic";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& text) {
  for (EvalMode m : {EvalMode::Joint, EvalMode::CfHr, EvalMode::CfLr, EvalMode::Bicubic}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown evaluation mode '" + text +
                    "' (expected joint, cf-hr, cf-lr or bicubic)");
}

std::vector<MetricRow> evaluate(JointModel& model, const PairSource& data,
                                const TrainConfig& config, EvalMode mode, int batch_size,
                                ColorSpace space) {
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  NoGradGuard no_grad;
  const bool was_training = model.cf.training();
  model.set_training(false);
  MetricAccumulator acc(config.scale);
  SsimOptions ssim_opts;
  ssim_opts.space = space;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& indices : epoch_batches(data.size(), batch_size, 0, 0, false)) {
    std::vector<SamplePair> samples;
    for (std::size_t i : indices) samples.push_back(data.get(i, 0));
    const Batch batch = collate(samples, indices);
    Tensor restored;
    Tensor cf_input;
    switch (mode) {
      case EvalMode::Joint:
        restored = model.sr.forward(batch.lr);
        cf_input = restored;
        break;
      case EvalMode::Bicubic:
        restored = bicubic_resample(batch.lr, batch.hr.shape().h, batch.hr.shape().w);
        cf_input = restored;
        break;
      case EvalMode::CfHr: cf_input = batch.hr; break;
      case EvalMode::CfLr: cf_input = batch.lr; break;
    }
    const std::vector<int> pred = predictions(model.cf.classify(cf_input).logits);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      double p = nan, s = nan;
      if (restored.defined()) {
        const Tensor one_out = clamp_unit(batch_item(restored, static_cast<int>(j)));
        const Tensor one_hr = batch_item(batch.hr, static_cast<int>(j));
        p = psnr(one_out, one_hr, 1.0, space);
        s = ssim(one_out, one_hr, ssim_opts);
      }
      acc.add(batch.magnifications[j], batch.labels[j], pred[j], p, s);
    }
  }
  model.set_training(was_training);
  return acc.rows();
}

std::shared_ptr<const PairSource> make_source(const TrainConfig& config, Split split) {
  if (config.dataset == "synthetic") {
    auto pairs = synthetic_textures(config.synthetic_count, config.synthetic_classes,
                                    config.hr_size, config.scale, config.seed);
    const bool aug = split == Split::Train && config.augment;
    return std::make_shared<InMemoryPairs>(std::move(pairs), aug, config.seed);
  }
  if (config.manifest.empty()) throw ConfigError("no manifest given (set manifest=<csv>)");
  Manifest m = read_manifest(config.manifest);
  m.validate(true);
  auto selection = select_records(m, split, config.fold);
  if (selection.empty()) {
    throw ConfigError("manifest selects no " + to_string(split) + " records");
  }
  const bool training = split == Split::Train && config.augment;
  return std::make_shared<ManifestPairs>(std::move(m), std::move(selection), config.scale,
                                         config.hr_size, training, config.seed,
                                         config.cache_images);
}

}  // namespace shisr
