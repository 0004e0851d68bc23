#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "json.hpp"
#include "shisr/image.hpp"
#include "shisr/trainer.hpp"
#include "smoke.hpp"

using namespace shisr;

namespace {

Batch first_batch(const TrainConfig& c) {
  const auto src = make_source(c, Split::Train);
  std::vector<SamplePair> samples;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < 4; ++i) {
    samples.push_back(src->get(i, 0));
    idx.push_back(i);
  }
  return collate(samples, idx);
}

double grad_norm(const ParameterList& params, const std::string& prefix) {
  double s = 0.0;
  for (const Parameter& p : params.items()) {
    if (!p.trainable || p.name.rfind(prefix, 0) != 0) continue;
    for (Real g : p.value.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

std::vector<nlohmann::json> epoch_logs(const std::filesystem::path& run) {
  std::vector<nlohmann::json> out;
  std::ifstream in(run / "log.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "epoch") out.push_back(j);
  }
  return out;
}

}  // namespace

TEST(Config, ProtocolDefaults) {
  const TrainConfig d;
  EXPECT_EQ(d.batch_size, 8);
  EXPECT_EQ(d.epochs, 100);
  EXPECT_DOUBLE_EQ(d.lr, 1e-3);
  const LossWeights w = d.loss_weights();
  EXPECT_DOUBLE_EQ(w.l1, 0.6);
  EXPECT_DOUBLE_EQ(w.focal, 0.3);
  EXPECT_DOUBLE_EQ(w.ntxent, 0.1);
  EXPECT_DOUBLE_EQ(w.tau, 0.5);
  EXPECT_DOUBLE_EQ(w.gamma, 2.0);
  const std::string text = d.to_text();
  for (const char* line : {"lambda_l1 = 0.6\n", "lambda_focal = 0.3\n", "lambda_ntxent = 0.1\n",
                           "tau = 0.5\n", "batch_size = 8\n", "epochs = 100\n"}) {
    EXPECT_NE(text.find(line), std::string::npos) << line;
  }
}

TEST(Config, LrSchedule) {
  const TrainConfig d;
  EXPECT_DOUBLE_EQ(lr_schedule(0, d), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(1, d), 1e-3);
  EXPECT_NEAR(lr_schedule(2, d), 9e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(3, d), 9e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(10, d), 5.9049e-4, 1e-15);
  for (int e = 0; e < 100; ++e) EXPECT_EQ(lr_schedule(e, d), 1e-3 * std::pow(0.9, e / 2));
}

TEST(Config, TextRoundTripAndErrors) {
  TrainConfig c = testutil::smoke_config();
  c.cf_stage_blocks = {1, 2, 1, 3};
  c.no_csf = true;
  c.focal_combine = "sum";
  const TrainConfig back = TrainConfig::from_text("# comment\n\n" + c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.training_hash(), c.training_hash());

  TrainConfig longer = c;
  longer.epochs = 500;
  longer.run_dir = "elsewhere";
  EXPECT_EQ(longer.training_hash(), c.training_hash());
  longer.lr = 0.5;
  EXPECT_NE(longer.training_hash(), c.training_hash());

  try {
    c.set("learning_rate", "1");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const std::string& k : TrainConfig::keys()) EXPECT_NE(msg.find(k), std::string::npos) << k;
  }
  EXPECT_THROW(c.set("batch_size", "eight"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("scale 2"), ConfigError);
  TrainConfig bad;
  bad.scale = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.no_ntxent = true;
  EXPECT_NO_THROW(bad.validate());
}

TEST(Config, AblationLossWeights) {
  TrainConfig c;
  c.no_hr = true;
  LossWeights w = c.loss_weights();
  EXPECT_NEAR(w.l1, 2.0 / 3, 1e-12);
  EXPECT_NEAR(w.focal, 1.0 / 3, 1e-12);
  EXPECT_EQ(w.ntxent, 0.0);
  c = TrainConfig{};
  c.no_ntxent = true;
  w = c.loss_weights();
  EXPECT_NEAR(w.l1, 0.6 / 0.9, 1e-12);
  EXPECT_EQ(w.ntxent, 0.0);
  EXPECT_TRUE(c.uses_hr_branch());
}

TEST(Trainer, OnlyL1LeavesClassifierWithoutGradient) {
  TrainConfig c = testutil::tiny_config();
  c.lambda_l1 = 1;
  c.lambda_focal = 0;
  c.lambda_ntxent = 0;
  JointModel model(c);
  const StepGraph g = forward_losses(model, first_batch(c), c);
  backward(g.total);
  EXPECT_GT(grad_norm(model.params, "sr."), 0.0);
  for (const Parameter& p : model.params.items()) {
    if (!p.trainable || p.name.rfind("cf.", 0) != 0) continue;
    for (Real v : p.value.grad()) ASSERT_EQ(v, 0.0f) << p.name;
  }
}

TEST(Trainer, AllTermsReachBothModules) {
  const TrainConfig c = testutil::tiny_config();
  JointModel model(c);
  const StepGraph g = forward_losses(model, first_batch(c), c);
  EXPECT_TRUE(g.terms.ntxent.defined());
  EXPECT_TRUE(g.terms.focal_hr.defined());
  backward(g.total);
  EXPECT_GT(grad_norm(model.params, "sr."), 0.0);
  EXPECT_GT(grad_norm(model.params, "cf."), 0.0);
}

TEST(Trainer, NoHrSkipsHrClassification) {
  TrainConfig c = testutil::tiny_config();
  c.no_hr = true;
  JointModel model(c);
  const StepGraph g = forward_losses(model, first_batch(c), c);
  EXPECT_FALSE(g.hr_class.logits.defined());
  EXPECT_FALSE(g.terms.focal_hr.defined());
  EXPECT_FALSE(g.terms.ntxent.defined());
  const LossWeights w = c.loss_weights();
  EXPECT_NEAR(g.total.item(), w.l1 * g.terms.l1.item() + w.focal * g.terms.focal_sr.item(), 1e-5);
}

TEST(Trainer, CheckpointsAreReproducibleAndResumable) {
  TrainConfig c = testutil::tiny_config();
  c.epochs = 4;
  c.checkpoint_every = 2;
  auto data = make_source(c, Split::Train);
  const auto dir_a = testutil::temp_dir("resume_a");
  const auto dir_b = testutil::temp_dir("resume_b");
  const auto dir_c = testutil::temp_dir("resume_c");
  Trainer a(c, data, dir_a);
  a.fit();
  Trainer b(c, data, dir_b);
  b.fit();
  for (int e : {2, 4}) {
    EXPECT_EQ(read_file(a.checkpoint_path(e)), read_file(b.checkpoint_path(e))) << e;
  }
  Trainer resumed(c, data, dir_c);
  resumed.resume(a.checkpoint_path(2));
  EXPECT_EQ(resumed.epoch(), 2);
  resumed.fit();
  EXPECT_EQ(read_file(resumed.checkpoint_path(4)), read_file(a.checkpoint_path(4)));

  TrainConfig other = c;
  other.lr = 0.5;
  Trainer mismatch(other, data, "");
  EXPECT_THROW(mismatch.resume(a.checkpoint_path(2)), ConfigError);

  EXPECT_EQ(epoch_logs(dir_a).size(), 4u);
  const TrainConfig stored = checkpoint_config(read_weights(a.checkpoint_path(4)));
  EXPECT_EQ(stored.training_hash(), c.training_hash());
}

TEST(Trainer, EvaluationSurvivesSaveAndLoad) {
  TrainConfig c = testutil::tiny_config();
  c.epochs = 1;
  c.hr_size = 64;  // cf-lr needs a 32x32 low-res input
  const auto dir = testutil::temp_dir("evalcsv");
  Trainer t(c, make_source(c, Split::Train), dir);
  t.fit();
  const auto test = make_source(c, Split::Test);
  for (EvalMode mode : {EvalMode::Joint, EvalMode::CfHr, EvalMode::CfLr, EvalMode::Bicubic}) {
    const std::string first = metrics_csv(evaluate(t.model(), *test, c, mode));
    const std::string again = metrics_csv(evaluate(t.model(), *test, c, mode));
    EXPECT_EQ(first, again);
    const WeightFile f = read_weights(dir / "checkpoints" / "last.shw");
    JointModel loaded(checkpoint_config(f));
    load_model_weights(f, loaded);
    const auto rows = evaluate(loaded, *test, c, mode);
    EXPECT_EQ(metrics_csv(rows), first) << to_string(mode);
    EXPECT_EQ(confusion_csv(rows), confusion_csv(evaluate(t.model(), *test, c, mode)));
  }
}

TEST(Trainer, BicubicModeMatchesDirectComputation) {
  TrainConfig c = testutil::tiny_config();
  JointModel model(c);
  const auto test = make_source(c, Split::Test);
  const auto rows = evaluate(model, *test, c, EvalMode::Bicubic);
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < test->size(); ++i) {
    const SamplePair p = test->get(i, 0);
    const Tensor up = clamp_unit(bicubic_resample(p.lr, p.hr.shape().h, p.hr.shape().w));
    psnr_sum += psnr(up, p.hr);
    ssim_sum += ssim(up, p.hr);
  }
  const MetricRow& all = rows.back();
  EXPECT_EQ(all.count, static_cast<long>(test->size()));
  EXPECT_NEAR(all.psnr_db, psnr_sum / test->size(), 1e-9);
  EXPECT_NEAR(all.ssim, ssim_sum / test->size(), 1e-9);
  const auto cf_only = evaluate(model, *test, c, EvalMode::CfHr);
  EXPECT_TRUE(std::isnan(cf_only.back().psnr_db));
}

TEST(Trainer, AblationFlagsTrainAndChangeComposition) {
  const TrainConfig base = testutil::tiny_config();
  const std::size_t base_count = JointModel(base).params.scalar_count();
  for (const std::string flag : {"no_msf", "no_fpn_csf", "no_csf", "no_hr", "no_ntxent"}) {
    TrainConfig c = base;
    c.epochs = 1;
    c.set(flag, "true");
    const auto dir = testutil::temp_dir("ablation_" + flag);
    Trainer t(c, make_source(c, Split::Train), dir);
    t.fit();
    const auto logs = epoch_logs(dir);
    ASSERT_EQ(logs.size(), 1u) << flag;
    const ParameterList& p = t.model().params;
    const bool drops_ntxent = flag == "no_hr" || flag == "no_ntxent";
    EXPECT_EQ(logs[0]["ntxent"].get<double>() == 0.0, drops_ntxent) << flag;
    EXPECT_EQ(logs[0]["focal_hr"].get<double>() == 0.0, flag == "no_hr") << flag;
    if (flag == "no_msf") {
      EXPECT_GT(p.scalar_count(), base_count);
    }
    if (flag == "no_fpn_csf") {
      EXPECT_EQ(p.scalar_count("cf.fpn"), 0u);
      EXPECT_LT(p.scalar_count(), base_count);
    }
    if (flag == "no_csf") {
      EXPECT_EQ(p.scalar_count("cf.fpn.csf"), 0u);
      EXPECT_GT(p.scalar_count("cf.fpn.lateral"), 0u);
    }
    if (drops_ntxent) {
      EXPECT_EQ(p.scalar_count(), base_count);
    }
  }
}

TEST(Trainer, NonFiniteInputIsReported) {
  TrainConfig c = testutil::tiny_config();
  JointModel model(c);
  Adam opt(model.params, {});
  Batch b = first_batch(c);
  b.lr.mutable_data()[0] = NAN;
  try {
    train_step(model, opt, b, c);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}
