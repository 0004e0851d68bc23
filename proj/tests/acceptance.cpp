// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "shisr/blocks.hpp"
#include "shisr/gradcheck.hpp"
#include "shisr/image.hpp"
#include "shisr/losses.hpp"
#include "shisr/metrics.hpp"
#include "shisr/trainer.hpp"
#include "smoke.hpp"

namespace fs = std::filesystem;
using namespace shisr;
using testutil::make;
using testutil::values;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double simplex_error(const std::vector<Tensor>& weights) {
  double worst = 0.0;
  for (std::size_t i = 0; i < weights[0].numel(); ++i) {
    double total = 0.0;
    for (const Tensor& w : weights) {
      if (w.data()[i] < 0) return 1.0;
      total += w.data()[i];
    }
    worst = std::max(worst, std::fabs(total - 1.0));
  }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome recipe() {
  Outcome o;
  const fs::path root = SHISR_SOURCE_DIR;
  const std::string readme = read_file(root / "README.md");
  o.require(readme.find("## Full-scale recipe") != std::string::npos, "README recipe section");
  const TrainConfig c = TrainConfig::load((root / "configs" / "breakhis.cfg").string());
  o.require(c.dataset == "manifest" && c.hr_size == 384 && c.epochs == 100 && c.batch_size == 8,
            "recipe config carries the protocol");
  o.require(c.sr_config().n_blocks == 8 && c.cf_config().stage_blocks.size() == 4,
            "recipe config uses the full-size networks");
  o.detail = o.pass ? "README section and configs/breakhis.cfg load" : o.detail;
  return o;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  int cases = 0;
  for (const GradCheckCase& c : gradient_suite()) {
    ++cases;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const GradCheckResult r = c.run(2000 + s, {});
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.name;
      }
      o.require(r.passed && r.max_rel_error < 1e-3 && r.checked > 0,
                c.name + " seed " + std::to_string(2000 + s));
    }
  }
  const double secs = seconds_since(t0);
  o.require(secs < 300.0, "runtime under 5 minutes");
  o.detail = std::to_string(cases) + " cases x 5 seeds, worst " + fmt("%.2e", worst) + " (" +
             worst_case + "), " + fmt("%.0f s", secs) + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome invariants() {
  Outcome o;
  Rng rng(31);
  double worst_simplex = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> branches;
    for (int i = 0; i < 4; ++i) branches.push_back(testutil::random({2, 6, 5, 5}, rng, -3, 3));
    worst_simplex = std::max(worst_simplex, simplex_error(msf_fuse(branches).weights));

    CSFBlock csf({8, 16}, rng);
    const Tensor xh = testutil::random({2, 8, 8, 8}, rng, -2, 2);
    const Tensor xl = testutil::random({2, 8, 4, 4}, rng, -2, 2);
    const CSFResult r = csf.forward(xh, xl);
    worst_simplex = std::max(worst_simplex, simplex_error({r.a, r.b}));
    bool convex = true;
    for (std::size_t i = 0; i < xh.numel(); ++i) {
      const double lo = std::min(xh.data()[i], r.up_low.data()[i]);
      const double hi = std::max(xh.data()[i], r.up_low.data()[i]);
      convex = convex && r.out.data()[i] >= lo - 1e-6 && r.out.data()[i] <= hi + 1e-6;
    }
    o.require(convex, "CSF convex combination");

    SKUnitConfig sc;
    sc.in_channels = 4;
    sc.out_channels = 8;
    sc.stride = 2;
    SKUnit sk(sc, rng);
    const SKAttention a = sk.forward(testutil::random({2, 4, 9, 9}, rng), true);
    worst_simplex = std::max(worst_simplex, simplex_error({a.a, a.b}));

    const Tensor x = testutil::random({2, 12, 3, 4}, rng);
    o.require(bit_identical(pixel_unshuffle(pixel_shuffle(x, 2), 2), x), "pixel shuffle round trip");

    LossWeights w;
    double c[4];
    for (double& v : c) v = rng.uniform(0, 3);
    const double base = total_loss(c[0], c[1], c[2], c[3], w);
    const double coeff[4] = {w.l1, w.focal / 2, w.focal / 2, w.ntxent};
    for (int k = 0; k < 4; ++k) {
      double d[4] = {c[0], c[1], c[2], c[3]};
      const double step = rng.uniform(0.5, 2);
      d[k] += step;
      o.require(std::fabs(total_loss(d[0], d[1], d[2], d[3], w) - base - coeff[k] * step) < 1e-12,
                "total_loss linear in component " + std::to_string(k));
    }
  }
  o.require(worst_simplex < 1e-6, "attention weights on the simplex");
  o.detail = "simplex error " + fmt("%.1e", worst_simplex) +
             ", CSF convexity, pixel shuffle round trip, loss linearity" +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome oracles() {
  Outcome o;
  Rng rng(41);
  double worst = 0.0;
  auto track = [&](double got, double ref) { worst = std::max(worst, std::fabs(got - ref)); };
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = testutil::random({1, 1, 4, 4}, rng, 0, 1);
    const Tensor b = testutil::random({1, 1, 4, 4}, rng, 0, 1);
    track(psnr(a, b), oracle::psnr(values(a), values(b), 1.0));
    SsimOptions small;
    small.window = 3;
    track(ssim(a, b, small), oracle::ssim_plane(values(a), values(b), 4, 4, 3));

    const double x = rng.uniform(-2.5, 2.5);
    track(cubic_kernel(x), oracle::keys_cubic(x));
    const std::vector<double> row{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const int out = rng.uniform_int(2, 12);
    const auto ref = oracle::resample_row(row, out);
    const Tensor got = bicubic_resample(make({1, 1, 1, 4}, row), 1, out);
    for (int i = 0; i < out; ++i) track(got.data()[i], ref[i]);

    const Tensor logits = testutil::random({2, 8, 1, 1}, rng, -3, 3);
    const std::vector<int> y{rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
    track(focal_loss(logits, y, 2.0).item(), oracle::focal(values(logits), y, 8, 2.0));

    const Tensor za = testutil::random({4, 2, 1, 1}, rng);
    const Tensor zb = testutil::random({4, 2, 1, 1}, rng);
    track(nt_xent_loss(za, zb, 0.5).item(), oracle::nt_xent(values(za), values(zb), 4, 2, 0.5));
  }
  o.require(worst < 1e-5, "oracle agreement within 1e-5");
  double degenerate = 0.0;
  for (int n : {2, 3, 4, 8}) {
    const Tensor z = Tensor::full({n, 2, 1, 1}, 0.3f);
    degenerate =
        std::max(degenerate, std::fabs(nt_xent_loss(z, z, 0.5).item() - std::log(2.0 * n - 1)));
  }
  o.require(degenerate < 1e-6, "NT-Xent degenerate case ln(2n-1)");
  o.detail = "max deviation " + fmt("%.1e", worst) + ", degenerate NT-Xent " +
             fmt("%.1e", degenerate) + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome overfit() {
  Outcome o;
  const auto t0 = Clock::now();
  const TrainConfig c = testutil::smoke_config();
  const auto data = make_source(c, Split::Train);
  Trainer t(c, data, "");
  const auto epochs = t.fit();
  const double first = epochs.front().mean.total;
  const double last = epochs.back().mean.total;
  const double drop = 1.0 - last / first;
  const double train_acc = epochs.back().train_accuracy;
  const auto rows = evaluate(t.model(), *data, c, EvalMode::Joint);
  const double eval_acc = rows.back().confusion.accuracy();
  const double secs = seconds_since(t0);
  o.require(drop >= 0.9, "loss drop >= 90%");
  o.require(train_acc == 1.0, "100% train accuracy");
  o.require(secs < 600.0, "runtime under 10 minutes");
  o.detail = "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (drop " +
             fmt("%.1f%%", 100 * drop) + "), train accuracy " + fmt("%.0f%%", 100 * train_acc) +
             ", eval-mode accuracy " + fmt("%.0f%%", 100 * eval_acc) + ", " + fmt("%.0f s", secs) +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome ablations() {
  Outcome o;
  TrainConfig base = testutil::smoke_config();
  base.epochs = 1;
  const JointModel full(base);
  const std::size_t n_full = full.params.scalar_count();
  const std::size_t csf = full.params.scalar_count("cf.fpn.csf");
  const std::size_t fpn = full.params.scalar_count("cf.fpn");
  const std::size_t fc_full = full.params.scalar_count("cf.fc");
  const int ch = base.cf_stage_channels.back();
  const std::size_t fc_bare = static_cast<std::size_t>(kNumClasses) * ch + kNumClasses;
  const std::size_t concat_fuse =
      static_cast<std::size_t>(base.sr_blocks) *
      (static_cast<std::size_t>(4 * base.sr_channels) * base.sr_channels + base.sr_channels);

  std::string summary;
  for (const std::string flag : {"no_msf", "no_fpn_csf", "no_csf", "no_hr", "no_ntxent"}) {
    TrainConfig c = base;
    c.set(flag, "true");
    Trainer t(c, make_source(c, Split::Train), "");
    const EpochSummary e = t.fit().front();
    const std::size_t n = t.model().params.scalar_count();
    std::size_t expected = n_full;
    if (flag == "no_msf") expected = n_full + concat_fuse;
    if (flag == "no_fpn_csf") expected = n_full - fpn - fc_full + fc_bare;
    if (flag == "no_csf") expected = n_full - csf;
    o.require(n == expected, flag + " parameter count " + std::to_string(n) + " vs " +
                                 std::to_string(expected));
    const bool no_ntx = flag == "no_hr" || flag == "no_ntxent";
    o.require((e.mean.ntxent == 0.0) == no_ntx, flag + " NT-Xent component");
    o.require((e.mean.focal_hr == 0.0) == (flag == "no_hr"), flag + " HR focal component");
    const LossWeights w = c.loss_weights();
    o.require(std::fabs(w.l1 + w.focal + w.ntxent - 1.0) < 1e-12, flag + " weights sum to 1");
    o.require(std::isfinite(e.mean.total), flag + " trains");
    summary += (summary.empty() ? "" : ", ") + flag + " " + std::to_string(n);
  }
  o.detail = "params full " + std::to_string(n_full) + ": " + summary +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome protocol() {
  Outcome o;
  const TrainConfig d;
  for (int e = 0; e < 100; ++e) {
    o.require(lr_schedule(e, d) == 1e-3 * std::pow(0.9, e / 2), "lr at epoch " + std::to_string(e));
  }
  o.require(std::fabs(lr_schedule(10, d) - 5.9049e-4) < 1e-15, "lr at epoch 10");
  const TrainConfig back = TrainConfig::from_text(d.to_text());
  const LossWeights w = back.loss_weights();
  o.require(w.l1 == 0.6 && w.focal == 0.3 && w.ntxent == 0.1, "lambda = (0.6, 0.3, 0.1)");
  o.require(w.tau == 0.5, "tau = 0.5");
  o.require(back.batch_size == 8 && back.epochs == 100, "batch 8, 100 epochs");
  o.require(back.lr == 1e-3 && back.lr_decay == 0.9 && back.decay_every == 2, "lr 1e-3 x0.9 / 2");
  o.detail = "lr 1e-3 x0.9 every 2 epochs; defaults serialize lambda (0.6, 0.3, 0.1), tau 0.5, "
             "batch 8, 100 epochs" +
             std::string(o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome determinism() {
  Outcome o;
  TrainConfig c = testutil::smoke_config();
  c.epochs = 3;
  c.hr_size = 64;  // cf-lr evaluation needs a 32x32 low-res input
  c.checkpoint_every = 1;
  c.augment = true;
  c.deterministic = true;
  const auto data = make_source(c, Split::Train);
  const fs::path a = testutil::temp_dir("accept_det_a"), b = testutil::temp_dir("accept_det_b");
  Trainer ta(c, data, a);
  ta.fit();
  Trainer tb(c, data, b);
  tb.fit();
  for (int e = 1; e <= 3; ++e) {
    o.require(read_file(ta.checkpoint_path(e)) == read_file(tb.checkpoint_path(e)),
              "identical checkpoint at epoch " + std::to_string(e));
  }
  const auto test = make_source(c, Split::Test);
  const WeightFile f = read_weights(ta.checkpoint_path(3));
  JointModel loaded(checkpoint_config(f));
  load_model_weights(f, loaded);
  for (EvalMode mode : {EvalMode::Joint, EvalMode::CfHr, EvalMode::CfLr, EvalMode::Bicubic}) {
    const auto before = evaluate(ta.model(), *test, c, mode);
    const auto after = evaluate(loaded, *test, c, mode);
    o.require(metrics_csv(before) == metrics_csv(after) &&
                  confusion_csv(before) == confusion_csv(after),
              "identical CSVs after reload (" + to_string(mode) + ")");
  }
  o.detail = "3 epochs x 2 runs bit-identical checkpoints; eval CSVs identical after save/load" +
             std::string(o.pass ? "" : "; " + o.detail);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"full-scale recipe documented", recipe},
      {"gradient suite", gradients},
      {"algebraic invariants", invariants},
      {"oracle equivalence", oracles},
      {"overfit smoke test", overfit},
      {"ablation contract", ablations},
      {"protocol fidelity", protocol},
      {"determinism and checkpointing", determinism},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("%s  %-30s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
