#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shisr/config.hpp"
#include "shisr/data.hpp"
#include "shisr/metrics.hpp"
#include "shisr/optim.hpp"
#include "shisr/serialize.hpp"

namespace shisr {

/// SR and CF networks trained together, with one parameter list spanning
/// both (names prefixed "sr." and "cf.").
struct JointModel {
  explicit JointModel(const TrainConfig& config);

  void set_training(bool training) { cf.set_training(training); }

  SRNet sr;
  CFNet cf;
  ParameterList params;
};

/// Loss components of one step (absent terms are 0) plus the number of
/// correctly classified SR inputs.
struct StepLosses {
  double l1 = 0.0;
  double focal_sr = 0.0;
  double focal_hr = 0.0;
  double ntxent = 0.0;
  double total = 0.0;
  int correct = 0;
  int count = 0;
};

/// Forward pass of every active term. Builds the tape unless grad mode is off.
struct StepGraph {
  LossTerms terms;
  Tensor total;
  Tensor sr;
  Classification sr_class;
  Classification hr_class;
};
StepGraph forward_losses(JointModel& model, const Batch& batch, const TrainConfig& config);

/// One optimization step on `batch`: forward, backward, one ADAM update of
/// every trainable SR and CF parameter. A non-finite loss throws
/// NumericError naming the batch indices and the loss components.
StepLosses train_step(JointModel& model, Adam& optimizer, const Batch& batch,
                      const TrainConfig& config);

struct EpochSummary {
  int epoch = 0;  ///< 0-based
  double lr = 0.0;
  StepLosses mean;  ///< per-batch means; `correct`/`count` are totals
  double train_accuracy = 0.0;
  int steps = 0;
};

/// Epoch loop with JSON-lines logging, periodic checkpoints and resume.
class Trainer {
 public:
  /// `run_dir` empty disables every file output.
  Trainer(TrainConfig config, std::shared_ptr<const PairSource> train_data,
          std::filesystem::path run_dir);

  EpochSummary run_epoch();
  /// Runs until `config.epochs` epochs are complete, checkpointing every
  /// `checkpoint_every` epochs and after the last one.
  std::vector<EpochSummary> fit(const std::function<void(const EpochSummary&)>& on_epoch = {});

  WeightFile checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores weights, optimizer moments, epoch counter and RNG state. The
  /// checkpoint's training hash must match this trainer's configuration.
  void resume(const std::filesystem::path& path);

  JointModel& model() { return *model_; }
  const TrainConfig& config() const { return config_; }
  int epoch() const { return epoch_; }
  std::filesystem::path checkpoint_path(int epoch) const;

 private:
  void log_line(const std::string& json_line) const;

  TrainConfig config_;
  std::shared_ptr<const PairSource> data_;
  std::filesystem::path run_dir_;
  std::unique_ptr<JointModel> model_;
  std::unique_ptr<Adam> optimizer_;
  Rng rng_;
  int epoch_ = 0;
  long step_ = 0;
};

/// Weights (+ optional Adam moments) of a model; the meta carries the config.
WeightFile model_checkpoint(const JointModel& model, const TrainConfig& config,
                            const Adam* optimizer, int epoch, const Rng* rng);
/// Loads the "sr." and "cf." entries of a checkpoint into `model`.
void load_model_weights(const WeightFile& file, JointModel& model);
/// The configuration stored in a checkpoint's meta.
TrainConfig checkpoint_config(const WeightFile& file);

enum class EvalMode {
  Joint,    ///< CF(SR(lr)), PSNR/SSIM of SR(lr)
  CfHr,     ///< CF(hr) only
  CfLr,     ///< CF(lr) only
  Bicubic,  ///< bicubic upsampling in place of the SR network
};
std::string to_string(EvalMode mode);
EvalMode parse_eval_mode(const std::string& text);

/// Test-set evaluation in eval mode, in ascending sample order.
std::vector<MetricRow> evaluate(JointModel& model, const PairSource& data,
                                const TrainConfig& config, EvalMode mode, int batch_size = 8,
                                ColorSpace space = ColorSpace::RGB);

/// Train/test sources described by a configuration.
std::shared_ptr<const PairSource> make_source(const TrainConfig& config, Split split);

}  // namespace shisr
