#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shisr/cf_net.hpp"
#include "shisr/losses.hpp"
#include "shisr/sr_net.hpp"

namespace shisr {

/// Every setting of a training or evaluation run. Serialized as flat
/// `key = value` lines; the same keys are CLI flags with '_' spelled '-'.
struct TrainConfig {
  // Protocol
  int scale = 2;
  int batch_size = 8;
  double lr = 1e-3;
  double lr_decay = 0.9;
  int decay_every = 2;
  int epochs = 100;
  std::uint64_t seed = 0;
  bool deterministic = true;

  // Loss
  double lambda_l1 = 0.6;
  double lambda_focal = 0.3;
  double lambda_ntxent = 0.1;
  double tau = 0.5;
  double gamma = 2.0;
  std::string focal_combine = "mean";  ///< mean | sum

  // Ablations
  bool no_msf = false;
  bool no_fpn_csf = false;
  bool no_csf = false;
  bool no_hr = false;
  bool no_ntxent = false;

  // Model sizes
  int sr_channels = 64;
  int sr_blocks = 8;
  std::vector<int> cf_stage_blocks{2, 2, 2, 2};
  std::vector<int> cf_stage_channels{64, 128, 256, 512};
  int cf_stem = 32;
  int cf_fpn = 128;
  std::string upsample = "bilinear";  ///< CSF upsampling: bilinear | nearest

  // Data
  std::string dataset = "manifest";  ///< manifest | synthetic
  std::string manifest;
  int fold = -1;  ///< -1: use the manifest's split column
  int hr_size = 384;
  bool augment = true;
  bool cache_images = false;
  int synthetic_count = 16;
  int synthetic_classes = 4;

  // Run
  std::string run_dir = "runs/default";
  int checkpoint_every = 10;

  /// Gradient-check sized networks (SR: 4 channels, 1 block; CF: one unit
  /// per stage, widths 8/16/32/64).
  void use_micro_profile();

  void validate() const;

  /// Assigns one key from its textual value. Unknown keys throw a
  /// ConfigError that lists every valid key.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// One `key = value` line per key, in `keys()` order.
  std::string to_text() const;
  /// Starts from the defaults; blank lines and '#' comments are ignored.
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::string& path);

  /// FNV-1a of the settings that affect the model and optimizer trajectory
  /// (run bookkeeping such as `epochs` and `run_dir` is excluded).
  std::uint64_t training_hash() const;

  SRConfig sr_config() const;
  CFConfig cf_config() const;
  /// Loss weights after ablations: no_hr drops the HR terms and NT-Xent,
  /// no_ntxent drops NT-Xent; the remaining weights are rescaled to sum 1.
  LossWeights loss_weights() const;
  /// The HR image is fed to the classifier (focal HR term and NT-Xent).
  bool uses_hr_branch() const { return !no_hr; }
  bool uses_ntxent() const { return !no_hr && !no_ntxent && lambda_ntxent > 0; }
};

/// lr * lr_decay^floor(epoch / decay_every), epochs counted from 0.
double lr_schedule(int epoch, const TrainConfig& config);

std::uint64_t fnv1a(const std::string& text);

}  // namespace shisr
