#pragma once

#include <vector>

#include "shisr/blocks.hpp"

namespace shisr {

struct SRConfig {
  int scale = 2;
  int n_blocks = 8;
  int channels = 64;
  int image_channels = 3;
  int n_branches = 4;
  bool no_msf = false;

  /// Gradient-check size: 4 channels, one block.
  static SRConfig micro(int scale = 2);
  void validate() const;
};

/// Super-resolution network: 3x3 head, a stack of MFE blocks with a long
/// skip from the head, then log2(scale) stages of (3x3 conv to 4C, pixel
/// shuffle x2) and a final 3x3 conv back to image channels. The output is
/// linear; clamping to [0, 1] is left to evaluation code.
class SRNet {
 public:
  SRNet() = default;
  SRNet(SRConfig config, Rng& rng);

  Tensor forward(const Tensor& lr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  ParameterList parameters(const std::string& prefix = "sr") const;
  const SRConfig& config() const { return config_; }

  Conv2d head;
  std::vector<MFEBlock> blocks;
  std::vector<Conv2d> upsample;
  Conv2d tail;

 private:
  SRConfig config_;
};

/// Copy of `img` with every value clamped to [0, 1].
Tensor clamp_unit(const Tensor& img);

}  // namespace shisr
