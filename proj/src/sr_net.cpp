#include "shisr/sr_net.hpp"

#include <algorithm>

namespace shisr {

SRConfig SRConfig::micro(int scale) {
  SRConfig c;
  c.scale = scale;
  c.n_blocks = 1;
  c.channels = 4;
  return c;
}

void SRConfig::validate() const {
  if (scale < 2 || (scale & (scale - 1)) != 0) {
    throw ConfigError("SRConfig: scale must be a power of two >= 2, got " +
                      std::to_string(scale));
  }
  if (n_blocks < 1) throw ConfigError("SRConfig: n_blocks must be >= 1");
  if (channels < 1 || image_channels < 1) throw ConfigError("SRConfig: channels must be positive");
  if (n_branches < 1) throw ConfigError("SRConfig: n_branches must be >= 1");
}

SRNet::SRNet(SRConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const ConvOptions same3{1, 1, 1};
  head = Conv2d(config_.image_channels, config_.channels, 3, same3, true, rng);
  for (int i = 0; i < config_.n_blocks; ++i) {
    MFEBlockConfig bc;
    bc.channels = config_.channels;
    bc.n_branches = config_.n_branches;
    bc.concat_fusion = config_.no_msf;
    blocks.emplace_back(bc, rng);
  }
  for (int s = config_.scale; s > 1; s /= 2) {
    upsample.emplace_back(config_.channels, 4 * config_.channels, 3, same3, true, rng);
  }
  tail = Conv2d(config_.channels, config_.image_channels, 3, same3, true, rng);
}

Tensor SRNet::forward(const Tensor& lr) const {
  if (lr.shape().c != config_.image_channels) {
    throw ShapeError("SRNet: expected " + std::to_string(config_.image_channels) +
                     "-channel input, got " + lr.shape().str());
  }
  const Tensor shallow = head.forward(lr);
  Tensor x = shallow;
  for (const MFEBlock& b : blocks) x = b.forward(x);
  x = add(x, shallow);
  for (const Conv2d& up : upsample) x = pixel_shuffle(up.forward(x), 2);
  return tail.forward(x);
}

void SRNet::collect(const std::string& prefix, ParameterList& out) const {
  head.collect(prefix + ".head", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".mfe" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < upsample.size(); ++i) {
    upsample[i].collect(prefix + ".up" + std::to_string(i), out);
  }
  tail.collect(prefix + ".tail", out);
}

ParameterList SRNet::parameters(const std::string& prefix) const {
  ParameterList out;
  collect(prefix, out);
  return out;
}

Tensor clamp_unit(const Tensor& img) {
  std::vector<Real> v(img.data().begin(), img.data().end());
  for (Real& x : v) x = std::clamp(x, Real(0), Real(1));
  return Tensor::from(img.shape(), std::move(v));
}

}  // namespace shisr
