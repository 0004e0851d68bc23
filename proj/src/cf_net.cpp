#include "shisr/cf_net.hpp"

namespace shisr {

int class_index(const std::string& abbreviation) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (abbreviation == kClassNames[i]) return i;
  }
  return -1;
}

CFConfig CFConfig::micro() {
  CFConfig c;
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_channels = {8, 16, 32, 64};
  c.stem_channels = 8;
  c.fpn_channels = 16;
  return c;
}

void CFConfig::validate() const {
  if (stage_blocks.size() != 4 || stage_channels.size() != 4) {
    throw ConfigError("CFConfig: exactly 4 stages are required");
  }
  for (int b : stage_blocks) {
    if (b < 1) throw ConfigError("CFConfig: every stage needs at least one unit");
  }
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("CFConfig: stage channels must be positive");
  }
  if (stem_channels < 1 || fpn_channels < 1) {
    throw ConfigError("CFConfig: stem and fpn channels must be positive");
  }
  if (n_classes < 2) throw ConfigError("CFConfig: n_classes must be >= 2");
}

int CFConfig::feature_dim() const {
  return no_fpn_csf ? stage_channels.back() : 4 * fpn_channels;
}

CFNet::CFNet(CFConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  stem = Conv2d(3, config_.stem_channels, 7, {2, 3, 1}, false, rng);
  stem_bn = BatchNorm2d(config_.stem_channels, config_.bn_momentum, config_.bn_eps);
  int in = config_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    std::vector<SKUnit> units;
    for (int u = 0; u < config_.stage_blocks[s]; ++u) {
      SKUnitConfig uc;
      uc.in_channels = in;
      uc.out_channels = config_.stage_channels[s];
      uc.stride = (s > 0 && u == 0) ? 2 : 1;
      uc.reduction = config_.reduction;
      uc.bn_momentum = config_.bn_momentum;
      uc.bn_eps = config_.bn_eps;
      units.emplace_back(uc, rng);
      in = config_.stage_channels[s];
    }
    stages.push_back(std::move(units));
  }
  if (!config_.no_fpn_csf) {
    for (int s = 0; s < 4; ++s) {
      laterals.emplace_back(config_.stage_channels[s], config_.fpn_channels, 1, ConvOptions{},
                            true, rng);
    }
    if (!config_.no_csf) {
      CSFBlockConfig cc;
      cc.channels = config_.fpn_channels;
      cc.reduction = config_.reduction;
      cc.upsample = config_.upsample;
      for (int k = 0; k < 3; ++k) fusions.emplace_back(cc, rng);
    }
    for (int s = 0; s < 4; ++s) {
      smoothing.emplace_back(config_.fpn_channels, config_.fpn_channels, 3, ConvOptions{1, 1, 1},
                             true, rng);
    }
  }
  fc = Linear(config_.feature_dim(), config_.n_classes, true, rng);
}

std::vector<Tensor> CFNet::backbone(const Tensor& img) {
  const Shape& s = img.shape();
  if (s.c != 3) throw ShapeError("CFNet: expected a 3-channel image, got " + s.str());
  if (s.h < 32 || s.w < 32) {
    throw ShapeError("CFNet: input " + s.str() + " is smaller than 32x32");
  }
  Tensor x = relu(stem_bn.forward(stem.forward(img), training_));
  x = max_pool2d(x, 3, 2, 1);
  std::vector<Tensor> outs;
  for (auto& stage : stages) {
    for (SKUnit& unit : stage) x = unit.forward(x, training_).out;
    outs.push_back(x);
  }
  return outs;
}

Pyramid CFNet::fpn(const std::vector<Tensor>& stage_outputs) const {
  if (stage_outputs.size() != 4) {
    throw ShapeError("CFNet::fpn: expected 4 stage outputs, got " +
                     std::to_string(stage_outputs.size()));
  }
  if (config_.no_fpn_csf) throw ConfigError("CFNet::fpn: FPN disabled by no_fpn_csf");
  Pyramid p;
  for (int s = 0; s < 4; ++s) p.laterals.push_back(laterals[s].forward(stage_outputs[s]));
  p.merged.assign(4, Tensor());
  p.merged[3] = p.laterals[3];
  if (!config_.no_csf) p.fusions.resize(3);
  for (int k = 2; k >= 0; --k) {
    const Tensor& high = p.laterals[k];
    if (config_.no_csf) {
      const Tensor up =
          resize_to(p.merged[k + 1], high.shape().h, high.shape().w, config_.upsample);
      p.merged[k] = add(high, up);
    } else {
      p.fusions[k] = fusions[k].forward(high, p.merged[k + 1]);
      p.merged[k] = p.fusions[k].out;
    }
  }
  for (int s = 0; s < 4; ++s) p.levels.push_back(smoothing[s].forward(p.merged[s]));
  return p;
}

Classification CFNet::classify(const Tensor& img) {
  const std::vector<Tensor> stage_outputs = backbone(img);
  Classification c;
  if (config_.no_fpn_csf) {
    c.features = global_avg_pool(stage_outputs.back());
  } else {
    const Pyramid p = fpn(stage_outputs);
    std::vector<Tensor> pooled;
    for (const Tensor& level : p.levels) pooled.push_back(global_avg_pool(level));
    c.features = concat_channels(pooled);
  }
  c.logits = fc.forward(c.features);
  return c;
}

void CFNet::collect(const std::string& prefix, ParameterList& out) const {
  stem.collect(prefix + ".stem", out);
  stem_bn.collect(prefix + ".stem_bn", out);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t u = 0; u < stages[s].size(); ++u) {
      stages[s][u].collect(prefix + ".stage" + std::to_string(s) + ".unit" + std::to_string(u),
                           out);
    }
  }
  for (std::size_t s = 0; s < laterals.size(); ++s) {
    laterals[s].collect(prefix + ".fpn.lateral" + std::to_string(s), out);
  }
  for (std::size_t k = 0; k < fusions.size(); ++k) {
    fusions[k].collect(prefix + ".fpn.csf" + std::to_string(k), out);
  }
  for (std::size_t s = 0; s < smoothing.size(); ++s) {
    smoothing[s].collect(prefix + ".fpn.smooth" + std::to_string(s), out);
  }
  fc.collect(prefix + ".fc", out);
}

ParameterList CFNet::parameters(const std::string& prefix) const {
  ParameterList out;
  collect(prefix, out);
  return out;
}

}  // namespace shisr
