#include "shisr/blocks.hpp"

#include <algorithm>

namespace shisr {

MSFResult msf_fuse(const std::vector<Tensor>& features) {
  if (features.size() < 2) {
    throw ShapeError("msf_fuse: needs at least two branches, got " +
                     std::to_string(features.size()));
  }
  const Shape s = features.front().shape();
  std::vector<Tensor> logits;
  logits.reserve(features.size());
  for (const Tensor& y : features) {
    if (y.shape() != s) {
      throw ShapeError("msf_fuse: branch shape " + y.shape().str() + " differs from " + s.str());
    }
    logits.push_back(sigmoid(global_avg_pool(y)));
  }
  MSFResult result;
  result.weights = branch_softmax(logits);
  for (std::size_t i = 0; i < features.size(); ++i) {
    Tensor term = scale_channels(features[i], result.weights[i]);
    result.fused = i == 0 ? term : add(result.fused, term);
  }
  return result;
}

std::vector<int> MFEBlockConfig::default_rates(int n_branches) {
  std::vector<int> rates;
  for (int i = 1; i <= n_branches; ++i) rates.push_back(i == 1 ? 1 : 2 * (i - 1));
  return rates;
}

std::vector<int> MFEBlockConfig::effective_rates() const {
  return rates.empty() ? default_rates(n_branches) : rates;
}

void MFEBlockConfig::validate() const {
  if (channels < 1) throw ConfigError("MFEBlockConfig: channels must be positive");
  if (n_branches < 1) throw ConfigError("MFEBlockConfig: n_branches must be positive");
  const auto r = effective_rates();
  if (static_cast<int>(r.size()) != n_branches) {
    throw ConfigError("MFEBlockConfig: " + std::to_string(r.size()) + " rates for " +
                      std::to_string(n_branches) + " branches");
  }
  for (int rate : r) {
    if (rate < 1) throw ConfigError("MFEBlockConfig: rates must be >= 1");
  }
}

MFEBlock::MFEBlock(MFEBlockConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  config_.rates = config_.effective_rates();
  for (int rate : config_.rates) {
    ConvOptions opt;
    opt.dilation = rate;
    opt.padding = same_padding(3, rate);
    branches.emplace_back(config_.channels, config_.channels, 3, opt, true, rng);
  }
  if (config_.concat_fusion) {
    fuse = Conv2d(config_.channels * config_.n_branches, config_.channels, 1, {}, true, rng);
  }
}

MFEBlock::Trace MFEBlock::trace(const Tensor& x) const {
  if (x.shape().c != config_.channels) {
    throw ShapeError("MFEBlock: input " + x.shape().str() + " but block has " +
                     std::to_string(config_.channels) + " channels");
  }
  Trace t;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const Tensor in = i == 0 ? x : add(x, t.branches.back());
    t.branches.push_back(branches[i].forward(in));
  }
  Tensor fused;
  if (config_.concat_fusion) {
    fused = fuse.forward(concat_channels(t.branches));
  } else if (t.branches.size() == 1) {
    // A single branch gets the whole (unit) softmax weight.
    fused = t.branches.front();
  } else {
    t.fusion = msf_fuse(t.branches);
    fused = t.fusion.fused;
  }
  t.out = add(x, fused);
  return t;
}

Tensor MFEBlock::forward(const Tensor& x) const { return trace(x).out; }

void MFEBlock::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t j = 0; j < branches.size(); ++j) {
    branches[j].collect(prefix + ".branch" + std::to_string(j), out);
  }
  if (fuse.weight.defined()) fuse.collect(prefix + ".fuse", out);
}

int attention_hidden_width(int channels, int reduction, int min_hidden) {
  if (reduction < 1) throw ConfigError("attention reduction must be >= 1");
  return std::max(channels / reduction, min_hidden);
}

Tensor resize_to(const Tensor& x, int h, int w, UpsampleMode mode) {
  if (x.shape().h == h && x.shape().w == w) return x;
  return mode == UpsampleMode::Nearest ? upsample_nearest(x, h, w) : upsample_bilinear(x, h, w);
}

CSFBlock::CSFBlock(CSFBlockConfig config, Rng& rng) : config_(config) {
  if (config_.channels < 1) throw ConfigError("CSFBlockConfig: channels must be positive");
  const int hidden = config_.hidden();
  squeeze = Linear(config_.channels, hidden, false, rng);
  head_a = Linear(hidden, config_.channels, false, rng);
  head_b = Linear(hidden, config_.channels, false, rng);
}

CSFResult CSFBlock::forward(const Tensor& x_high, const Tensor& x_low) const {
  const Shape& hs = x_high.shape();
  const Shape& ls = x_low.shape();
  if (hs.c != config_.channels || ls.c != config_.channels) {
    throw ShapeError("CSFBlock: channel mismatch, x_h " + hs.str() + ", x_l " + ls.str() +
                     ", block channels " + std::to_string(config_.channels));
  }
  if (hs.n != ls.n) throw ShapeError("CSFBlock: batch mismatch " + hs.str() + " vs " + ls.str());
  if (ls.h > hs.h || ls.w > hs.w) {
    throw ShapeError("CSFBlock: low-resolution input " + ls.str() +
                     " is larger than high-resolution input " + hs.str());
  }
  CSFResult r;
  r.up_low = resize_to(x_low, hs.h, hs.w, config_.upsample);
  const Tensor u = add(x_high, r.up_low);
  const Tensor s = global_avg_pool(u);
  const Tensor z = relu(squeeze.forward(s));
  auto weights = branch_softmax({head_a.forward(z), head_b.forward(z)});
  r.a = weights[0];
  r.b = weights[1];
  r.out = add(scale_channels(x_high, r.a), scale_channels(r.up_low, r.b));
  return r;
}

void CSFBlock::collect(const std::string& prefix, ParameterList& out) const {
  out.add(prefix + ".Wc", squeeze.weight);
  out.add(prefix + ".Wa", head_a.weight);
  out.add(prefix + ".Wb", head_b.weight);
}

void SKUnitConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) {
    throw ConfigError("SKUnitConfig: channel counts must be positive");
  }
  if (stride != 1 && stride != 2) throw ConfigError("SKUnitConfig: stride must be 1 or 2");
}

SKConv::SKConv(int channels, int stride, int reduction, double bn_momentum, double bn_eps,
               Rng& rng) {
  ConvOptions small{stride, 1, 1};
  ConvOptions wide{stride, 2, 2};
  branch_small = Conv2d(channels, channels, 3, small, false, rng);
  branch_wide = Conv2d(channels, channels, 3, wide, false, rng);
  bn_small = BatchNorm2d(channels, bn_momentum, bn_eps);
  bn_wide = BatchNorm2d(channels, bn_momentum, bn_eps);
  const int hidden = attention_hidden_width(channels, reduction);
  squeeze = Linear(channels, hidden, false, rng);
  head_a = Linear(hidden, channels, false, rng);
  head_b = Linear(hidden, channels, false, rng);
}

SKAttention SKConv::forward(const Tensor& x, bool training) {
  const Tensor u_small = relu(bn_small.forward(branch_small.forward(x), training));
  const Tensor u_wide = relu(bn_wide.forward(branch_wide.forward(x), training));
  const Tensor s = global_avg_pool(add(u_small, u_wide));
  const Tensor z = relu(squeeze.forward(s));
  auto weights = branch_softmax({head_a.forward(z), head_b.forward(z)});
  SKAttention r;
  r.a = weights[0];
  r.b = weights[1];
  r.out = add(scale_channels(u_small, r.a), scale_channels(u_wide, r.b));
  return r;
}

void SKConv::collect(const std::string& prefix, ParameterList& out) const {
  branch_small.collect(prefix + ".branch0", out);
  branch_wide.collect(prefix + ".branch1", out);
  bn_small.collect(prefix + ".bn0", out);
  bn_wide.collect(prefix + ".bn1", out);
  squeeze.collect(prefix + ".fc", out);
  head_a.collect(prefix + ".fc_a", out);
  head_b.collect(prefix + ".fc_b", out);
}

SKUnit::SKUnit(SKUnitConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const int mid = config_.mid_channels();
  reduce = Conv2d(config_.in_channels, mid, 1, {}, false, rng);
  bn_reduce = BatchNorm2d(mid, config_.bn_momentum, config_.bn_eps);
  sk = SKConv(mid, config_.stride, config_.reduction, config_.bn_momentum, config_.bn_eps, rng);
  expand = Conv2d(mid, config_.out_channels, 1, {}, false, rng);
  bn_expand = BatchNorm2d(config_.out_channels, config_.bn_momentum, config_.bn_eps);
  if (config_.stride != 1 || config_.in_channels != config_.out_channels) {
    projection = Conv2d(config_.in_channels, config_.out_channels, 1, {config_.stride, 0, 1},
                        false, rng);
    bn_projection = BatchNorm2d(config_.out_channels, config_.bn_momentum, config_.bn_eps);
  }
}

SKAttention SKUnit::forward(const Tensor& x, bool training) {
  if (x.shape().c != config_.in_channels) {
    throw ShapeError("SKUnit: input " + x.shape().str() + " but unit expects " +
                     std::to_string(config_.in_channels) + " channels");
  }
  const Tensor h = relu(bn_reduce.forward(reduce.forward(x), training));
  SKAttention att = sk.forward(h, training);
  const Tensor main = bn_expand.forward(expand.forward(att.out), training);
  const Tensor shortcut =
      has_projection() ? bn_projection.forward(projection.forward(x), training) : x;
  att.out = relu(add(main, shortcut));
  return att;
}

void SKUnit::collect(const std::string& prefix, ParameterList& out) const {
  reduce.collect(prefix + ".reduce", out);
  bn_reduce.collect(prefix + ".bn_reduce", out);
  sk.collect(prefix + ".sk", out);
  expand.collect(prefix + ".expand", out);
  bn_expand.collect(prefix + ".bn_expand", out);
  if (has_projection()) {
    projection.collect(prefix + ".proj", out);
    bn_projection.collect(prefix + ".bn_proj", out);
  }
}

}  // namespace shisr
