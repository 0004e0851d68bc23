#pragma once

#include <optional>
#include <vector>

#include "shisr/tensor.hpp"

namespace shisr {

enum class ConvAlgo {
  Im2col,  ///< lowering to a column matrix followed by a GEMM
  Direct,  ///< nested loops; same summation order as Im2col
};

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  ConvAlgo algo = ConvAlgo::Im2col;
};

/// `weight` is (c_out, c_in, k, k); `bias`, when given, is (1, c_out, 1, 1).
/// Both algorithms accumulate each output in ascending (c_in, ky, kx) order
/// and add the bias last, so they are bit-identical.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const ConvOptions& options = {});

/// Padding that keeps the spatial size for an odd kernel at stride 1.
inline int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

/// Affine map on the flattened (n, c*h*w) view of `input`. `weight` is
/// (d_out, d, 1, 1), `bias` (1, d_out, 1, 1). Result is (n, d_out, 1, 1).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias);

Tensor global_avg_pool(const Tensor& input);
Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding);

Tensor pixel_shuffle(const Tensor& input, int factor);
/// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& input, int factor);

/// Half-pixel-centre bilinear resize (align_corners = false), edge-clamped.
Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w);
Tensor upsample_nearest(const Tensor& input, int out_h, int out_w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x (n,c,h,w) scaled by a per-(n,c) factor s of shape (n,c,1,1).
Tensor scale_channels(const Tensor& x, const Tensor& s);
Tensor add_scalar(const Tensor& x, Real value);
Tensor mul_scalar(const Tensor& x, Real value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// Max-subtracted softmax along `axis` (0..3).
Tensor softmax(const Tensor& x, int axis);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int begin, int count);
/// Same data, new shape with an equal element count.
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Per-channel batch normalization. In training mode the batch statistics
/// normalize and the running buffers are updated in place (unbiased
/// variance); in eval mode the running buffers normalize.
struct BatchNormState {
  Tensor running_mean;  // (1, c, 1, 1)
  Tensor running_var;   // (1, c, 1, 1)
  double momentum = 0.1;
  double eps = 1e-5;
};
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

/// Softmax across a list of equally shaped (n,c,1,1) logit tensors, taken
/// independently for every (n, c) position. Returns one weight tensor per
/// branch; the weights at each position lie on the simplex.
std::vector<Tensor> branch_softmax(const std::vector<Tensor>& logits);

/// Finite-difference aid. While recording, the on/off decisions of ReLU,
/// max-pool and L1 are stored in call order; after `replay()` every such op
/// reuses the decision stored for its position in the call sequence, so a
/// forward pass evaluates the linear piece seen during recording. Call
/// `replay()` before each replayed forward pass.
class FrozenPattern {
 public:
  FrozenPattern();
  ~FrozenPattern();
  FrozenPattern(const FrozenPattern&) = delete;
  FrozenPattern& operator=(const FrozenPattern&) = delete;

  void replay();
};

namespace detail {
bool pattern_active();
/// Records `choices`, or overwrites them with the recorded ones on replay.
void freeze_choices(std::vector<std::size_t>& choices);
}  // namespace detail

}  // namespace shisr
