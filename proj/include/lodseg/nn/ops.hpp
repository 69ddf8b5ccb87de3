#pragma once

#include <cstdint>

#include "lodseg/tensor.hpp"
#include "lodseg/volume.hpp"

namespace lodseg::nn {

// All grids are (C,D,H,W), single volume at a time. Convolution weights are
// (Cout, Cin, k, k, k); biases are (Cout).

// Zero-padded strided convolution. Output side = (n + 2*pad - k)/stride + 1.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Adjoint with respect to the input (also the forward pass of a transposed
// convolution). in_spatial is the (D,H,W) of the conv input.
Tensor conv3d_backward_data(const Tensor& dy, const Tensor& w, int stride, int pad,
                            const std::array<int64_t, 3>& in_spatial);

// Adjoint with respect to the weights/bias.
void conv3d_backward_weights(const Tensor& x, const Tensor& dy, int stride, int pad,
                             Tensor& dw, Tensor& db);

// Group normalization over (channels-in-group x spatial); gamma/beta are (C).
struct GroupNormCache {
    Tensor x_hat;
    std::vector<double> inv_std;
};
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int group_size,
                  double eps, GroupNormCache* cache);
Tensor group_norm_backward(const Tensor& dy, const Tensor& gamma, int group_size,
                           const GroupNormCache& cache, Tensor& dgamma, Tensor& dbeta);

void relu_inplace(Tensor& x);
void relu_backward_inplace(Tensor& grad, const Tensor& activated);

// Inverted dropout; mask entries are 0 or 1/(1-rate).
Tensor dropout_mask(const std::vector<int64_t>& shape, double rate, uint64_t seed);

// Per-voxel softmax over the channel axis.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_backward(const Tensor& dy, const Tensor& y);

// Mean pooling over factor^3 blocks; side must divide evenly.
Tensor mean_pool(const Tensor& x, int factor);
Volume mean_pool_volume(const Volume& v, int factor);

// Majority-vote pooling for labels; ties break toward the smaller class id.
LabelVolume majority_pool_labels(const LabelVolume& l, int factor);

}  // namespace lodseg::nn
