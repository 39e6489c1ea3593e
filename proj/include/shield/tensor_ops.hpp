#pragma once

#include <torch/torch.h>

#include <string_view>

namespace shield {

// Images are float tensors in [-1, 1], laid out either as 3xHxW or Bx3xHxW.

/// Adds a leading batch dimension to a 3xHxW image; batched input passes through.
torch::Tensor as_batch(const torch::Tensor& image);

/// Throws std::invalid_argument unless `images` is Bx3xHxW (or 3xHxW) with finite values.
void require_image(const torch::Tensor& images, std::string_view what);

/// Throws std::invalid_argument unless every entry of `t` is finite.
void require_finite(const torch::Tensor& t, std::string_view what);

/// Maps [-1, 1] floats to 8-bit codes with round-half-even, clamped to [0, 255].
torch::Tensor to_uint8(const torch::Tensor& image);

/// Inverse affine map from 8-bit codes back to [-1, 1].
torch::Tensor from_uint8(const torch::Tensor& codes);

/// Publishes an image through the 8-bit channel (quantize then dequantize).
torch::Tensor quantize_8bit(const torch::Tensor& image);

}  // namespace shield
