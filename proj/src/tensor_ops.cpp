#include "shield/tensor_ops.hpp"

#include <stdexcept>
#include <string>

namespace shield {

torch::Tensor as_batch(const torch::Tensor& image) {
  if (image.dim() == 3) return image.unsqueeze(0);
  return image;
}

void require_finite(const torch::Tensor& t, std::string_view what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw std::invalid_argument(std::string(what) + ": non-finite values");
  }
}

void require_image(const torch::Tensor& images, std::string_view what) {
  const bool batched = images.dim() == 4 && images.size(1) == 3;
  const bool single = images.dim() == 3 && images.size(0) == 3;
  if (!batched && !single) {
    throw std::invalid_argument(std::string(what) + ": expected 3xHxW or Bx3xHxW image, got " +
                                std::to_string(images.dim()) + "-d tensor");
  }
  if (!images.is_floating_point()) {
    throw std::invalid_argument(std::string(what) + ": expected floating-point pixels");
  }
  require_finite(images, what);
}

torch::Tensor to_uint8(const torch::Tensor& image) {
  // torch::round rounds half to even.
  auto scaled = (image.to(torch::kFloat64) + 1.0) * 127.5;
  return torch::round(scaled).clamp(0.0, 255.0).to(torch::kUInt8);
}

torch::Tensor from_uint8(const torch::Tensor& codes) {
  return codes.to(torch::kFloat32) / 127.5 - 1.0;
}

torch::Tensor quantize_8bit(const torch::Tensor& image) {
  return from_uint8(to_uint8(image)).to(image.scalar_type());
}

}  // namespace shield
