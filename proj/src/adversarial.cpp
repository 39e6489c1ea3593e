#include "shield/adversarial.hpp"

#include "shield/tensor_ops.hpp"

#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

CriticImpl::CriticImpl(const CriticOptions& options) : options_(options) {
  const auto h = options.hidden_channels;
  auto conv = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1));
  };
  conv1_ = register_module("conv1", conv(3, h));
  conv2_ = register_module("conv2", conv(h, 2 * h));
  conv3_ = register_module("conv3", conv(2 * h, 1));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& images) {
  auto act = F::LeakyReLUFuncOptions().negative_slope(options_.leak);
  auto h = F::leaky_relu(conv1_(as_batch(images)), act);
  h = F::leaky_relu(conv2_(h), act);
  return conv3_(h).mean({1, 2, 3});
}

void CriticImpl::clip_weights() {
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) p.clamp_(-options_.clip, options_.clip);
}

EraserImpl::EraserImpl(const EraserOptions& options) : options_(options) {
  if (options.bound < 0) throw std::invalid_argument("eraser bound must be >= 0");
  const auto h = options.hidden_channels;
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, h, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(h, 3, 3).padding(1)));
}

torch::Tensor EraserImpl::forward(const torch::Tensor& images) {
  auto x = as_batch(images);
  auto out = x + options_.bound * torch::tanh(conv2_(torch::relu(conv1_(x))));
  return images.dim() == 3 ? out.squeeze(0) : out;
}

}  // namespace shield
