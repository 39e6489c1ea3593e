#pragma once

#include <torch/torch.h>

namespace shield {

struct CriticOptions {
  int64_t hidden_channels = 16;
  double leak = 0.2;
  double clip = 0.1;
};

/// Three stride-2 3x3 convolutions (3 -> h -> 2h -> 1) with leaky ReLU between,
/// averaged to one score per image.
class CriticImpl : public torch::nn::Module {
 public:
  explicit CriticImpl(const CriticOptions& options = {});

  /// B scores for Bx3xHxW input.
  torch::Tensor forward(const torch::Tensor& images);

  /// Clamps every parameter into [-clip, clip].
  void clip_weights();

  const CriticOptions& options() const { return options_; }

 private:
  CriticOptions options_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
};
TORCH_MODULE(Critic);

struct EraserOptions {
  int64_t hidden_channels = 16;
  // Bound on the eraser's residual, in [-1, 1] pixel units.
  double bound = 0.05;
};

/// Two 3x3 convolutions producing a bounded residual: x + bound * tanh(conv(relu(conv(x)))).
class EraserImpl : public torch::nn::Module {
 public:
  explicit EraserImpl(const EraserOptions& options = {});

  torch::Tensor forward(const torch::Tensor& images);

  const EraserOptions& options() const { return options_; }

 private:
  EraserOptions options_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(Eraser);

}  // namespace shield
