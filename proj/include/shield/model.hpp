#pragma once

#include "shield/adversarial.hpp"
#include "shield/conditioning.hpp"
#include "shield/config.hpp"
#include "shield/message.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace shield {

inline constexpr const char* kCheckpointFormat = "shield-checkpoint v1";

struct CheckpointMeta {
  std::string config_text;  // full TrainConfig rendering
  std::string config_digest;
  int64_t step = 0;
};

/// Frozen encoders, condition generator, message encoder/decoder, critic and eraser.
class IntegrityModel {
 public:
  explicit IntegrityModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const EncoderBank& bank() const { return bank_; }
  ConditionGenerator& condition_generator() { return condition_; }
  MessageEncoder& encoder() { return encoder_; }
  MessageDecoder& decoder() { return decoder_; }
  Critic& critic() { return critic_; }
  Eraser& eraser() { return eraser_; }

  /// theta (condition generator + encoder) and phi (decoder).
  std::vector<torch::Tensor> codec_parameters();
  /// delta_D (critic) and delta_A (eraser).
  std::vector<torch::Tensor> adversary_parameters();

  void train(bool on = true);

  torch::Tensor facial_token(const torch::Tensor& images) const;
  /// Condition map of the images themselves (Bx C_m x H x W).
  torch::Tensor condition(const torch::Tensor& images);
  /// Watermarks images with BxC_m {0,1} bits under their own condition maps.
  torch::Tensor embed(const torch::Tensor& images, const torch::Tensor& bits);
  /// Logits of `images` decoded with an explicit condition map.
  torch::Tensor decode(const torch::Tensor& images, const torch::Tensor& condition);
  /// Logits decoded with the condition map computed from `images` itself.
  torch::Tensor extract(const torch::Tensor& images);

  void save(const std::filesystem::path& path, const CheckpointMeta& meta);
  static IntegrityModel load(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

 private:
  ModelConfig config_;
  EncoderBank bank_;
  ConditionGenerator condition_{nullptr};
  MessageEncoder encoder_{nullptr};
  MessageDecoder decoder_{nullptr};
  Critic critic_{nullptr};
  Eraser eraser_{nullptr};
};

}  // namespace shield
