#pragma once

#include "shield/conditioning.hpp"
#include "shield/distortions.hpp"
#include "shield/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace shield {

/// Architecture settings that a checkpoint must reproduce exactly.
struct ModelConfig {
  int64_t image_size = 128;
  int64_t message_bits = 32;
  int64_t hidden_channels = 32;
  double alpha = 0.1;
  // Eraser residual bound as a fraction of alpha.
  double eraser_ratio = 0.5;
  EncoderBackends backends;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  double xi = 0.5;
  double learning_rate = 1e-3;
  int64_t batch_size = 8;
  int64_t steps = 5000;
  uint64_t seed = 0;
  // Empty pool: the noise term decodes the undistorted image.
  std::vector<NoiserKind> noiser_pool = {NoiserKind::jpeg_approx, NoiserKind::gaussian_blur};
  // Over the first `warmup_steps`, alpha anneals from alpha_start to alpha and the
  // fragile and adversarial weights ramp in over the second half.
  // Weight of true coefficient rounding in the training JPEG forward pass (0 = soft mask only).
  double jpeg_hard_rounding = 0.0;
  int64_t warmup_steps = 0;
  double alpha_start = 0.1;
  std::string dataset;  // empty: procedural toy faces
  int toy_identities = 100;
  int toy_variants = 20;
  int64_t log_every = 100;
  int64_t validate_every = 500;

  /// Canonical "key = value" rendering; round-trips through parse.
  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// SHA-256 of to_text().
  std::string digest() const;
};

std::string noiser_pool_to_string(const std::vector<NoiserKind>& pool);
std::vector<NoiserKind> parse_noiser_pool(std::string_view text);

}  // namespace shield
