#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace shield {

enum class PerturbationKind { compression, downscale, gaussian_blur, gaussian_noise, random_drop };

inline constexpr std::array<PerturbationKind, 5> kPerturbationKinds = {
    PerturbationKind::compression, PerturbationKind::downscale, PerturbationKind::gaussian_blur,
    PerturbationKind::gaussian_noise, PerturbationKind::random_drop};

inline constexpr int kMaxPerturbationLevel = 5;
inline constexpr int kPerturbationGridVersion = 1;

std::string to_string(PerturbationKind kind);
PerturbationKind parse_perturbation_kind(std::string_view name);

/// One cell of the six-level benign perturbation grid. Level 0 is the identity.
struct PerturbationSpec {
  PerturbationKind kind;
  int level;
  double parameter;  // quality / ratio / kernel / variance (0-255 scale) / hole count
};

/// Table lookup; throws std::out_of_range for levels outside 0..5.
PerturbationSpec perturbation_spec(PerturbationKind kind, int level);

/// The whole grid (5 kinds x levels 1..5) in row-major (level, kind) order.
std::vector<PerturbationSpec> perturbation_grid();

/// "kind:level" as accepted by the CLI.
PerturbationSpec parse_perturbation(std::string_view text);

/// CSV rendering of the grid, prefixed with a version comment.
std::string perturbation_grid_csv();

// --- individual distortions; all accept 3xHxW or Bx3xHxW in [-1, 1] -------

/// Differentiable JPEG surrogate: YCbCr, 4:2:0 chroma coded at half resolution, blockwise
/// 8x8 DCT with quality-dependent soft attenuation of each coefficient, inverse DCT,
/// bilinear chroma upsampling. The DC term is kept exactly. Sizes that are not multiples
/// of 16 are edge-padded and cropped back.
///
/// hard_rounding in [0, 1] moves the forward value toward true quantization
/// (round(c / step) * step, DC included) while gradients keep flowing through the soft mask.
/// At 1 the forward pass matches real JPEG up to 8-bit rounding.
torch::Tensor jpeg_approx(const torch::Tensor& images, int quality, double hard_rounding = 0.0);

/// IJG-scaled quantization steps on the 0-255 scale: 3x8x8 (Y, Cb, Cr).
torch::Tensor jpeg_quantization_steps(int quality);

/// Per-coefficient attenuation used by jpeg_approx: 3x8x8 (Y, Cb, Cr).
torch::Tensor jpeg_attenuation(int quality);

/// Real baseline JPEG round trip through an 8-bit encoder (not differentiable).
torch::Tensor jpeg_compress(const torch::Tensor& images, int quality);

/// Separable gaussian blur with sigma = kernel / 6 and reflect padding.
torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel);

/// Adds i.i.d. gaussian noise of the given variance on the 0-255 scale
/// (standard deviation 2*sqrt(variance)/255 in image units).
torch::Tensor gaussian_noise(const torch::Tensor& images, double variance, at::Generator& gen);

/// Bilinear resample to floor(ratio*H) x floor(ratio*W) and back up to HxW.
torch::Tensor downscale(const torch::Tensor& images, double ratio);

/// Erases `holes` rectangles (each side 10%-20% of the image side) with the image's mean colour.
torch::Tensor random_drop(const torch::Tensor& images, int holes, std::mt19937_64& rng);

enum class JpegMode { real, approximate };

struct PerturbOptions {
  JpegMode jpeg = JpegMode::real;
};

/// Applies the grid cell for (kind, level). Level 0 returns the input tensor itself.
torch::Tensor apply_level(const torch::Tensor& images, PerturbationKind kind, int level,
                          std::mt19937_64& rng, const PerturbOptions& options = {});

enum class NoiserKind { jpeg_approx, gaussian_blur };

std::string to_string(NoiserKind kind);
NoiserKind parse_noiser_kind(std::string_view name);

/// The training-time noise function: one differentiable distortion drawn uniformly from
/// the pool per call, with a uniformly drawn admissible parameter
/// (JPEG quality 50..90, blur kernel 3..11).
class Noiser {
 public:
  explicit Noiser(std::vector<NoiserKind> pool, double jpeg_hard_rounding = 0.0);

  struct Draw {
    NoiserKind kind;
    int parameter;
  };

  Draw sample(std::mt19937_64& rng) const;
  static torch::Tensor apply(const torch::Tensor& images, const Draw& draw);
  torch::Tensor operator()(const torch::Tensor& images, std::mt19937_64& rng) const;

  const std::vector<NoiserKind>& pool() const { return pool_; }

 private:
  std::vector<NoiserKind> pool_;
  double jpeg_hard_rounding_;
};

}  // namespace shield
