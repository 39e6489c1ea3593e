#pragma once

#include "shield/message.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace shield {

/// Hamming distance over length. Throws on length mismatch.
double bit_error_rate(const Message& a, const Message& b);

/// Per-sample BER of logits (decoded bit = logit > 0) against {0,1} bits; both BxC.
torch::Tensor bit_error_rates(const torch::Tensor& logits, const torch::Tensor& bits);

/// Piecewise fake probability: 0.5*r/tau below tau, linear from 0.5 to 1 on (tau, 0.5],
/// and 1 above 0.5. Requires 0 < tau < 0.5.
double fake_probability(double ber, double tau);

enum class Protocol { white_box, black_box };

std::string to_string(Protocol protocol);
Protocol parse_protocol(std::string_view name);

inline constexpr double kThresholdGridStep = 0.005;

/// The calibration grid {0.005, 0.010, ..., 0.495}.
std::vector<double> threshold_grid();

struct ThresholdCalibration {
  Protocol protocol = Protocol::black_box;
  double tau = 0.1;
  std::string provenance;
  bool degenerate = false;

  /// SHA-256 hex digest of the provenance string.
  std::string provenance_digest() const;

  std::string to_text() const;
  static ThresholdCalibration from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ThresholdCalibration load(const std::filesystem::path& path);
};

/// mean P(fake | fake_bers) - mean P(fake | real_bers) at threshold tau.
double white_box_objective(const std::vector<double>& real_bers,
                           const std::vector<double>& fake_bers, double tau);

/// Grid search for the tau maximizing the white-box objective; ties go to the smallest tau.
/// A flat objective sets `degenerate`.
ThresholdCalibration calibrate_white_box(const std::vector<double>& real_bers,
                                         const std::vector<double>& fake_bers,
                                         std::string provenance = {});

/// tau_b = mean(robust_bers) + safety, floored at one grid step and capped below 0.5.
ThresholdCalibration calibrate_black_box(const std::vector<double>& robust_bers,
                                         double safety = 0.0, std::string provenance = {});

enum class Verdict { real, fake };
std::string to_string(Verdict verdict);

struct VerificationResult {
  double ber = 0.0;
  double p_fake = 0.0;
  Verdict verdict = Verdict::real;
  double tau = 0.0;
};

VerificationResult verify_ber(double ber, double tau);

struct Scored {
  double p_fake;
  bool fake;
};

struct DetectionMetrics {
  double acc = 0.0;
  std::optional<double> auc;  // empty when only one class is present
};

/// ACC at p_fake > 0.5; AUC by the Mann-Whitney statistic with ties counted half.
DetectionMetrics detection_metrics(const std::vector<Scored>& scored);

struct FidelityMetrics {
  double psnr = 0.0;  // dB; +inf for identical inputs
  double ssim = 1.0;
  bool identical() const;
};

/// PSNR at peak 2 on the [-1, 1] scale (equal to the 0-255 convention) and SSIM with an
/// 11x11 gaussian window (sigma 1.5), both averaged over the batch.
FidelityMetrics fidelity(const torch::Tensor& reference, const torch::Tensor& test);

/// Per-image PSNR and SSIM for Bx3xHxW inputs.
std::vector<FidelityMetrics> fidelity_per_image(const torch::Tensor& reference,
                                                const torch::Tensor& test);

}  // namespace shield
