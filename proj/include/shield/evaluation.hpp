#pragma once

#include "shield/dataset.hpp"
#include "shield/distortions.hpp"
#include "shield/manipulations.hpp"
#include "shield/metrics.hpp"
#include "shield/model.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace shield {

/// A set of covers, their messages and the published (8-bit) watermarked images.
struct ProtectedSet {
  FaceSet covers;
  torch::Tensor bits;         // MxC in {0,1}
  torch::Tensor watermarked;  // Mx3xSxS
  int64_t size() const { return covers.size(); }
};

/// Embeds a fresh random message into every cover and publishes through 8 bits.
ProtectedSet protect(IntegrityModel& model, const FaceSet& covers, uint64_t seed);

/// Per-image BER decoding `images` with their own condition maps.
std::vector<double> decode_bers(IntegrityModel& model, const torch::Tensor& images,
                                const torch::Tensor& bits);

/// Per-image BER decoding `images` with the condition maps of `condition_images`.
std::vector<double> decode_bers_with(IntegrityModel& model, const torch::Tensor& images,
                                     const torch::Tensor& bits,
                                     const torch::Tensor& condition_images);

/// Mean BER for every (kind, level) cell, level 0 included.
struct RobustnessTable {
  std::array<std::array<double, kMaxPerturbationLevel + 1>, 5> mean_ber{};
  double at(PerturbationKind kind, int level) const;
};

RobustnessTable robustness_sweep(IntegrityModel& model, const ProtectedSet& set, uint64_t seed,
                                 const PerturbOptions& options = {});

/// Each image under one perturbation with uniformly drawn kind and level in [lo, hi].
std::vector<double> random_perturbation_bers(IntegrityModel& model, const ProtectedSet& set,
                                             int lo, int hi, uint64_t seed,
                                             const PerturbOptions& options = {});

/// BER of every image after a manipulation. Donors are the nearest-landmark covers of
/// another identity within the same set.
std::vector<double> manipulation_bers(IntegrityModel& model, const ProtectedSet& set,
                                      const ManipulationSpec& spec);

/// The manipulated image for row i (condition_swap leaves the pixels untouched).
torch::Tensor manipulate(const ProtectedSet& set, int64_t row, const ManipulationSpec& spec);

struct DetectionRow {
  ManipulationKind kind;
  Protocol protocol;
  double tau = 0.0;
  double acc = 0.0;
  double auc = 0.0;
  double mean_real_ber = 0.0;
  double mean_fake_ber = 0.0;
};

struct SampleRecord {
  std::string image;
  std::string kind;  // "clean", "<perturbation>:<level>" or a manipulation name
  double ber = 0.0;
  double p_fake = 0.0;
  Verdict verdict = Verdict::real;
};

struct EvaluationOptions {
  uint64_t seed = 7;
  PerturbOptions perturb;
  double black_box_safety = 0.0;
  // Real (negative) samples for detection: a random perturbation at level 0..max_real_level.
  int max_real_level = 3;
  double strength = 1.0;
  std::vector<ManipulationKind> manipulations{kManipulationKinds.begin(), kManipulationKinds.end()};
};

struct EvaluationReport {
  FidelityMetrics fidelity;
  double clean_ber = 0.0;
  RobustnessTable robustness;
  ThresholdCalibration black_box;
  double black_box_false_positive_rate = 0.0;
  std::vector<std::pair<ManipulationKind, double>> manipulation_mean_ber;
  std::vector<DetectionRow> detection;
  std::vector<SampleRecord> samples;

  const DetectionRow& row(ManipulationKind kind, Protocol protocol) const;
  double manipulation_ber(ManipulationKind kind) const;
  /// Detection over all manipulation kinds pooled, black-box threshold.
  std::optional<double> pooled_black_box_auc;

  /// Pretty-printed JSON summary.
  std::string to_json() const;
};

/// Calibrates on `validation` (black-box tau_b from level-5 perturbations; white-box per
/// manipulation) and evaluates fidelity, robustness and detection on `test`.
EvaluationReport evaluate(IntegrityModel& model, const ProtectedSet& validation,
                          const ProtectedSet& test, const EvaluationOptions& options = {});

void write_report(const EvaluationReport& report, const std::filesystem::path& directory);

/// Robustness curves (BER against level, one line per kind) as a PNG.
void plot_robustness(const RobustnessTable& table, const std::filesystem::path& path);

/// Loss curves from a training CSV (step, alpha, L_r, L_n, L_a, L_f, total, ...) as a PNG.
void plot_losses(const std::filesystem::path& csv, const std::filesystem::path& path);

}  // namespace shield
