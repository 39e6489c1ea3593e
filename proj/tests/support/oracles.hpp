#pragma once

// Reference implementations written independently of the library, used as test oracles.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Hamming distance via packed 64-bit words and popcount, divided by the length.
double popcount_ber(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

/// out[c, y, x] = in[c*r*r + (y % r)*r + (x % r), y / r, x / r], by explicit loops. Input BxCxhxw.
torch::Tensor pixel_shuffle_loops(const torch::Tensor& input, int64_t r);

/// Fraction of (fake, real) pairs ordered correctly, ties counted half.
double pair_counting_auc(const std::vector<double>& real_scores,
                         const std::vector<double>& fake_scores);

/// The fake-probability ramp written out directly.
double fake_probability(double ber, double tau);

/// Best tau over i * 0.005, i = 1..99, by full enumeration; first maximum wins.
double exhaustive_white_box_tau(const std::vector<double>& real_bers,
                                const std::vector<double>& fake_bers);

struct GradCheck {
  int coordinates = 0;
  double worst_relative_error = 0.0;
  bool ok(double tolerance) const { return coordinates > 0 && worst_relative_error <= tolerance; }
  std::string describe() const;
};

/// Central finite differences of a scalar float64 function at `count` random coordinates
/// of `input` against autograd. Coordinates with a numerical derivative below `floor`
/// in magnitude are skipped and redrawn.
GradCheck finite_difference_check(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                  const torch::Tensor& input, int count, uint64_t seed,
                                  double eps = 1e-6, double floor = 1e-6);

/// Fixed random projection sum(w * out) turning a tensor-valued map into a scalar one.
std::function<torch::Tensor(const torch::Tensor&)> projected(
    const std::function<torch::Tensor(const torch::Tensor&)>& f, at::IntArrayRef out_shape,
    uint64_t seed);

}  // namespace oracle
