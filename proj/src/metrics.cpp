#include "shield/metrics.hpp"

#include "shield/digest.hpp"
#include "shield/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

double bit_error_rate(const Message& a, const Message& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("BER: message lengths differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() == 0) throw std::invalid_argument("BER: empty messages");
  int64_t errors = 0;
  for (int64_t i = 0; i < a.size(); ++i) errors += a[i] != b[i];
  return static_cast<double>(errors) / static_cast<double>(a.size());
}

torch::Tensor bit_error_rates(const torch::Tensor& logits, const torch::Tensor& bits) {
  if (logits.sizes() != bits.sizes()) {
    throw std::invalid_argument("BER: shape mismatch " + c10::str(logits.sizes()) + " vs " +
                                c10::str(bits.sizes()));
  }
  auto decoded = logits.detach().gt(0);
  auto truth = bits.detach().gt(0.5);
  return decoded.ne(truth).to(torch::kFloat64).mean(-1);
}

double fake_probability(double ber, double tau) {
  if (!(tau > 0.0 && tau < 0.5)) {
    throw std::invalid_argument("threshold must lie in (0, 0.5), got " + std::to_string(tau));
  }
  if (ber <= tau) return 0.5 * std::max(ber, 0.0) / tau;
  if (ber <= 0.5) return 0.5 + 0.5 * (ber - tau) / (0.5 - tau);
  return 1.0;
}

std::string to_string(Protocol protocol) {
  return protocol == Protocol::white_box ? "white_box" : "black_box";
}

Protocol parse_protocol(std::string_view name) {
  if (name == "white_box") return Protocol::white_box;
  if (name == "black_box") return Protocol::black_box;
  throw std::invalid_argument("unknown protocol: " + std::string(name));
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 99; ++i) grid.push_back(i * kThresholdGridStep);
  return grid;
}

namespace {

double mean_probability(const std::vector<double>& bers, double tau) {
  double sum = 0.0;
  for (double r : bers) sum += fake_probability(r, tau);
  return sum / static_cast<double>(bers.size());
}

}  // namespace

std::string ThresholdCalibration::provenance_digest() const { return sha256_hex(provenance); }

std::string ThresholdCalibration::to_text() const {
  std::ostringstream out;
  out << "shield-calibration v1\n";
  out << "protocol=" << to_string(protocol) << "\n";
  out << std::setprecision(17) << "tau=" << tau << "\n";
  out << "degenerate=" << (degenerate ? 1 : 0) << "\n";
  std::string flat = provenance;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  out << "provenance=" << flat << "\n";
  out << "digest=" << sha256_hex(flat) << "\n";
  return out.str();
}

ThresholdCalibration ThresholdCalibration::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "shield-calibration v1") {
    throw std::invalid_argument("not a calibration record (bad header)");
  }
  ThresholdCalibration cal;
  std::string digest;
  bool have_tau = false, have_protocol = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed calibration line: " + line);
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "protocol") {
      cal.protocol = parse_protocol(value);
      have_protocol = true;
    } else if (key == "tau") {
      cal.tau = std::stod(value);
      have_tau = true;
    } else if (key == "degenerate") {
      cal.degenerate = value == "1";
    } else if (key == "provenance") {
      cal.provenance = value;
    } else if (key == "digest") {
      digest = value;
    }
  }
  if (!have_tau || !have_protocol) throw std::invalid_argument("calibration record incomplete");
  if (!(cal.tau > 0 && cal.tau < 0.5)) throw std::invalid_argument("calibration tau out of range");
  if (!digest.empty() && digest != cal.provenance_digest()) {
    throw std::invalid_argument("calibration provenance digest mismatch");
  }
  return cal;
}

void ThresholdCalibration::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text();
}

ThresholdCalibration ThresholdCalibration::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read calibration " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str());
}

double white_box_objective(const std::vector<double>& real_bers,
                           const std::vector<double>& fake_bers, double tau) {
  return mean_probability(fake_bers, tau) - mean_probability(real_bers, tau);
}

ThresholdCalibration calibrate_white_box(const std::vector<double>& real_bers,
                                         const std::vector<double>& fake_bers,
                                         std::string provenance) {
  if (real_bers.empty() || fake_bers.empty()) {
    throw std::invalid_argument("white-box calibration needs real and fake BERs");
  }
  double best = -std::numeric_limits<double>::infinity();
  double lowest = std::numeric_limits<double>::infinity();
  double best_tau = kThresholdGridStep;
  for (double tau : threshold_grid()) {
    const double value = white_box_objective(real_bers, fake_bers, tau);
    lowest = std::min(lowest, value);
    if (value > best) {
      best = value;
      best_tau = tau;
    }
  }
  ThresholdCalibration cal;
  cal.protocol = Protocol::white_box;
  cal.tau = best_tau;
  cal.provenance = std::move(provenance);
  cal.degenerate = best - lowest < 1e-12;
  return cal;
}

ThresholdCalibration calibrate_black_box(const std::vector<double>& robust_bers, double safety,
                                         std::string provenance) {
  if (robust_bers.empty()) throw std::invalid_argument("black-box calibration needs BERs");
  const double mean = std::accumulate(robust_bers.begin(), robust_bers.end(), 0.0) /
                      static_cast<double>(robust_bers.size());
  ThresholdCalibration cal;
  cal.protocol = Protocol::black_box;
  cal.tau = std::clamp(mean + safety, kThresholdGridStep, 0.5 - kThresholdGridStep);
  cal.provenance = std::move(provenance);
  return cal;
}

std::string to_string(Verdict verdict) { return verdict == Verdict::fake ? "fake" : "real"; }

VerificationResult verify_ber(double ber, double tau) {
  VerificationResult result;
  result.ber = ber;
  result.tau = tau;
  result.p_fake = fake_probability(ber, tau);
  result.verdict = result.p_fake > 0.5 ? Verdict::fake : Verdict::real;
  return result;
}

DetectionMetrics detection_metrics(const std::vector<Scored>& scored) {
  if (scored.empty()) throw std::invalid_argument("detection metrics: no samples");
  DetectionMetrics out;
  size_t correct = 0, positives = 0;
  for (const auto& s : scored) {
    correct += (s.p_fake > 0.5) == s.fake;
    positives += s.fake;
  }
  out.acc = static_cast<double>(correct) / static_cast<double>(scored.size());
  const size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0) return out;

  // Average ranks, then the Mann-Whitney U of the fake class.
  std::vector<size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scored[a].p_fake < scored[b].p_fake; });
  double fake_rank_sum = 0.0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && scored[order[j + 1]].p_fake == scored[order[i]].p_fake) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) {
      if (scored[order[k]].fake) fake_rank_sum += rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  out.auc = (fake_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  return out;
}

bool FidelityMetrics::identical() const { return std::isinf(psnr); }

namespace {

torch::Tensor gaussian_window(int64_t size, double sigma, torch::ScalarType dtype) {
  auto t = torch::arange(size, torch::kFloat64) - static_cast<double>(size / 2);
  auto g = torch::exp(-t * t / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).to(dtype);
}

torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y) {
  constexpr int64_t kWindow = 11;
  constexpr double kRange = 2.0;
  const double c1 = std::pow(0.01 * kRange, 2), c2 = std::pow(0.03 * kRange, 2);
  const int64_t c = x.size(1);
  auto w = gaussian_window(kWindow, 1.5, x.scalar_type()).expand({c, 1, kWindow, kWindow});
  auto filt = [&](const torch::Tensor& t) {
    return F::conv2d(t, w, F::Conv2dFuncOptions().groups(c));
  };
  auto mx = filt(x), my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean({1, 2, 3});
}

}  // namespace

std::vector<FidelityMetrics> fidelity_per_image(const torch::Tensor& reference,
                                                const torch::Tensor& test) {
  if (reference.sizes() != test.sizes()) {
    throw std::invalid_argument("fidelity: images differ in shape");
  }
  auto x = as_batch(reference).detach().to(torch::kFloat64);
  auto y = as_batch(test).detach().to(torch::kFloat64);
  if (x.size(2) < 11 || x.size(3) < 11) {
    throw std::invalid_argument("fidelity: images must be at least 11x11 for SSIM");
  }
  auto mse = (x - y).pow(2).mean({1, 2, 3});
  auto ssim = ssim_per_image(x, y);
  std::vector<FidelityMetrics> out;
  for (int64_t i = 0; i < x.size(0); ++i) {
    const double e = mse[i].item<double>();
    FidelityMetrics m;
    m.psnr = e == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(4.0 / e);
    m.ssim = e == 0.0 ? 1.0 : ssim[i].item<double>();
    out.push_back(m);
  }
  return out;
}

FidelityMetrics fidelity(const torch::Tensor& reference, const torch::Tensor& test) {
  const auto all = fidelity_per_image(reference, test);
  FidelityMetrics mean{0.0, 0.0};
  for (const auto& m : all) {
    mean.psnr += m.psnr;
    mean.ssim += m.ssim;
  }
  mean.psnr /= static_cast<double>(all.size());
  mean.ssim /= static_cast<double>(all.size());
  return mean;
}

}  // namespace shield
