#include "shield/distortions.hpp"

#include "shield/tensor_ops.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

namespace {

struct GridRow {
  int quality;
  double ratio;
  int kernel;
  double variance;
  int holes;
};

// Levels 1..5 of the benign perturbation grid.
constexpr std::array<GridRow, 5> kGrid = {{
    {90, 0.9, 3, 10, 2},
    {80, 0.8, 5, 20, 3},
    {70, 0.7, 7, 30, 4},
    {60, 0.6, 9, 40, 5},
    {50, 0.5, 11, 50, 6},
}};

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// Attenuation reaches 1/2 where the scaled quantizer step equals this value.
constexpr double kSoftStep = 16.0;

torch::Tensor dct_matrix(torch::ScalarType dtype) {
  auto m = torch::empty({8, 8}, torch::kFloat64);
  for (int k = 0; k < 8; ++k) {
    const double norm = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int n = 0; n < 8; ++n) {
      m[k][n] = norm * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
  }
  return m.to(dtype);
}

torch::Tensor rgb_to_ycbcr_matrix() {
  return torch::tensor({0.299, 0.587, 0.114, -0.168736, -0.331264, 0.5, 0.5, -0.418688, -0.081312},
                       torch::kFloat64)
      .reshape({3, 3});
}

torch::Tensor color_transform(const torch::Tensor& x, const torch::Tensor& matrix) {
  return torch::einsum("ij,bjhw->bihw", {matrix.to(x.scalar_type()), x});
}

}  // namespace

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::compression: return "compression";
    case PerturbationKind::downscale: return "downscale";
    case PerturbationKind::gaussian_blur: return "gaussian_blur";
    case PerturbationKind::gaussian_noise: return "gaussian_noise";
    case PerturbationKind::random_drop: return "random_drop";
  }
  return "unknown";
}

PerturbationKind parse_perturbation_kind(std::string_view name) {
  for (auto kind : kPerturbationKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown perturbation kind: " + std::string(name));
}

PerturbationSpec perturbation_spec(PerturbationKind kind, int level) {
  if (level < 0 || level > kMaxPerturbationLevel) {
    throw std::out_of_range("perturbation level out of range: " + std::to_string(level));
  }
  if (level == 0) return {kind, 0, 0.0};
  const auto& row = kGrid[level - 1];
  switch (kind) {
    case PerturbationKind::compression: return {kind, level, double(row.quality)};
    case PerturbationKind::downscale: return {kind, level, row.ratio};
    case PerturbationKind::gaussian_blur: return {kind, level, double(row.kernel)};
    case PerturbationKind::gaussian_noise: return {kind, level, row.variance};
    case PerturbationKind::random_drop: return {kind, level, double(row.holes)};
  }
  throw std::invalid_argument("unknown perturbation kind");
}

std::vector<PerturbationSpec> perturbation_grid() {
  std::vector<PerturbationSpec> out;
  for (int level = 1; level <= kMaxPerturbationLevel; ++level) {
    for (auto kind : kPerturbationKinds) out.push_back(perturbation_spec(kind, level));
  }
  return out;
}

PerturbationSpec parse_perturbation(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument("expected kind:level, got '" + std::string(text) + "'");
  }
  const auto kind = parse_perturbation_kind(text.substr(0, colon));
  const std::string level_text(text.substr(colon + 1));
  size_t used = 0;
  int level = -1;
  try {
    level = std::stoi(level_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != level_text.size() || level < 0 || level > kMaxPerturbationLevel) {
    throw std::invalid_argument("invalid perturbation level in '" + std::string(text) + "'");
  }
  return perturbation_spec(kind, level);
}

std::string perturbation_grid_csv() {
  std::ostringstream out;
  out << "# perturbation grid v" << kPerturbationGridVersion << "\n";
  out << "kind,level,parameter\n";
  for (auto kind : kPerturbationKinds) {
    for (int level = 0; level <= kMaxPerturbationLevel; ++level) {
      const auto spec = perturbation_spec(kind, level);
      out << to_string(kind) << ',' << level << ',' << spec.parameter << '\n';
    }
  }
  return out.str();
}

torch::Tensor jpeg_quantization_steps(int quality) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("JPEG quality must be in [1, 100], got " + std::to_string(quality));
  }
  // IJG quality scaling of the baseline tables.
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  auto out = torch::empty({3, 8, 8}, torch::kFloat64);
  for (int c = 0; c < 3; ++c) {
    const auto& table = c == 0 ? kLumaTable : kChromaTable;
    for (int i = 0; i < 64; ++i) {
      out[c][i / 8][i % 8] = std::clamp((table[i] * scale + 50) / 100, 1, 255);
    }
  }
  return out;
}

torch::Tensor jpeg_attenuation(int quality) {
  auto ratio = jpeg_quantization_steps(quality) / kSoftStep;
  auto out = 1.0 / (1.0 + ratio * ratio);
  out.select(1, 0).select(1, 0).fill_(1.0);
  return out;
}

namespace {

// Blockwise 8x8 DCT, per-channel soft mask, optional hard rounding, inverse DCT.
// planes: BxCxHxW with H, W multiples of 8; attenuation and steps: Cx8x8.
torch::Tensor dct_roundtrip(const torch::Tensor& planes, const torch::Tensor& attenuation,
                            const torch::Tensor& steps, double hard_rounding) {
  const auto dtype = planes.scalar_type();
  const int64_t b = planes.size(0), c = planes.size(1), h = planes.size(2), w = planes.size(3);
  auto dct = dct_matrix(dtype);
  auto blocks = planes.reshape({b, c, h / 8, 8, w / 8, 8}).permute({0, 1, 2, 4, 3, 5});
  auto coeffs = torch::matmul(torch::matmul(dct, blocks), dct.t());
  auto out = coeffs * attenuation.to(dtype).reshape({1, c, 1, 1, 8, 8});
  if (hard_rounding > 0) {
    auto q = steps.to(dtype).reshape({1, c, 1, 1, 8, 8});
    auto hard = torch::round(coeffs / q) * q;
    out = out + hard_rounding * (hard - out).detach();
  }
  blocks = torch::matmul(torch::matmul(dct.t(), out), dct);
  return blocks.permute({0, 1, 2, 4, 3, 5}).reshape({b, c, h, w});
}

}  // namespace

torch::Tensor jpeg_approx(const torch::Tensor& images, int quality, double hard_rounding) {
  if (hard_rounding < 0 || hard_rounding > 1) {
    throw std::invalid_argument("hard rounding weight must be in [0, 1]");
  }
  auto attenuation = jpeg_attenuation(quality);
  auto steps = jpeg_quantization_steps(quality);
  auto x = as_batch(images);
  const int64_t h = x.size(2), w = x.size(3);
  // Pad to whole 16x16 macroblocks so the half-resolution chroma tiles into 8x8 blocks.
  const int64_t ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
  if (ph || pw) x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  const int64_t hp = x.size(2), wp = x.size(3);

  auto forward = rgb_to_ycbcr_matrix();
  auto ycc = color_transform(x * 127.5, forward);
  auto luma = dct_roundtrip(ycc.slice(1, 0, 1), attenuation.slice(0, 0, 1), steps.slice(0, 0, 1),
                            hard_rounding);
  // 4:2:0 chroma: 2x2 average, coded at half resolution, triangular upsampling as
  // libjpeg decoders do.
  auto chroma = F::avg_pool2d(ycc.slice(1, 1, 3), F::AvgPool2dFuncOptions(2));
  chroma = dct_roundtrip(chroma, attenuation.slice(0, 1, 3), steps.slice(0, 1, 3), hard_rounding);
  chroma = F::interpolate(chroma, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{hp, wp})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  ycc = torch::cat({luma, chroma}, 1);

  auto rgb = color_transform(ycc, torch::inverse(forward)) / 127.5;
  rgb = rgb.slice(2, 0, h).slice(3, 0, w);
  return images.dim() == 3 ? rgb.squeeze(0) : rgb;
}

torch::Tensor jpeg_compress(const torch::Tensor& images, int quality) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("JPEG quality must be in [1, 100], got " + std::to_string(quality));
  }
  auto x = as_batch(images).detach();
  auto codes = to_uint8(x).permute({0, 2, 3, 1}).contiguous();  // BxHxWx3 RGB
  const int h = static_cast<int>(x.size(2)), w = static_cast<int>(x.size(3));
  std::vector<torch::Tensor> decoded;
  for (int64_t i = 0; i < codes.size(0); ++i) {
    auto slice = codes[i].contiguous();
    cv::Mat rgb(h, w, CV_8UC3, slice.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<uchar> buffer;
    cv::imencode(".jpg", bgr, buffer, {cv::IMWRITE_JPEG_QUALITY, quality});
    cv::Mat back = cv::imdecode(buffer, cv::IMREAD_COLOR);
    cv::cvtColor(back, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {h, w, 3}, torch::kUInt8).clone();
    decoded.push_back(t.permute({2, 0, 1}));
  }
  auto out = from_uint8(torch::stack(decoded)).to(x.scalar_type());
  return images.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("blur kernel must be odd and >= 1, got " + std::to_string(kernel));
  }
  if (kernel == 1) return images;
  auto x = as_batch(images);
  const double sigma = kernel / 6.0;
  const int half = kernel / 2;
  auto t = torch::arange(-half, half + 1, torch::kFloat64);
  auto w = torch::exp(-t * t / (2 * sigma * sigma));
  w = (w / w.sum()).to(x.scalar_type());
  const int64_t c = x.size(1);
  auto padded = F::pad(x, F::PadFuncOptions({half, half, half, half}).mode(torch::kReflect));
  auto horiz = w.reshape({1, 1, 1, kernel}).repeat({c, 1, 1, 1});
  auto vert = w.reshape({1, 1, kernel, 1}).repeat({c, 1, 1, 1});
  auto out = F::conv2d(padded, horiz, F::Conv2dFuncOptions().groups(c));
  out = F::conv2d(out, vert, F::Conv2dFuncOptions().groups(c));
  return images.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor gaussian_noise(const torch::Tensor& images, double variance, at::Generator& gen) {
  if (variance < 0) throw std::invalid_argument("noise variance must be >= 0");
  if (variance == 0) return images;
  const double sigma = std::sqrt(variance);
  auto noise = torch::randn(images.sizes(), gen, images.options().requires_grad(false));
  return images + noise * (2.0 * sigma / 255.0);
}

torch::Tensor downscale(const torch::Tensor& images, double ratio) {
  if (!(ratio > 0) || ratio > 1) {
    throw std::invalid_argument("downscale ratio must be in (0, 1], got " + std::to_string(ratio));
  }
  if (ratio == 1.0) return images;
  auto x = as_batch(images);
  const int64_t h = x.size(2), w = x.size(3);
  const auto small_h = std::max<int64_t>(1, static_cast<int64_t>(std::floor(ratio * h)));
  const auto small_w = std::max<int64_t>(1, static_cast<int64_t>(std::floor(ratio * w)));
  auto opts = [](int64_t hh, int64_t ww) {
    return F::InterpolateFuncOptions()
        .size(std::vector<int64_t>{hh, ww})
        .mode(torch::kBilinear)
        .align_corners(false);
  };
  auto out = F::interpolate(F::interpolate(x, opts(small_h, small_w)), opts(h, w));
  return images.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor random_drop(const torch::Tensor& images, int holes, std::mt19937_64& rng) {
  if (holes < 0) throw std::invalid_argument("hole count must be >= 0");
  if (holes == 0) return images;
  auto x = as_batch(images);
  const int64_t b = x.size(0), h = x.size(2), w = x.size(3);
  auto mask = torch::zeros({b, 1, h, w}, x.options().requires_grad(false));
  std::uniform_real_distribution<double> fraction(0.1, 0.2);
  for (int64_t i = 0; i < b; ++i) {
    for (int k = 0; k < holes; ++k) {
      const auto hh = std::max<int64_t>(1, static_cast<int64_t>(std::floor(h * fraction(rng))));
      const auto ww = std::max<int64_t>(1, static_cast<int64_t>(std::floor(w * fraction(rng))));
      const auto y0 = std::uniform_int_distribution<int64_t>(0, h - hh)(rng);
      const auto x0 = std::uniform_int_distribution<int64_t>(0, w - ww)(rng);
      mask[i].slice(1, y0, y0 + hh).slice(2, x0, x0 + ww).fill_(1.0);
    }
  }
  auto mean = x.mean({2, 3}, /*keepdim=*/true);
  auto out = x * (1 - mask) + mean * mask;
  return images.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor apply_level(const torch::Tensor& images, PerturbationKind kind, int level,
                          std::mt19937_64& rng, const PerturbOptions& options) {
  const auto spec = perturbation_spec(kind, level);
  if (level == 0) return images;
  switch (kind) {
    case PerturbationKind::compression: {
      const int quality = static_cast<int>(spec.parameter);
      return options.jpeg == JpegMode::real ? jpeg_compress(images, quality)
                                            : jpeg_approx(images, quality);
    }
    case PerturbationKind::downscale: return downscale(images, spec.parameter);
    case PerturbationKind::gaussian_blur:
      return gaussian_blur(images, static_cast<int>(spec.parameter));
    case PerturbationKind::gaussian_noise: {
      auto gen = at::detail::createCPUGenerator(rng());
      return gaussian_noise(images, spec.parameter, gen);
    }
    case PerturbationKind::random_drop:
      return random_drop(images, static_cast<int>(spec.parameter), rng);
  }
  throw std::invalid_argument("unknown perturbation kind");
}

std::string to_string(NoiserKind kind) {
  return kind == NoiserKind::jpeg_approx ? "jpeg_approx" : "gaussian_blur";
}

NoiserKind parse_noiser_kind(std::string_view name) {
  if (name == "jpeg_approx") return NoiserKind::jpeg_approx;
  if (name == "gaussian_blur") return NoiserKind::gaussian_blur;
  throw std::invalid_argument("unknown noiser kind: " + std::string(name));
}

Noiser::Noiser(std::vector<NoiserKind> pool, double jpeg_hard_rounding)
    : pool_(std::move(pool)), jpeg_hard_rounding_(jpeg_hard_rounding) {
  if (jpeg_hard_rounding_ < 0 || jpeg_hard_rounding_ > 1) {
    throw std::invalid_argument("hard rounding weight must be in [0, 1]");
  }
  if (pool_.empty()) throw std::invalid_argument("noiser pool must not be empty");
}

Noiser::Draw Noiser::sample(std::mt19937_64& rng) const {
  const auto kind = pool_[std::uniform_int_distribution<size_t>(0, pool_.size() - 1)(rng)];
  if (kind == NoiserKind::jpeg_approx) {
    return {kind, std::uniform_int_distribution<int>(50, 90)(rng)};
  }
  return {kind, 2 * std::uniform_int_distribution<int>(1, 5)(rng) + 1};
}

torch::Tensor Noiser::apply(const torch::Tensor& images, const Draw& draw) {
  return draw.kind == NoiserKind::jpeg_approx ? jpeg_approx(images, draw.parameter)
                                              : gaussian_blur(images, draw.parameter);
}

torch::Tensor Noiser::operator()(const torch::Tensor& images, std::mt19937_64& rng) const {
  const auto draw = sample(rng);
  if (draw.kind == NoiserKind::jpeg_approx) {
    return jpeg_approx(images, draw.parameter, jpeg_hard_rounding_);
  }
  return apply(images, draw);
}

}  // namespace shield
