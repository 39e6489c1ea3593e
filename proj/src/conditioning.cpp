#include "shield/conditioning.hpp"

#include "shield/tensor_ops.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

std::string to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::identity: return "identity";
    case AttributeKind::appearance: return "appearance";
    case AttributeKind::mouth: return "mouth";
  }
  return "unknown";
}

namespace {

torch::Tensor seeded_normal(at::Generator& gen, at::IntArrayRef shape, double scale) {
  return torch::randn(shape, gen, torch::dtype(torch::kFloat32)) * scale;
}

torch::Tensor standardize(const torch::Tensor& e) {
  auto centered = e - e.mean(1, /*keepdim=*/true);
  return centered / (centered.std(1, /*unbiased=*/true, /*keepdim=*/true) + 1e-6);
}

// Identity surrogate: fixed random projection of the pooled central face crop.
class IdentitySurrogate final : public AttributeEncoder {
 public:
  explicit IdentitySurrogate(int64_t image_size) : size_(image_size) {
    auto gen = at::detail::createCPUGenerator(0x1D3A7u);
    projection_ = seeded_normal(gen, {kEmbeddingDim, 3 * kGrid * kGrid},
                                1.0 / std::sqrt(3.0 * kGrid * kGrid));
  }

  AttributeEncoderSpec spec() const override {
    return {AttributeKind::identity, "surrogate-identity-v1", true};
  }

  torch::Tensor embed(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    const int64_t margin = size_ / 8;
    auto crop = images.slice(2, margin, size_ - margin).slice(3, margin, size_ - margin);
    auto pooled = F::adaptive_avg_pool2d(crop, F::AdaptiveAvgPool2dFuncOptions({kGrid, kGrid}))
                      .reshape({images.size(0), -1});
    return standardize(torch::tanh(2.0 * torch::matmul(pooled, projection_.t())));
  }

  std::vector<torch::Tensor> weights() const override { return {projection_}; }

 private:
  static constexpr int64_t kGrid = 8;
  int64_t size_;
  torch::Tensor projection_;
};

// Two strided random convolutions followed by 4x4 pooling: 32 * 4 * 4 = 512 features.
class RandomConvFeatures {
 public:
  explicit RandomConvFeatures(uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    w1_ = seeded_normal(gen, {16, 3, 5, 5}, 1.0 / std::sqrt(75.0));
    w2_ = seeded_normal(gen, {32, 16, 3, 3}, 1.0 / std::sqrt(144.0));
  }

  torch::Tensor operator()(const torch::Tensor& x) const {
    auto h = torch::tanh(2.0 * F::conv2d(x, w1_, F::Conv2dFuncOptions().stride(2).padding(2)));
    h = torch::tanh(2.0 * F::conv2d(h, w2_, F::Conv2dFuncOptions().stride(2).padding(1)));
    return F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({4, 4}))
        .reshape({x.size(0), -1});
  }

  std::vector<torch::Tensor> weights() const { return {w1_, w2_}; }

 private:
  torch::Tensor w1_;
  torch::Tensor w2_;
};

// Appearance surrogate: random conv features over the whole face crop.
class AppearanceSurrogate final : public AttributeEncoder {
 public:
  explicit AppearanceSurrogate(int64_t) : features_(0xA9932u) {}

  AttributeEncoderSpec spec() const override {
    return {AttributeKind::appearance, "surrogate-appearance-v1", true};
  }

  torch::Tensor embed(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    return standardize(features_(images));
  }

  std::vector<torch::Tensor> weights() const override { return features_.weights(); }

 private:
  RandomConvFeatures features_;
};

// Mouth surrogate: the appearance architecture (fresh weights) on the lower-third crop.
class MouthSurrogate final : public AttributeEncoder {
 public:
  explicit MouthSurrogate(int64_t image_size) : size_(image_size), features_(0x3077Fu) {}

  AttributeEncoderSpec spec() const override {
    return {AttributeKind::mouth, "surrogate-mouth-v1", true};
  }

  torch::Tensor embed(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    auto crop = images.slice(2, 2 * size_ / 3, size_).slice(3, size_ / 4, 3 * size_ / 4);
    auto resized = F::interpolate(crop, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{size_ / 2, size_ / 2})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
    return standardize(features_(resized));
  }

  std::vector<torch::Tensor> weights() const override { return features_.weights(); }

 private:
  int64_t size_;
  RandomConvFeatures features_;
};

}  // namespace

EncoderRegistry::EncoderRegistry() {
  add("surrogate-identity-v1", [](int64_t s) { return std::make_unique<IdentitySurrogate>(s); });
  add("surrogate-appearance-v1",
      [](int64_t s) { return std::make_unique<AppearanceSurrogate>(s); });
  add("surrogate-mouth-v1", [](int64_t s) { return std::make_unique<MouthSurrogate>(s); });
}

EncoderRegistry& EncoderRegistry::instance() {
  static EncoderRegistry registry;
  return registry;
}

void EncoderRegistry::add(const std::string& name, EncoderFactory factory) {
  auto it = std::find_if(factories_.begin(), factories_.end(),
                         [&](const auto& entry) { return entry.first == name; });
  if (it != factories_.end()) {
    it->second = std::move(factory);
  } else {
    factories_.emplace_back(name, std::move(factory));
  }
}

std::unique_ptr<AttributeEncoder> EncoderRegistry::create(const std::string& name,
                                                          int64_t image_size) const {
  for (const auto& [key, factory] : factories_) {
    if (key == name) return factory(image_size);
  }
  throw std::invalid_argument("unknown attribute encoder backend: " + name);
}

bool EncoderRegistry::contains(const std::string& name) const {
  return std::any_of(factories_.begin(), factories_.end(),
                     [&](const auto& entry) { return entry.first == name; });
}

std::vector<std::string> EncoderRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& entry : factories_) out.push_back(entry.first);
  return out;
}

EncoderBank::EncoderBank(int64_t image_size, const EncoderBackends& backends)
    : image_size_(image_size), backends_(backends) {
  if (image_size < kShuffleFactor) {
    throw std::invalid_argument("working image size must be at least 16");
  }
  auto& registry = EncoderRegistry::instance();
  identity_ = registry.create(backends.identity, image_size);
  appearance_ = registry.create(backends.appearance, image_size);
  mouth_ = registry.create(backends.mouth, image_size);
}

AttributeEmbeddings EncoderBank::extract(const torch::Tensor& images) const {
  require_image(images, "extract_embeddings");
  auto batch = as_batch(images).to(torch::kFloat32);
  if (batch.size(2) != image_size_ || batch.size(3) != image_size_) {
    throw std::invalid_argument("extract_embeddings: expected " + std::to_string(image_size_) +
                                "x" + std::to_string(image_size_) + " image, got " +
                                std::to_string(batch.size(2)) + "x" +
                                std::to_string(batch.size(3)));
  }
  return {identity_->embed(batch), appearance_->embed(batch), mouth_->embed(batch)};
}

std::vector<AttributeEncoderSpec> EncoderBank::specs() const {
  return {identity_->spec(), appearance_->spec(), mouth_->spec()};
}

std::vector<torch::Tensor> EncoderBank::weights() const {
  std::vector<torch::Tensor> out;
  for (const auto* enc : {identity_.get(), appearance_.get(), mouth_.get()}) {
    auto w = enc->weights();
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

torch::Tensor pixel_shuffle(const torch::Tensor& input, int64_t upscale) {
  if (upscale < 1) throw std::invalid_argument("pixel_shuffle: upscale must be positive");
  torch::Tensor x;
  switch (input.dim()) {
    case 1: x = input.reshape({1, input.size(0), 1, 1}); break;
    case 2: x = input.reshape({input.size(0), input.size(1), 1, 1}); break;
    case 4: x = input; break;
    default: throw std::invalid_argument("pixel_shuffle: expected 1-, 2- or 4-d input");
  }
  const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t r2 = upscale * upscale;
  if (c % r2 != 0) {
    throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(c) +
                                " not divisible by " + std::to_string(r2));
  }
  // (b, c', ry, rx, h, w) -> (b, c', h, ry, w, rx)
  return x.reshape({b, c / r2, upscale, upscale, h, w})
      .permute({0, 1, 4, 2, 5, 3})
      .reshape({b, c / r2, h * upscale, w * upscale});
}

torch::Tensor assemble_facial_token(const AttributeEmbeddings& embeddings, int64_t height,
                                    int64_t width) {
  if (height < kShuffleFactor || width < kShuffleFactor) {
    throw std::invalid_argument("assemble_facial_token: target size must be at least 16x16");
  }
  std::vector<torch::Tensor> parts;
  for (const auto* e : {&embeddings.identity, &embeddings.appearance, &embeddings.mouth}) {
    auto batch = e->dim() == 1 ? e->unsqueeze(0) : *e;
    if (batch.dim() != 2 || batch.size(1) != kEmbeddingDim) {
      throw std::invalid_argument("assemble_facial_token: embeddings must have length 512");
    }
    auto shuffled = shield::pixel_shuffle(batch, kShuffleFactor);
    parts.push_back(F::interpolate(shuffled, F::InterpolateFuncOptions()
                                                 .size(std::vector<int64_t>{height, width})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false)));
  }
  return torch::cat(parts, 1);
}

torch::Tensor normalize_channels(const torch::Tensor& maps, double eps) {
  auto centered = maps - maps.mean({2, 3}, /*keepdim=*/true);
  auto rms = centered.pow(2).mean({2, 3}, /*keepdim=*/true).sqrt();
  return centered / (rms + eps);
}

ConditionGeneratorImpl::ConditionGeneratorImpl(const ConditionGeneratorOptions& options)
    : options_(options) {
  const int64_t pad = options.kernel_size / 2;
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(kTokenChannels, options.hidden_channels,
                                                          options.kernel_size)
                                     .padding(pad)));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(options.hidden_channels,
                                                          options.message_bits, options.kernel_size)
                                     .padding(pad)));
}

torch::Tensor ConditionGeneratorImpl::forward(const torch::Tensor& token) {
  if (token.dim() != 4 || token.size(1) != kTokenChannels) {
    throw std::invalid_argument("condition generator: expected Bx6xHxW facial token");
  }
  return normalize_channels(conv2_(torch::relu(conv1_(token))));
}

void export_embedding(const torch::Tensor& embedding, const std::filesystem::path& path) {
  auto flat = embedding.detach().to(torch::kFloat32).contiguous().reshape({-1});
  if (flat.numel() != kEmbeddingDim) {
    throw std::invalid_argument("export_embedding: expected 512 values");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const float* data = flat.data_ptr<float>();
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto bits = std::bit_cast<uint32_t>(data[i]);
    std::array<char, 4> bytes{static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                              static_cast<char>((bits >> 16) & 0xFF),
                              static_cast<char>((bits >> 24) & 0xFF)};
    out.write(bytes.data(), 4);
  }
}

torch::Tensor import_embedding(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto out = torch::empty({kEmbeddingDim}, torch::kFloat32);
  float* data = out.data_ptr<float>();
  for (int64_t i = 0; i < kEmbeddingDim; ++i) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
      throw std::runtime_error("import_embedding: truncated file " + path.string());
    }
    uint32_t bits = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                    (uint32_t(b[3]) << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace shield
