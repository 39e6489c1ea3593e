#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shield {

inline constexpr int64_t kEmbeddingDim = 512;
inline constexpr int64_t kShuffleFactor = 16;
inline constexpr int64_t kTokenChannels = 6;

enum class AttributeKind { identity, appearance, mouth };

std::string to_string(AttributeKind kind);

struct AttributeEncoderSpec {
  AttributeKind kind;
  std::string backend;
  bool frozen = true;
};

/// A frozen network mapping Bx3xSxS images to Bx512 attribute embeddings.
///
/// Implementations hold their weights as buffers that never require grad; the
/// embedding is computed under a no-grad guard so nothing upstream of the
/// Facial Token can receive updates.
class AttributeEncoder {
 public:
  virtual ~AttributeEncoder() = default;
  virtual AttributeEncoderSpec spec() const = 0;
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
  /// Every weight tensor, for frozen-ness checks.
  virtual std::vector<torch::Tensor> weights() const = 0;
};

using EncoderFactory = std::function<std::unique_ptr<AttributeEncoder>(int64_t image_size)>;

/// Name-keyed encoder backends. The three surrogate backends are always present.
class EncoderRegistry {
 public:
  static EncoderRegistry& instance();

  void add(const std::string& name, EncoderFactory factory);
  std::unique_ptr<AttributeEncoder> create(const std::string& name, int64_t image_size) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  EncoderRegistry();
  std::vector<std::pair<std::string, EncoderFactory>> factories_;
};

struct AttributeEmbeddings {
  torch::Tensor identity;    // Bx512
  torch::Tensor appearance;  // Bx512
  torch::Tensor mouth;       // Bx512
};

struct EncoderBackends {
  std::string identity = "surrogate-identity-v1";
  std::string appearance = "surrogate-appearance-v1";
  std::string mouth = "surrogate-mouth-v1";
};

/// The I/A/M encoder triple bound to one working image size.
class EncoderBank {
 public:
  EncoderBank(int64_t image_size, const EncoderBackends& backends = {});

  /// Rejects non-finite pixels and any spatial size other than the working size.
  AttributeEmbeddings extract(const torch::Tensor& images) const;

  int64_t image_size() const { return image_size_; }
  const EncoderBackends& backends() const { return backends_; }
  std::vector<AttributeEncoderSpec> specs() const;
  std::vector<torch::Tensor> weights() const;

 private:
  int64_t image_size_;
  EncoderBackends backends_;
  std::unique_ptr<AttributeEncoder> identity_;
  std::unique_ptr<AttributeEncoder> appearance_;
  std::unique_ptr<AttributeEncoder> mouth_;
};

/// Rearranges channels into space: out[c, y, x] = in[c*r*r + (y % r)*r + (x % r), y / r, x / r].
///
/// Accepts C (treated as Cx1x1), BxC, or BxCxhxw input and returns
/// Bx(C/r^2)x(h*r)x(w*r). C must be divisible by r^2.
torch::Tensor pixel_shuffle(const torch::Tensor& input, int64_t upscale = kShuffleFactor);

/// Shuffles each embedding to 2x16x16, bilinearly resizes to HxW and concatenates
/// (identity, appearance, mouth) into a Bx6xHxW Facial Token.
torch::Tensor assemble_facial_token(const AttributeEmbeddings& embeddings, int64_t height,
                                    int64_t width);

struct ConditionGeneratorOptions {
  int64_t message_bits = 32;
  int64_t hidden_channels = 32;
  int64_t kernel_size = 7;
};

/// Facial Token -> Condition Map. Two 7x7 convolutions with a ReLU between them;
/// each output channel is then normalized to zero spatial mean and unit RMS.
class ConditionGeneratorImpl : public torch::nn::Module {
 public:
  explicit ConditionGeneratorImpl(const ConditionGeneratorOptions& options = {});
  torch::Tensor forward(const torch::Tensor& token);

  const ConditionGeneratorOptions& options() const { return options_; }

 private:
  ConditionGeneratorOptions options_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ConditionGenerator);

/// Zero-mean, unit-RMS normalization of every channel over its spatial extent.
torch::Tensor normalize_channels(const torch::Tensor& maps, double eps = 1e-5);

/// Writes a 512-vector as raw little-endian float32.
void export_embedding(const torch::Tensor& embedding, const std::filesystem::path& path);
torch::Tensor import_embedding(const std::filesystem::path& path);

}  // namespace shield
