#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace shield {

/// Fixed-length bit string. Bit 0 is the most significant bit of the hex form.
class Message {
 public:
  Message() = default;
  explicit Message(std::vector<uint8_t> bits);

  /// Parses lowercase or uppercase hex, most-significant bit first; 4 bits per digit.
  static Message from_hex(std::string_view hex);
  static Message random(int64_t length, std::mt19937_64& rng);
  static Message zeros(int64_t length) { return Message(std::vector<uint8_t>(length, 0)); }

  /// Rows of a {0,1}-valued BxC tensor.
  static std::vector<Message> from_tensor(const torch::Tensor& bits);
  /// Thresholds logits at zero (logit > 0 -> 1).
  static std::vector<Message> from_logits(const torch::Tensor& logits);

  std::string to_hex() const;
  torch::Tensor to_tensor() const;  // float {0,1}, length C

  int64_t size() const { return static_cast<int64_t>(bits_.size()); }
  uint8_t operator[](int64_t i) const { return bits_.at(i); }
  const std::vector<uint8_t>& bits() const { return bits_; }
  Message flipped(int64_t i) const;
  Message complement() const;

  friend bool operator==(const Message&, const Message&) = default;

 private:
  std::vector<uint8_t> bits_;
};

/// Stacks messages into a BxC float tensor of {0,1}.
torch::Tensor stack_messages(const std::vector<Message>& messages);

/// Channel i is filled with the symbol of bit i: 0 -> -1, 1 -> +1. Returns BxCxHxW.
torch::Tensor duplicate_message(const torch::Tensor& bits, int64_t height, int64_t width);
torch::Tensor duplicate_message(const Message& message, int64_t height, int64_t width);

/// Elementwise product of Repeated Message and Condition Map; shapes must match.
torch::Tensor transform_message(const torch::Tensor& repeated, const torch::Tensor& condition);

struct MessageEncoderOptions {
  int64_t message_bits = 32;
  int64_t hidden_channels = 32;
  int64_t kernel_size = 7;
  double alpha = 0.1;
};

/// Injects a Conditional Message as a softly truncated residual:
/// x_s = x + alpha * tanh(conv(relu(conv([x, cm])))).
class MessageEncoderImpl : public torch::nn::Module {
 public:
  explicit MessageEncoderImpl(const MessageEncoderOptions& options = {});

  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& conditional_message);

  double alpha() const { return alpha_; }
  void set_alpha(double alpha);
  const MessageEncoderOptions& options() const { return options_; }

 private:
  MessageEncoderOptions options_;
  double alpha_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(MessageEncoder);

struct MessageDecoderOptions {
  int64_t message_bits = 32;
  int64_t hidden_channels = 32;
  // Fixed scale on the recovered map.
  double output_gain = 10.0;
};

/// Three 3x3 convolutions (BatchNorm + ReLU between) recovering a CxHxW map.
class MessageDecoderImpl : public torch::nn::Module {
 public:
  explicit MessageDecoderImpl(const MessageDecoderOptions& options = {});

  /// Recovered Conditional Message map, BxCxHxW.
  torch::Tensor forward(const torch::Tensor& images);

  const MessageDecoderOptions& options() const { return options_; }

 private:
  MessageDecoderOptions options_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(MessageDecoder);

/// logits[b, i] = spatial mean of recovered[b, i] * condition[b, i].
torch::Tensor pool_logits(const torch::Tensor& recovered, const torch::Tensor& condition);

/// Logits of every (image k, condition q) pairing: out[k, q, i] decodes image k with
/// condition q. Shapes: recovered BxCxHxW, conditions QxCxHxW -> BxQxC.
torch::Tensor pool_logits_cross(const torch::Tensor& recovered, const torch::Tensor& conditions);

}  // namespace shield
