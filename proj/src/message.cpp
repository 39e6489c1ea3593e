#include "shield/message.hpp"

#include "shield/tensor_ops.hpp"

#include <cctype>
#include <stdexcept>

namespace shield {

Message::Message(std::vector<uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw std::invalid_argument("Message: bits must be 0 or 1");
  }
}

Message Message::from_hex(std::string_view hex) {
  if (hex.empty()) throw std::invalid_argument("malformed hex message: empty");
  std::vector<uint8_t> bits;
  bits.reserve(hex.size() * 4);
  for (char ch : hex) {
    int v;
    if (ch >= '0' && ch <= '9') {
      v = ch - '0';
    } else {
      const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (lower < 'a' || lower > 'f') {
        throw std::invalid_argument("malformed hex message: '" + std::string(hex) + "'");
      }
      v = lower - 'a' + 10;
    }
    for (int shift = 3; shift >= 0; --shift) bits.push_back(static_cast<uint8_t>((v >> shift) & 1));
  }
  return Message(std::move(bits));
}

Message Message::random(int64_t length, std::mt19937_64& rng) {
  std::vector<uint8_t> bits(length);
  std::bernoulli_distribution coin(0.5);
  for (auto& b : bits) b = coin(rng) ? 1 : 0;
  return Message(std::move(bits));
}

std::vector<Message> Message::from_tensor(const torch::Tensor& bits) {
  auto rows = bits.dim() == 1 ? bits.unsqueeze(0) : bits;
  auto cpu = rows.detach().to(torch::kFloat32).contiguous();
  std::vector<Message> out;
  out.reserve(cpu.size(0));
  for (int64_t r = 0; r < cpu.size(0); ++r) {
    std::vector<uint8_t> v(cpu.size(1));
    auto acc = cpu[r];
    for (int64_t i = 0; i < cpu.size(1); ++i) v[i] = acc[i].item<float>() > 0.5f ? 1 : 0;
    out.emplace_back(std::move(v));
  }
  return out;
}

std::vector<Message> Message::from_logits(const torch::Tensor& logits) {
  return from_tensor(logits.detach().gt(0).to(torch::kFloat32));
}

std::string Message::to_hex() const {
  if (bits_.size() % 4 != 0) {
    throw std::invalid_argument("Message::to_hex: length must be a multiple of 4");
  }
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (size_t i = 0; i < bits_.size(); i += 4) {
    const int v = (bits_[i] << 3) | (bits_[i + 1] << 2) | (bits_[i + 2] << 1) | bits_[i + 3];
    out.push_back(kDigits[v]);
  }
  return out;
}

torch::Tensor Message::to_tensor() const {
  auto out = torch::empty({size()}, torch::kFloat32);
  for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<float>(bits_[i]);
  return out;
}

Message Message::flipped(int64_t i) const {
  auto bits = bits_;
  bits.at(i) ^= 1;
  return Message(std::move(bits));
}

Message Message::complement() const {
  auto bits = bits_;
  for (auto& b : bits) b ^= 1;
  return Message(std::move(bits));
}

torch::Tensor stack_messages(const std::vector<Message>& messages) {
  if (messages.empty()) throw std::invalid_argument("stack_messages: empty list");
  std::vector<torch::Tensor> rows;
  rows.reserve(messages.size());
  for (const auto& m : messages) {
    if (m.size() != messages.front().size()) {
      throw std::invalid_argument("stack_messages: messages differ in length");
    }
    rows.push_back(m.to_tensor());
  }
  return torch::stack(rows);
}

torch::Tensor duplicate_message(const torch::Tensor& bits, int64_t height, int64_t width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("duplicate_message: empty size");
  auto rows = bits.dim() == 1 ? bits.unsqueeze(0) : bits;
  auto symbols = rows * 2.0 - 1.0;
  return symbols.unsqueeze(-1).unsqueeze(-1).expand({rows.size(0), rows.size(1), height, width});
}

torch::Tensor duplicate_message(const Message& message, int64_t height, int64_t width) {
  return duplicate_message(message.to_tensor(), height, width);
}

torch::Tensor transform_message(const torch::Tensor& repeated, const torch::Tensor& condition) {
  if (repeated.sizes() != condition.sizes()) {
    throw std::invalid_argument("transform_message: shape mismatch between repeated message " +
                                c10::str(repeated.sizes()) + " and condition map " +
                                c10::str(condition.sizes()));
  }
  return repeated * condition;
}

MessageEncoderImpl::MessageEncoderImpl(const MessageEncoderOptions& options)
    : options_(options), alpha_(options.alpha) {
  if (options.alpha < 0) throw std::invalid_argument("residual bound alpha must be >= 0");
  const int64_t pad = options.kernel_size / 2;
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 + options.message_bits,
                                                          options.hidden_channels,
                                                          options.kernel_size)
                                     .padding(pad)));
  conv2_ = register_module(
      "conv2",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(options.hidden_channels, 3, options.kernel_size)
                            .padding(pad)));
}

void MessageEncoderImpl::set_alpha(double alpha) {
  if (alpha < 0) throw std::invalid_argument("residual bound alpha must be >= 0");
  alpha_ = alpha;
}

torch::Tensor MessageEncoderImpl::forward(const torch::Tensor& images,
                                          const torch::Tensor& conditional_message) {
  auto x = as_batch(images);
  if (conditional_message.dim() != 4 || conditional_message.size(0) != x.size(0) ||
      conditional_message.size(1) != options_.message_bits ||
      conditional_message.size(2) != x.size(2) || conditional_message.size(3) != x.size(3)) {
    throw std::invalid_argument("encode: conditional message shape " +
                                c10::str(conditional_message.sizes()) +
                                " incompatible with images " + c10::str(x.sizes()));
  }
  auto residual = conv2_(torch::relu(conv1_(torch::cat({x, conditional_message}, 1))));
  return x + alpha_ * torch::tanh(residual);
}

MessageDecoderImpl::MessageDecoderImpl(const MessageDecoderOptions& options) : options_(options) {
  const auto h = options.hidden_channels;
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, h, 3).padding(1)));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(h));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(h, h, 3).padding(1)));
  bn2_ = register_module("bn2", torch::nn::BatchNorm2d(h));
  conv3_ = register_module(
      "conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(h, options.message_bits, 3).padding(1)));
}

torch::Tensor MessageDecoderImpl::forward(const torch::Tensor& images) {
  auto x = as_batch(images);
  auto h = torch::relu(bn1_(conv1_(x)));
  h = torch::relu(bn2_(conv2_(h)));
  return options_.output_gain * conv3_(h);
}

torch::Tensor pool_logits(const torch::Tensor& recovered, const torch::Tensor& condition) {
  if (recovered.sizes() != condition.sizes()) {
    throw std::invalid_argument("decode: recovered map " + c10::str(recovered.sizes()) +
                                " does not match condition map " + c10::str(condition.sizes()));
  }
  return (recovered * condition).mean({2, 3});
}

torch::Tensor pool_logits_cross(const torch::Tensor& recovered, const torch::Tensor& conditions) {
  if (recovered.dim() != 4 || conditions.dim() != 4 ||
      recovered.sizes().slice(1) != conditions.sizes().slice(1)) {
    throw std::invalid_argument("decode: recovered map and condition maps differ in shape");
  }
  const double area = static_cast<double>(recovered.size(2) * recovered.size(3));
  return torch::einsum("kihw,qihw->kqi", {recovered, conditions}) / area;
}

}  // namespace shield
