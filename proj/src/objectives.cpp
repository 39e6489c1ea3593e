#include "shield/objectives.hpp"

#include <limits>
#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

torch::Tensor recon_loss(const torch::Tensor& bits, const torch::Tensor& logits) {
  if (bits.sizes() != logits.sizes()) {
    throw std::invalid_argument("BCE: message length mismatch " + c10::str(bits.sizes()) +
                                " vs " + c10::str(logits.sizes()));
  }
  return F::binary_cross_entropy_with_logits(logits, bits.to(logits.scalar_type()));
}

torch::Tensor noise_loss(MessageDecoder& decoder, const torch::Tensor& bits,
                         const torch::Tensor& distorted, const torch::Tensor& condition) {
  return recon_loss(bits, pool_logits(decoder->forward(distorted), condition));
}

namespace {

torch::Tensor unit_rows(const torch::Tensor& v, std::string_view what) {
  auto norms = v.norm(2, -1, /*keepdim=*/true);
  if ((norms == 0).any().item<bool>()) {
    throw std::invalid_argument(std::string("fragile loss: zero-norm ") + std::string(what) +
                                " representation; cosine similarity undefined");
  }
  return v / norms;
}

}  // namespace

torch::Tensor info_nce_from_similarities(const torch::Tensor& positive,
                                         const torch::Tensor& negatives, double xi) {
  if (!(xi > 0)) throw std::invalid_argument("temperature must be positive");
  const int64_t n = positive.size(0);
  if (negatives.dim() != 2 || negatives.size(0) != n || negatives.size(1) != n) {
    throw std::invalid_argument("fragile loss: negatives must be BxB");
  }
  auto pos = positive / xi;
  auto diagonal = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  auto neg = (negatives / xi).masked_fill(diagonal, -std::numeric_limits<double>::infinity());
  auto all = torch::cat({pos.unsqueeze(1), neg}, 1);
  return (torch::logsumexp(all, 1) - pos).mean();
}

torch::Tensor fragile_loss(const torch::Tensor& anchors, const torch::Tensor& positives,
                           const torch::Tensor& negatives, double xi) {
  if (anchors.dim() != 2 || anchors.size(0) < 2) {
    throw std::invalid_argument("fragile loss: need a BxC batch with B >= 2");
  }
  const int64_t n = anchors.size(0), c = anchors.size(1);
  if (positives.sizes() != anchors.sizes() || negatives.dim() != 3 || negatives.size(0) != n ||
      negatives.size(1) != n || negatives.size(2) != c) {
    throw std::invalid_argument("fragile loss: expected positives BxC and negatives BxBxC");
  }
  auto a = unit_rows(anchors, "anchor");
  auto p = unit_rows(positives, "positive");
  auto off_diagonal = ~torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  // Only off-diagonal pairings are scored.
  auto neg_norms = negatives.norm(2, -1);
  if ((neg_norms.masked_select(off_diagonal) == 0).any().item<bool>()) {
    throw std::invalid_argument(
        "fragile loss: zero-norm negative representation; cosine similarity undefined");
  }
  auto q = negatives / neg_norms.clamp_min(std::numeric_limits<float>::min()).unsqueeze(-1);
  auto positive_sim = (a * p).sum(1);
  auto negative_sim = (a.unsqueeze(1) * q).sum(2);
  return info_nce_from_similarities(positive_sim, negative_sim, xi);
}

AdversarialTerms adv_loss(Critic& critic, Eraser& eraser, MessageDecoder& decoder,
                          const torch::Tensor& covers, const torch::Tensor& watermarked,
                          const torch::Tensor& bits, const torch::Tensor& condition) {
  auto gap = critic->forward(covers).mean() - critic->forward(watermarked).mean();
  auto erased = decoder->forward(eraser->forward(watermarked));
  auto bce = recon_loss(bits, pool_logits(erased, condition));
  return {gap, bce};
}

}  // namespace shield
