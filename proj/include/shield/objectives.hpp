#pragma once

#include "shield/adversarial.hpp"
#include "shield/message.hpp"

#include <torch/torch.h>

namespace shield {

struct LossWeights {
  double reconstruction = 1.0;  // lambda_r
  double noise = 1.0;           // lambda_n
  double adversarial = 0.1;     // lambda_a
  double fragile = 1.0;         // lambda_f
};

template <typename T>
struct LossParts {
  T reconstruction{};
  T noise{};
  T adversarial{};
  T fragile{};
};

/// lambda_r*L_r + lambda_n*L_n - lambda_a*L_a + lambda_f*L_f. Works for doubles and tensors.
template <typename T>
T total_loss(const LossParts<T>& parts, const LossWeights& w) {
  return parts.reconstruction * w.reconstruction + parts.noise * w.noise -
         parts.adversarial * w.adversarial + parts.fragile * w.fragile;
}

/// Mean binary cross entropy of sigmoid(logits) against {0,1} bits. Shapes must match.
torch::Tensor recon_loss(const torch::Tensor& bits, const torch::Tensor& logits);

/// Decodes the (already distorted) image with `condition` and scores it against `bits`.
torch::Tensor noise_loss(MessageDecoder& decoder, const torch::Tensor& bits,
                         const torch::Tensor& distorted, const torch::Tensor& condition);

/// InfoNCE over decoded logit vectors with cosine similarity and temperature xi.
///
/// anchors, positives: BxC. negatives: BxBxC where negatives[k][q] is image k decoded
/// with the condition of image q; the diagonal is ignored. B must be at least 2 and
/// every vector must have nonzero norm.
torch::Tensor fragile_loss(const torch::Tensor& anchors, const torch::Tensor& positives,
                           const torch::Tensor& negatives, double xi = 0.5);

/// Per-anchor InfoNCE given raw similarities: positive B, negatives BxB (diagonal ignored).
torch::Tensor info_nce_from_similarities(const torch::Tensor& positive,
                                         const torch::Tensor& negatives, double xi = 0.5);

struct AdversarialTerms {
  torch::Tensor critic_gap;  // mean Dis(x) - mean Dis(x_s)
  torch::Tensor erase_bce;   // BCE(m, Dec(Adv(x_s)) pooled with the matched condition)
  torch::Tensor value() const { return critic_gap - erase_bce; }
};

/// L_a = Dis(x) - Dis(x_s) - BCE(m, Dec(Adv(x_s) | cond)).
AdversarialTerms adv_loss(Critic& critic, Eraser& eraser, MessageDecoder& decoder,
                          const torch::Tensor& covers, const torch::Tensor& watermarked,
                          const torch::Tensor& bits, const torch::Tensor& condition);

}  // namespace shield
