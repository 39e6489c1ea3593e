#pragma once

#include "shield/dataset.hpp"

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

namespace shield {

enum class ManipulationKind { condition_swap, blend_swap, mouth_replace, attribute_shift };

inline constexpr std::array<ManipulationKind, 4> kManipulationKinds = {
    ManipulationKind::condition_swap, ManipulationKind::blend_swap, ManipulationKind::mouth_replace,
    ManipulationKind::attribute_shift};

std::string to_string(ManipulationKind kind);
ManipulationKind parse_manipulation_kind(std::string_view name);

struct ManipulationSpec {
  ManipulationKind kind = ManipulationKind::blend_swap;
  double strength = 1.0;

  bool needs_donor() const { return kind != ManipulationKind::attribute_shift; }
};

/// "kind" or "kind:strength"; strength must lie in (0, 1].
ManipulationSpec parse_manipulation(std::string_view text);

/// Face polygon derived from the five landmarks: a 16-gon around the eye-mouth centre.
std::vector<Point> face_polygon(const Landmarks& landmarks);

/// HxW mask that is 1 deep inside the polygon, feathered toward its edge and exactly 0
/// outside it. Throws for degenerate (zero-area) polygons.
torch::Tensor feathered_polygon_mask(const std::vector<Point>& polygon, int64_t height,
                                     int64_t width, double feather_sigma);

/// Warps the donor face onto the target landmarks with a least-squares similarity
/// transform and alpha-blends it into `target` inside the face polygon.
torch::Tensor blend_swap(const torch::Tensor& target, const Landmarks& target_landmarks,
                         const torch::Tensor& donor, const Landmarks& donor_landmarks,
                         double strength = 1.0);

/// Lower-third mouth box: rows [2S/3, S), columns [S/4, 3S/4).
torch::Tensor mouth_mask(int64_t size, double feather_sigma);

/// Pastes the donor's mouth box into the target with feathered blending.
torch::Tensor mouth_replace(const torch::Tensor& target, const torch::Tensor& donor,
                            double strength = 1.0);

/// Smooth colour and tone warp restricted to the face polygon.
torch::Tensor attribute_shift(const torch::Tensor& target, const Landmarks& landmarks,
                              double strength = 1.0);

/// Index of the candidate with the closest landmark layout among those whose identity
/// differs from `identity`; nullopt if none qualifies.
std::optional<int64_t> nearest_donor(const Landmarks& target, int identity,
                                     const std::vector<Landmarks>& candidates,
                                     const std::vector<int>& candidate_identities);

}  // namespace shield
