#include "shield/manipulations.hpp"

#include "shield/tensor_ops.hpp"

#include <opencv2/calib3d.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace shield {

std::string to_string(ManipulationKind kind) {
  switch (kind) {
    case ManipulationKind::condition_swap: return "condition_swap";
    case ManipulationKind::blend_swap: return "blend_swap";
    case ManipulationKind::mouth_replace: return "mouth_replace";
    case ManipulationKind::attribute_shift: return "attribute_shift";
  }
  return "unknown";
}

ManipulationKind parse_manipulation_kind(std::string_view name) {
  for (auto kind : kManipulationKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown manipulation: " + std::string(name));
}

ManipulationSpec parse_manipulation(std::string_view text) {
  ManipulationSpec spec;
  const auto colon = text.find(':');
  spec.kind = parse_manipulation_kind(text.substr(0, colon));
  if (colon != std::string_view::npos) {
    const std::string value(text.substr(colon + 1));
    size_t used = 0;
    try {
      spec.strength = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || !(spec.strength > 0.0 && spec.strength <= 1.0)) {
      throw std::invalid_argument("manipulation strength must be in (0, 1]: '" + value + "'");
    }
  }
  return spec;
}

namespace {

void check_strength(double strength) {
  if (!(strength >= 0.0 && strength <= 1.0)) {
    throw std::invalid_argument("strength must be in [0, 1], got " + std::to_string(strength));
  }
}

torch::Tensor single_image(const torch::Tensor& image, std::string_view what) {
  require_image(image, what);
  if (image.dim() == 4) {
    if (image.size(0) != 1) throw std::invalid_argument(std::string(what) + ": one image at a time");
    return image[0];
  }
  return image;
}

cv::Mat to_mat(const torch::Tensor& image) {
  auto hwc = image.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  cv::Mat view(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3,
               hwc.data_ptr<float>());
  return view.clone();
}

torch::Tensor from_mat(const cv::Mat& mat) {
  auto t = torch::from_blob(mat.data, {mat.rows, mat.cols, 3}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous();
}

// Keeps the hard mask's support and ramps it from 0 at the edge to 1 inside.
torch::Tensor feather_inward(const cv::Mat& hard, double sigma) {
  cv::Mat soft;
  if (sigma > 0) {
    cv::GaussianBlur(hard, soft, cv::Size(0, 0), sigma, sigma, cv::BORDER_CONSTANT);
    soft = cv::max(cv::min(2.0 * soft - 1.0, 1.0), 0.0);
    soft = soft.mul(hard);
  } else {
    soft = hard.clone();
  }
  return torch::from_blob(soft.data, {soft.rows, soft.cols}, torch::kFloat32).clone();
}

Point lerp(const Point& a, const Point& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

torch::Tensor composite(const torch::Tensor& base, const torch::Tensor& overlay,
                        const torch::Tensor& mask, double strength) {
  auto w = (mask * strength).to(base.scalar_type()).unsqueeze(0);
  return base * (1 - w) + overlay.to(base.scalar_type()) * w;
}

}  // namespace

std::vector<Point> face_polygon(const Landmarks& lm) {
  const auto& p = lm.points;
  const Point eyes = lerp(p[0], p[1], 0.5), mouth = lerp(p[3], p[4], 0.5);
  const double ux = p[1].x - p[0].x, uy = p[1].y - p[0].y;
  const double eye_span = std::hypot(ux, uy);
  const double vx = mouth.x - eyes.x, vy = mouth.y - eyes.y;
  const double drop = std::hypot(vx, vy);
  if (eye_span <= 0 || drop <= 0) throw std::invalid_argument("degenerate landmark layout");
  const Point centre = lerp(eyes, mouth, 0.3);
  const double rx = 1.15 * eye_span, ry = 1.35 * drop;
  std::vector<Point> polygon;
  for (int k = 0; k < 16; ++k) {
    const double a = 2 * std::numbers::pi * k / 16;
    const double cx = rx * std::cos(a), cy = ry * std::sin(a);
    polygon.push_back({centre.x + cx * ux / eye_span + cy * vx / drop,
                       centre.y + cx * uy / eye_span + cy * vy / drop});
  }
  return polygon;
}

torch::Tensor feathered_polygon_mask(const std::vector<Point>& polygon, int64_t height,
                                     int64_t width, double feather_sigma) {
  std::vector<cv::Point> pts;
  std::vector<cv::Point2f> ptsf;
  for (const auto& p : polygon) {
    pts.emplace_back(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
    ptsf.emplace_back(static_cast<float>(p.x), static_cast<float>(p.y));
  }
  if (pts.size() < 3 || cv::contourArea(ptsf) < 1.0) {
    throw std::invalid_argument("degenerate landmark polygon");
  }
  cv::Mat hard = cv::Mat::zeros(static_cast<int>(height), static_cast<int>(width), CV_32F);
  cv::fillPoly(hard, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(1.0));
  return feather_inward(hard, feather_sigma);
}

torch::Tensor blend_swap(const torch::Tensor& target, const Landmarks& target_landmarks,
                         const torch::Tensor& donor, const Landmarks& donor_landmarks,
                         double strength) {
  check_strength(strength);
  auto t = single_image(target, "blend_swap");
  auto d = single_image(donor, "blend_swap donor");
  if (t.sizes() != d.sizes()) throw std::invalid_argument("blend_swap: donor size differs");
  const int64_t h = t.size(1), w = t.size(2);
  auto mask = feathered_polygon_mask(face_polygon(target_landmarks), h, w, w / 32.0);
  face_polygon(donor_landmarks);  // validates the donor layout

  std::vector<cv::Point2f> src, dst;
  for (int i = 0; i < 5; ++i) {
    src.emplace_back(static_cast<float>(donor_landmarks.points[i].x),
                     static_cast<float>(donor_landmarks.points[i].y));
    dst.emplace_back(static_cast<float>(target_landmarks.points[i].x),
                     static_cast<float>(target_landmarks.points[i].y));
  }
  // Inlier threshold large enough that every landmark counts.
  cv::Mat transform = cv::estimateAffinePartial2D(src, dst, cv::noArray(), cv::RANSAC, 1e6);
  if (transform.empty()) throw std::invalid_argument("blend_swap: landmark fit failed");
  cv::Mat warped;
  cv::warpAffine(to_mat(d), warped, transform, cv::Size(static_cast<int>(w), static_cast<int>(h)),
                 cv::INTER_LINEAR, cv::BORDER_REFLECT);
  auto out = composite(t, from_mat(warped), mask, strength);
  return target.dim() == 4 ? out.unsqueeze(0) : out;
}

torch::Tensor mouth_mask(int64_t size, double feather_sigma) {
  cv::Mat hard = cv::Mat::zeros(static_cast<int>(size), static_cast<int>(size), CV_32F);
  const int top = static_cast<int>(2 * size / 3), left = static_cast<int>(size / 4);
  const int right = static_cast<int>(3 * size / 4);
  hard(cv::Range(top, static_cast<int>(size)), cv::Range(left, right)).setTo(1.0);
  return feather_inward(hard, feather_sigma);
}

torch::Tensor mouth_replace(const torch::Tensor& target, const torch::Tensor& donor,
                            double strength) {
  check_strength(strength);
  auto t = single_image(target, "mouth_replace");
  auto d = single_image(donor, "mouth_replace donor");
  if (t.sizes() != d.sizes()) throw std::invalid_argument("mouth_replace: donor size differs");
  if (t.size(1) != t.size(2)) throw std::invalid_argument("mouth_replace: square images only");
  auto out = composite(t, d, mouth_mask(t.size(1), t.size(1) / 32.0), strength);
  return target.dim() == 4 ? out.unsqueeze(0) : out;
}

torch::Tensor attribute_shift(const torch::Tensor& target, const Landmarks& landmarks,
                              double strength) {
  check_strength(strength);
  auto t = single_image(target, "attribute_shift");
  const int64_t h = t.size(1), w = t.size(2);
  auto mask = feathered_polygon_mask(face_polygon(landmarks), h, w, w / 32.0);
  // Skin-tone edit: 90 degree hue rotation about the grey axis, then a darkening gamma 1.5 curve.
  const double angle = std::numbers::pi / 2;
  const double c = std::cos(angle), k = (1 - c) / 3.0, r = std::sin(angle) / std::sqrt(3.0);
  auto rotation = torch::tensor({c + k, k - r, k + r, k + r, c + k, k - r, k - r, k + r, c + k},
                                t.options()).reshape({3, 3});
  auto rotated = torch::matmul(rotation, t.reshape({3, -1})).reshape(t.sizes()).clamp(-1, 1);
  auto toned = ((rotated + 1) / 2).pow(1.5) * 2 - 1;
  auto out = composite(t, toned, mask, strength);
  return target.dim() == 4 ? out.unsqueeze(0) : out;
}

std::optional<int64_t> nearest_donor(const Landmarks& target, int identity,
                                     const std::vector<Landmarks>& candidates,
                                     const std::vector<int>& candidate_identities) {
  if (candidates.size() != candidate_identities.size()) {
    throw std::invalid_argument("nearest_donor: candidate lists differ in length");
  }
  std::optional<int64_t> best;
  double best_distance = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (candidate_identities[i] == identity) continue;
    double d = 0.0;
    for (int k = 0; k < 5; ++k) {
      const double dx = candidates[i].points[k].x - target.points[k].x;
      const double dy = candidates[i].points[k].y - target.points[k].y;
      d += dx * dx + dy * dy;
    }
    if (d < best_distance) {
      best_distance = d;
      best = static_cast<int64_t>(i);
    }
  }
  return best;
}

}  // namespace shield
