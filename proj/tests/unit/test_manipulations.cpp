#include "testing.hpp"

#include "shield/dataset.hpp"
#include "shield/manipulations.hpp"

using namespace shield;

namespace {

struct Pair {
  ToyFaceGenerator::Rendered target, donor;
};

Pair pair(int64_t size = 64) {
  ToyFaceGenerator toy(size);
  return {toy.render(3, 1), toy.render(17, 4)};
}

// Pixels whose polygon mask is exactly zero.
torch::Tensor outside(const Landmarks& lm, int64_t size) {
  return feathered_polygon_mask(face_polygon(lm), size, size, size / 32.0) == 0;
}

}  // namespace

TEST_CASE("manipulation spec parsing") {
  auto s = parse_manipulation("mouth_replace:0.5");
  CHECK(s.kind == ManipulationKind::mouth_replace);
  CHECK(s.strength == 0.5);
  CHECK(parse_manipulation("blend_swap").strength == 1.0);
  CHECK_FALSE(parse_manipulation("attribute_shift").needs_donor());
  CHECK(parse_manipulation("condition_swap").needs_donor());
  CHECK_THROWS_AS(parse_manipulation("blend_swap:0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_manipulation("blend_swap:1.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_manipulation("stargan"), std::invalid_argument);
  for (auto k : kManipulationKinds) CHECK(parse_manipulation_kind(to_string(k)) == k);
}

TEST_CASE("polygon mask is zero outside and feathered inside") {
  auto lm = Landmarks::canonical(64);
  auto mask = feathered_polygon_mask(face_polygon(lm), 64, 64, 2.0);
  CHECK(mask.sizes() == torch::IntArrayRef({64, 64}));
  CHECK(mask.min().item<double>() >= 0.0);
  CHECK(mask.max().item<double>() == doctest::Approx(1.0));
  CHECK(mask[0][0].item<double>() == 0.0);
  const double centre = mask[32][32].item<double>();
  CHECK(centre == doctest::Approx(1.0));
  Landmarks flat;
  for (auto& p : flat.points) p = {10, 10};
  CHECK_THROWS_AS(face_polygon(flat), std::invalid_argument);
  CHECK_THROWS_AS(feathered_polygon_mask({{1, 1}, {2, 2}, {3, 3}}, 8, 8, 1.0), std::invalid_argument);
}

TEST_CASE("blend swap is local and strength-continuous") {
  auto p = pair();
  auto out = blend_swap(p.target.image, p.target.landmarks, p.donor.image, p.donor.landmarks);
  CHECK(out.sizes() == p.target.image.sizes());
  auto still = outside(p.target.landmarks, 64).unsqueeze(0).expand({3, 64, 64});
  CHECK(torch::equal(out.masked_select(still), p.target.image.masked_select(still)));
  CHECK((out - p.target.image).abs().max().item<double>() > 0.1);
  CHECK(torch::equal(blend_swap(p.target.image, p.target.landmarks, p.donor.image,
                                p.donor.landmarks, 0.0),
                     p.target.image));
  double previous = 1e9;
  for (double s : {0.1, 0.01, 0.001}) {
    auto d = (blend_swap(p.target.image, p.target.landmarks, p.donor.image, p.donor.landmarks, s) -
              p.target.image).abs().max().item<double>();
    CHECK(d < previous);
    previous = d;
  }
  CHECK(previous < 0.01);
}

TEST_CASE("mouth replacement is local") {
  auto p = pair();
  auto out = mouth_replace(p.target.image, p.donor.image);
  auto mask = mouth_mask(64, 2.0);
  CHECK(mask.slice(0, 0, 42).abs().max().item<double>() == 0.0);
  auto still = (mask == 0).unsqueeze(0).expand({3, 64, 64});
  CHECK(torch::equal(out.masked_select(still), p.target.image.masked_select(still)));
  CHECK((out - p.target.image).abs().max().item<double>() > 0.1);
  CHECK(torch::equal(mouth_replace(p.target.image, p.donor.image, 0.0), p.target.image));
  CHECK((mouth_replace(p.target.image, p.donor.image, 1e-3) - p.target.image).abs().max().item<double>() < 0.01);
}

TEST_CASE("attribute shift stays inside the face and vanishes with strength") {
  auto p = pair();
  auto out = attribute_shift(p.target.image, p.target.landmarks);
  auto still = outside(p.target.landmarks, 64).unsqueeze(0).expand({3, 64, 64});
  CHECK(torch::equal(out.masked_select(still), p.target.image.masked_select(still)));
  CHECK((out - p.target.image).abs().max().item<double>() > 0.1);
  CHECK(out.abs().max().item<double>() <= 1.0);
  CHECK(torch::equal(attribute_shift(p.target.image, p.target.landmarks, 0.0), p.target.image));
  CHECK((attribute_shift(p.target.image, p.target.landmarks, 1e-3) - p.target.image)
            .abs().max().item<double>() < 0.01);
  CHECK_THROWS_AS(attribute_shift(p.target.image, p.target.landmarks, 1.5), std::invalid_argument);
}

TEST_CASE("nearest donor skips the same identity") {
  auto lm = Landmarks::canonical(64);
  auto shifted = lm;
  for (auto& q : shifted.points) q.x += 1;
  auto far = lm;
  for (auto& q : far.points) q.x += 9;
  CHECK(nearest_donor(lm, 1, {lm, shifted, far}, {1, 2, 3}) == 1);
  CHECK(nearest_donor(lm, 1, {lm, far}, {1, 3}) == 1);
  CHECK_FALSE(nearest_donor(lm, 1, {lm}, {1}).has_value());
}
