#include "testing.hpp"

#include "shield/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace shield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("shield_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("toy generator is deterministic and bounded") {
  ToyFaceGenerator toy(64);
  auto a = toy.render(5, 2), b = toy.render(5, 2);
  CHECK(torch::equal(a.image, b.image));
  CHECK(a.image.sizes() == torch::IntArrayRef({3, 64, 64}));
  CHECK(a.image.min().item<double>() >= -1.0);
  CHECK(a.image.max().item<double>() <= 1.0);
  CHECK_FALSE(torch::equal(a.image, toy.render(5, 3).image));
  CHECK_FALSE(torch::equal(a.image, toy.render(6, 2).image));
  auto set = toy.make_set({1, 2, 3}, 4, 2);
  CHECK(set.size() == 6);
  CHECK(set.distinct_identities() == std::vector<int>{1, 2, 3});
  CHECK(torch::equal(set.images[0], toy.render(1, 4).image));
}

TEST_CASE("identity split is 72/14/14, disjoint and deterministic") {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("person_" + std::to_string(i));
  auto s = split_identities(ids, 0);
  CHECK(std::count(s.begin(), s.end(), Split::train) == 72);
  CHECK(std::count(s.begin(), s.end(), Split::val) == 14);
  CHECK(std::count(s.begin(), s.end(), Split::test) == 14);
  CHECK((split_identities(ids, 0) == s));
  CHECK((split_identities(ids, 1) != s));

  auto t = toy_splits(100);
  CHECK(t.train.size() == 72);
  CHECK(t.val.size() == 14);
  CHECK(t.test.size() == 14);
}

TEST_CASE("directory ingestion skips unreadable files and keeps identities apart") {
  auto root = scratch("ingest");
  ToyFaceGenerator(32).write_directory(root, 20, 3);
  std::ofstream(root / "id_0000" / "broken.png") << "not an image";
  auto m = ingest(root, 7);
  CHECK(m.entries.size() == 60);
  std::set<std::string> seen[3];
  for (const auto& e : m.entries) seen[static_cast<int>(e.split)].insert(e.identity);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (const auto& id : seen[a]) CHECK(seen[b].count(id) == 0);
  CHECK(seen[0].size() + seen[1].size() + seen[2].size() == 20);

  auto again = ingest(root, 7);
  REQUIRE(again.entries.size() == m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(again.entries[i].path == m.entries[i].path);
    CHECK(again.entries[i].split == m.entries[i].split);
  }

  auto csv = root / "manifest.csv";
  m.save_csv(csv);
  auto loaded = DatasetManifest::load_csv(csv);
  CHECK(loaded.entries.size() == m.entries.size());

  auto train = load_split(m, Split::train, 32);
  CHECK(train.images.size(1) == 3);
  CHECK(train.image_size() == 32);
  CHECK(train.size() == static_cast<int64_t>(m.of(Split::train).size()));

  auto empty = scratch("empty");
  fs::create_directories(empty / "nobody");
  CHECK_THROWS_AS(ingest(empty), std::invalid_argument);
  fs::remove_all(root);
  fs::remove_all(empty);
}

TEST_CASE("PNG round trip through 8 bits") {
  auto root = scratch("png");
  ToyFaceGenerator toy(48);
  auto img = toy.render(2, 0).image;
  write_png(img, root / "a.png");
  auto back = read_image(root / "a.png", 48);
  CHECK((back - img).abs().max().item<double>() <= 1.0 / 255 + 1e-6);
  // Non-square input is centre-cropped then resized.
  write_png(torch::zeros({3, 48, 80}), root / "wide.png");
  CHECK(read_image(root / "wide.png", 32).sizes() == torch::IntArrayRef({3, 32, 32}));
  fs::remove_all(root);
}

TEST_CASE("foreign partners always differ in identity") {
  auto p = foreign_partners({1, 1, 2, 2, 3});
  REQUIRE(p.size() == 5);
  const std::vector<int> ids{1, 1, 2, 2, 3};
  for (size_t i = 0; i < p.size(); ++i) CHECK(ids[p[i]] != ids[i]);
  CHECK_THROWS(foreign_partners({4, 4}));
}
