#include "shield/dataset.hpp"

#include "shield/digest.hpp"
#include "shield/tensor_ops.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace shield {

namespace F = torch::nn::functional;

Landmarks Landmarks::canonical(int64_t image_size) {
  const double s = static_cast<double>(image_size);
  Landmarks lm;
  lm.points = {Point{0.37 * s, 0.44 * s}, Point{0.63 * s, 0.44 * s}, Point{0.5 * s, 0.58 * s},
               Point{0.38 * s, 0.72 * s}, Point{0.62 * s, 0.72 * s}};
  return lm;
}

std::vector<int> FaceSet::distinct_identities() const {
  std::vector<int> out;
  std::set<int> seen;
  for (int id : identities) {
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

FaceSet FaceSet::subset(const std::vector<int64_t>& rows) const {
  FaceSet out;
  auto index = torch::tensor(rows, torch::kLong);
  out.images = images.index_select(0, index);
  for (auto r : rows) {
    out.identities.push_back(identities.at(r));
    out.landmarks.push_back(landmarks.at(r));
    out.names.push_back(names.at(r));
  }
  return out;
}

namespace {

struct IdentityParams {
  std::array<double, 3> background, skin, hair, eye, lip;
  double face_w, face_h, eye_y, eye_x, eye_r, mouth_y, mouth_w, hairline;
  std::array<double, 3 * 6 * 6> texture;
};

IdentityParams identity_params(int identity) {
  std::mt19937_64 rng(1000 + static_cast<uint64_t>(identity));
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto colour = [&](double lo, double hi, std::array<double, 3> scale) {
    std::array<double, 3> c{};
    for (int i = 0; i < 3; ++i) c[i] = u(lo, hi) * scale[i];
    return c;
  };
  IdentityParams p{};
  p.background = colour(-0.9, 0.9, {1, 1, 1});
  p.skin = colour(-0.5, 0.8, {1, 0.8, 0.7});
  p.hair = colour(-1, 0.5, {1, 1, 1});
  p.face_w = u(0.26, 0.36);
  p.face_h = u(0.34, 0.44);
  p.eye_y = u(0.38, 0.46);
  p.eye_x = u(0.1, 0.16);
  p.eye_r = u(0.03, 0.05);
  p.eye = colour(-1, 0.2, {1, 1, 1});
  p.mouth_y = u(0.66, 0.74);
  p.mouth_w = u(0.08, 0.16);
  p.lip = colour(-0.6, 0.6, {1, 0.4, 0.4});
  p.hairline = u(0.15, 0.3);
  std::normal_distribution<double> normal(0.0, 0.15);
  for (auto& t : p.texture) t = normal(rng);
  return p;
}

}  // namespace

ToyFaceGenerator::ToyFaceGenerator(int64_t image_size) : size_(image_size) {
  if (image_size < 16) throw std::invalid_argument("toy faces need at least 16x16 pixels");
}

ToyFaceGenerator::Rendered ToyFaceGenerator::render(int identity, int variant) const {
  const auto p = identity_params(identity);
  std::mt19937_64 rng(static_cast<uint64_t>(identity) * 1000003ULL + static_cast<uint64_t>(variant) * 7919ULL + 13ULL);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double dx = u(-0.03, 0.03), dy = u(-0.03, 0.03);
  const double light = u(-0.08, 0.08);
  const double openness = u(0.01, 0.05);

  const int64_t s = size_;
  const double cx = 0.5 + dx, cy = 0.52 + dy;
  const double eye_cy = cy - 0.5 + p.eye_y, mouth_cy = cy - 0.5 + p.mouth_y;
  const int64_t block = s / 6 + 1;
  auto img = torch::empty({3, s, s}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  for (int64_t i = 0; i < s; ++i) {
    const double y = static_cast<double>(i) / s;
    for (int64_t j = 0; j < s; ++j) {
      const double x = static_cast<double>(j) / s;
      std::array<double, 3> c{};
      for (int k = 0; k < 3; ++k) c[k] = p.background[k] + 0.2 * (y - 0.5);
      const double hx = (x - cx) / (p.face_w + 0.04), hy = (y - cy + 0.06) / (p.face_h + 0.04);
      if (hx * hx + hy * hy < 1 && y < cy - p.hairline + 0.1) c = p.hair;
      const double fx = (x - cx) / p.face_w, fy = (y - cy) / p.face_h;
      if (fx * fx + fy * fy < 1) {
        const int64_t ti = std::min<int64_t>(i / block, 5), tj = std::min<int64_t>(j / block, 5);
        for (int k = 0; k < 3; ++k) c[k] = p.skin[k] + p.texture[k * 36 + ti * 6 + tj];
      }
      for (double side : {-1.0, 1.0}) {
        const double ex = x - cx - side * p.eye_x, ey = y - eye_cy;
        if (ex * ex + ey * ey < p.eye_r * p.eye_r) c = p.eye;
      }
      const double mx = (x - cx) / p.mouth_w, my = (y - mouth_cy) / openness;
      if (mx * mx + my * my < 1) c = p.lip;
      for (int k = 0; k < 3; ++k) acc[k][i][j] = static_cast<float>(c[k] + light);
    }
  }
  // Soften hard edges with a 3x3 box filter.
  auto soft = F::avg_pool2d(F::pad(img.unsqueeze(0), F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect)),
                            F::AvgPool2dFuncOptions(3).stride(1));
  Rendered out;
  out.image = soft.squeeze(0).clamp(-1, 1);
  const double sd = static_cast<double>(s);
  out.landmarks.points = {Point{(cx - p.eye_x) * sd, eye_cy * sd}, Point{(cx + p.eye_x) * sd, eye_cy * sd},
                          Point{cx * sd, 0.5 * (eye_cy + mouth_cy) * sd},
                          Point{(cx - p.mouth_w) * sd, mouth_cy * sd},
                          Point{(cx + p.mouth_w) * sd, mouth_cy * sd}};
  return out;
}

FaceSet ToyFaceGenerator::make_set(const std::vector<int>& identities, int first_variant,
                                   int count) const {
  FaceSet set;
  std::vector<torch::Tensor> images;
  for (int id : identities) {
    for (int v = first_variant; v < first_variant + count; ++v) {
      auto r = render(id, v);
      images.push_back(r.image);
      set.identities.push_back(id);
      set.landmarks.push_back(r.landmarks);
      set.names.push_back("toy" + std::to_string(id) + "_v" + std::to_string(v));
    }
  }
  if (images.empty()) throw std::invalid_argument("toy set is empty");
  set.images = torch::stack(images);
  return set;
}

void ToyFaceGenerator::write_directory(const std::filesystem::path& root, int identities,
                                       int variants) const {
  for (int id = 0; id < identities; ++id) {
    char folder[32];
    std::snprintf(folder, sizeof folder, "id_%04d", id);
    const auto dir = root / folder;
    std::filesystem::create_directories(dir);
    for (int v = 0; v < variants; ++v) {
      char file[32];
      std::snprintf(file, sizeof file, "v%03d.png", v);
      write_png(render(id, v).image, dir / file);
    }
  }
}

std::vector<int64_t> foreign_partners(const std::vector<int>& identities) {
  const auto n = static_cast<int64_t>(identities.size());
  std::vector<int64_t> out(n);
  for (int64_t i = 0; i < n; ++i) {
    int64_t k = 1;
    while (k < n && identities[(i + k) % n] == identities[i]) ++k;
    if (k == n) throw std::invalid_argument("foreign_partners: only one identity present");
    out[i] = (i + k) % n;
  }
  return out;
}

ToySplits toy_splits(int identities) {
  if (identities < 3) throw std::invalid_argument("toy splits need at least 3 identities");
  const int n_train = std::max(1, static_cast<int>(std::lround(0.72 * identities)));
  const int n_val = std::max(1, static_cast<int>(std::lround(0.14 * identities)));
  ToySplits out;
  for (int i = 0; i < identities; ++i) {
    (i < n_train ? out.train : i < n_train + n_val ? out.val : out.test).push_back(i);
  }
  if (out.test.empty()) throw std::invalid_argument("toy splits: test split is empty");
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + std::string(name));
}

std::vector<ManifestEntry> DatasetManifest::of(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [&](const auto& e) { return e.split == split; });
  return out;
}

std::vector<std::string> DatasetManifest::identities(Split split) const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.split == split) ids.insert(e.identity);
  }
  return {ids.begin(), ids.end()};
}

void DatasetManifest::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "path,identity,split\n";
  for (const auto& e : entries) out << e.path.string() << ',' << e.identity << ',' << to_string(e.split) << '\n';
}

DatasetManifest DatasetManifest::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.size() < 2) throw std::invalid_argument("malformed manifest row: " + line);
    ManifestEntry e;
    e.path = cols[0];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    e.identity = cols[1];
    if (cols.size() > 2) e.split = parse_split(cols[2]);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<Split> split_identities(const std::vector<std::string>& identities, uint64_t seed) {
  std::vector<size_t> order(identities.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<uint64_t> keys;
  for (const auto& id : identities) keys.push_back(sha256_prefix64(std::to_string(seed) + ":" + id));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : identities[a] < identities[b];
  });
  const size_t n = identities.size();
  const auto n_train = static_cast<size_t>(std::lround(0.72 * static_cast<double>(n)));
  const auto n_val = static_cast<size_t>(std::lround(0.14 * static_cast<double>(n)));
  std::vector<Split> out(n, Split::test);
  for (size_t rank = 0; rank < n; ++rank) {
    out[order[rank]] = rank < n_train ? Split::train : rank < n_train + n_val ? Split::val : Split::test;
  }
  return out;
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

DatasetManifest ingest(const std::filesystem::path& path, uint64_t seed) {
  DatasetManifest manifest;
  if (std::filesystem::is_regular_file(path)) {
    manifest = DatasetManifest::load_csv(path);
  } else if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> folders;
    for (const auto& d : std::filesystem::directory_iterator(path)) {
      if (d.is_directory()) folders.push_back(d.path());
    }
    std::sort(folders.begin(), folders.end());
    for (const auto& folder : folders) {
      std::vector<std::filesystem::path> files;
      for (const auto& f : std::filesystem::directory_iterator(folder)) {
        if (f.is_regular_file() && is_image_file(f.path())) files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) manifest.entries.push_back({f, folder.filename().string(), Split::train});
    }
  } else {
    throw std::invalid_argument("dataset path does not exist: " + path.string());
  }

  std::vector<ManifestEntry> readable;
  for (auto& e : manifest.entries) {
    cv::Mat probe = cv::imread(e.path.string(), cv::IMREAD_COLOR);
    if (probe.empty()) {
      std::cerr << "warning: skipping unreadable image " << e.path << "\n";
      continue;
    }
    readable.push_back(std::move(e));
  }
  manifest.entries = std::move(readable);
  if (manifest.entries.empty()) throw std::invalid_argument("dataset is empty: " + path.string());

  std::vector<std::string> ids;
  std::map<std::string, size_t> index;
  for (const auto& e : manifest.entries) {
    if (index.emplace(e.identity, ids.size()).second) ids.push_back(e.identity);
  }
  const auto splits = split_identities(ids, seed);
  for (auto& e : manifest.entries) e.split = splits[index.at(e.identity)];
  return manifest;
}

torch::Tensor read_image(const std::filesystem::path& path, int64_t image_size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  const int side = std::min(bgr.rows, bgr.cols);
  cv::Mat crop = bgr(cv::Rect((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side));
  cv::Mat resized;
  if (side != image_size) {
    const auto size = static_cast<int>(image_size);
    cv::resize(crop, resized, cv::Size(size, size), 0, 0,
               side > image_size ? cv::INTER_AREA : cv::INTER_LINEAR);
  } else {
    resized = crop.clone();
  }
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {image_size, image_size, 3}, torch::kUInt8).clone();
  return from_uint8(t.permute({2, 0, 1}).contiguous());
}

void write_png(const torch::Tensor& image, const std::filesystem::path& path) {
  require_image(image, "write_png");
  auto codes = to_uint8(image.dim() == 4 ? image[0] : image).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(codes.size(0)), static_cast<int>(codes.size(1)), CV_8UC3,
              codes.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write " + path.string());
}

FaceSet load_split(const DatasetManifest& manifest, Split split, int64_t image_size) {
  const auto entries = manifest.of(split);
  if (entries.empty()) throw std::invalid_argument("split '" + to_string(split) + "' is empty");
  std::map<std::string, int> labels;
  FaceSet set;
  std::vector<torch::Tensor> images;
  for (const auto& e : entries) {
    images.push_back(read_image(e.path, image_size));
    const auto label = labels.emplace(e.identity, static_cast<int>(labels.size())).first->second;
    set.identities.push_back(label);
    set.landmarks.push_back(Landmarks::canonical(image_size));
    set.names.push_back(e.identity + "/" + e.path.filename().string());
  }
  set.images = torch::stack(images);
  return set;
}

}  // namespace shield
