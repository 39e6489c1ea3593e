#include "shield/evaluation.hpp"

#include "shield/tensor_ops.hpp"

#include "json.hpp"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace shield {

namespace {

constexpr int64_t kChunk = 32;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// Donor row for every image: nearest landmarks among other identities.
std::vector<int64_t> donors_for(const FaceSet& set) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < set.size(); ++i) {
    auto d = nearest_donor(set.landmarks[i], set.identities[i], set.landmarks, set.identities);
    if (!d) throw std::invalid_argument("manipulation needs at least two identities");
    out.push_back(*d);
  }
  return out;
}

}  // namespace

ProtectedSet protect(IntegrityModel& model, const FaceSet& covers, uint64_t seed) {
  torch::NoGradGuard no_grad;
  model.train(false);
  ProtectedSet out;
  out.covers = covers;
  std::mt19937_64 rng(seed);
  std::vector<Message> messages;
  for (int64_t i = 0; i < covers.size(); ++i) {
    messages.push_back(Message::random(model.config().message_bits, rng));
  }
  out.bits = stack_messages(messages);
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < covers.size(); s += kChunk) {
    const auto e = std::min(covers.size(), s + kChunk);
    parts.push_back(quantize_8bit(model.embed(covers.images.slice(0, s, e), out.bits.slice(0, s, e))));
  }
  out.watermarked = torch::cat(parts);
  return out;
}

std::vector<double> decode_bers(IntegrityModel& model, const torch::Tensor& images,
                                const torch::Tensor& bits) {
  return decode_bers_with(model, images, bits, images);
}

std::vector<double> decode_bers_with(IntegrityModel& model, const torch::Tensor& images,
                                     const torch::Tensor& bits,
                                     const torch::Tensor& condition_images) {
  torch::NoGradGuard no_grad;
  model.train(false);
  auto x = as_batch(images);
  auto c = as_batch(condition_images);
  auto b = bits.dim() == 1 ? bits.unsqueeze(0) : bits;
  std::vector<double> out;
  for (int64_t s = 0; s < x.size(0); s += kChunk) {
    const auto e = std::min(x.size(0), s + kChunk);
    auto cond = model.condition(c.slice(0, s, e));
    auto bers = bit_error_rates(model.decode(x.slice(0, s, e), cond), b.slice(0, s, e));
    auto v = to_vector(bers);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

double RobustnessTable::at(PerturbationKind kind, int level) const {
  return mean_ber.at(static_cast<size_t>(kind)).at(static_cast<size_t>(level));
}

RobustnessTable robustness_sweep(IntegrityModel& model, const ProtectedSet& set, uint64_t seed,
                                 const PerturbOptions& options) {
  RobustnessTable table;
  for (auto kind : kPerturbationKinds) {
    for (int level = 0; level <= kMaxPerturbationLevel; ++level) {
      std::mt19937_64 rng(seed * 1315423911ULL + static_cast<uint64_t>(kind) * 31 + level);
      auto perturbed = apply_level(set.watermarked, kind, level, rng, options);
      table.mean_ber[static_cast<size_t>(kind)][level] =
          mean_of(decode_bers(model, perturbed.clamp(-1, 1), set.bits));
    }
  }
  return table;
}

std::vector<double> random_perturbation_bers(IntegrityModel& model, const ProtectedSet& set,
                                             int lo, int hi, uint64_t seed,
                                             const PerturbOptions& options) {
  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> images;
  for (int64_t i = 0; i < set.size(); ++i) {
    const auto kind = kPerturbationKinds[std::uniform_int_distribution<size_t>(0, 4)(rng)];
    const int level = std::uniform_int_distribution<int>(lo, hi)(rng);
    images.push_back(apply_level(set.watermarked.slice(0, i, i + 1), kind, level, rng, options));
  }
  return decode_bers(model, torch::cat(images).clamp(-1, 1), set.bits);
}

namespace {

torch::Tensor manipulate_with(const ProtectedSet& set, int64_t row, int64_t donor,
                              const ManipulationSpec& spec) {
  auto image = set.watermarked[row];
  switch (spec.kind) {
    case ManipulationKind::condition_swap: return image;
    case ManipulationKind::blend_swap:
      return blend_swap(image, set.covers.landmarks[row], set.covers.images[donor],
                        set.covers.landmarks[donor], spec.strength);
    case ManipulationKind::mouth_replace:
      return mouth_replace(image, set.covers.images[donor], spec.strength);
    case ManipulationKind::attribute_shift:
      return attribute_shift(image, set.covers.landmarks[row], spec.strength);
  }
  throw std::invalid_argument("unknown manipulation");
}

}  // namespace

torch::Tensor manipulate(const ProtectedSet& set, int64_t row, const ManipulationSpec& spec) {
  return manipulate_with(set, row, donors_for(set.covers).at(row), spec);
}

std::vector<double> manipulation_bers(IntegrityModel& model, const ProtectedSet& set,
                                      const ManipulationSpec& spec) {
  const auto donors = donors_for(set.covers);
  if (spec.kind == ManipulationKind::condition_swap) {
    auto others = set.covers.images.index_select(0, torch::tensor(donors, torch::kLong));
    return decode_bers_with(model, set.watermarked, set.bits, others);
  }
  std::vector<torch::Tensor> images;
  for (int64_t i = 0; i < set.size(); ++i) images.push_back(manipulate_with(set, i, donors[i], spec));
  // Manipulated frames are published through the same 8-bit channel.
  return decode_bers(model, quantize_8bit(torch::stack(images)), set.bits);
}

const DetectionRow& EvaluationReport::row(ManipulationKind kind, Protocol protocol) const {
  for (const auto& r : detection) {
    if (r.kind == kind && r.protocol == protocol) return r;
  }
  throw std::out_of_range("no detection row for " + to_string(kind));
}

double EvaluationReport::manipulation_ber(ManipulationKind kind) const {
  for (const auto& [k, v] : manipulation_mean_ber) {
    if (k == kind) return v;
  }
  throw std::out_of_range("no manipulation result for " + to_string(kind));
}

namespace {

DetectionRow score(ManipulationKind kind, const ThresholdCalibration& cal,
                   const std::vector<double>& real, const std::vector<double>& fake) {
  std::vector<Scored> scored;
  for (double r : real) scored.push_back({fake_probability(r, cal.tau), false});
  for (double r : fake) scored.push_back({fake_probability(r, cal.tau), true});
  const auto m = detection_metrics(scored);
  DetectionRow row;
  row.kind = kind;
  row.protocol = cal.protocol;
  row.tau = cal.tau;
  row.acc = m.acc;
  row.auc = m.auc.value_or(std::nan(""));
  row.mean_real_ber = mean_of(real);
  row.mean_fake_ber = mean_of(fake);
  return row;
}

}  // namespace

EvaluationReport evaluate(IntegrityModel& model, const ProtectedSet& validation,
                          const ProtectedSet& test, const EvaluationOptions& options) {
  EvaluationReport report;
  report.fidelity = fidelity(test.covers.images, test.watermarked);
  const auto clean = decode_bers(model, test.watermarked, test.bits);
  report.clean_ber = mean_of(clean);
  report.robustness = robustness_sweep(model, test, options.seed, options.perturb);

  const auto robust = random_perturbation_bers(model, validation, kMaxPerturbationLevel,
                                               kMaxPerturbationLevel, options.seed + 1, options.perturb);
  std::ostringstream provenance;
  provenance << "black-box: " << validation.size()
             << " validation images, random level-5 perturbation, seed " << options.seed + 1;
  report.black_box = calibrate_black_box(robust, options.black_box_safety, provenance.str());
  const double tau_b = report.black_box.tau;
  for (int64_t i = 0; i < test.size(); ++i) {
    const auto v = verify_ber(clean[i], tau_b);
    report.samples.push_back({test.covers.names[i], "clean", clean[i], v.p_fake, v.verdict});
  }

  const auto real_test = random_perturbation_bers(model, test, 0, options.max_real_level,
                                                  options.seed + 2, options.perturb);
  const auto real_val = random_perturbation_bers(model, validation, 0, options.max_real_level,
                                                 options.seed + 3, options.perturb);
  report.black_box_false_positive_rate =
      static_cast<double>(std::count_if(real_test.begin(), real_test.end(),
                                        [&](double r) { return r > tau_b; })) /
      static_cast<double>(real_test.size());

  std::vector<double> pooled_fake;
  for (auto kind : options.manipulations) {
    const ManipulationSpec spec{kind, options.strength};
    const auto fake_test = manipulation_bers(model, test, spec);
    const auto fake_val = manipulation_bers(model, validation, spec);
    report.manipulation_mean_ber.emplace_back(kind, mean_of(fake_test));
    pooled_fake.insert(pooled_fake.end(), fake_test.begin(), fake_test.end());
    for (int64_t i = 0; i < test.size(); ++i) {
      const auto v = verify_ber(fake_test[i], tau_b);
      report.samples.push_back({test.covers.names[i], to_string(kind), fake_test[i], v.p_fake, v.verdict});
    }
    report.detection.push_back(score(kind, report.black_box, real_test, fake_test));
    const auto white = calibrate_white_box(real_val, fake_val,
                                           "white-box: validation " + to_string(kind));
    report.detection.push_back(score(kind, white, real_test, fake_test));
  }
  if (!pooled_fake.empty()) {
    report.pooled_black_box_auc =
        score(options.manipulations.front(), report.black_box, real_test, pooled_fake).auc;
  }
  return report;
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j;
  j["fidelity"] = {{"psnr", fidelity.psnr}, {"ssim", fidelity.ssim}};
  j["clean_ber"] = clean_ber;
  nlohmann::json rob;
  for (auto kind : kPerturbationKinds) {
    rob[to_string(kind)] = robustness.mean_ber[static_cast<size_t>(kind)];
  }
  j["robustness"] = rob;
  j["black_box"] = {{"tau", black_box.tau},
                    {"provenance", black_box.provenance},
                    {"false_positive_rate", black_box_false_positive_rate}};
  for (const auto& [kind, ber] : manipulation_mean_ber) j["manipulation_mean_ber"][to_string(kind)] = ber;
  for (const auto& r : detection) {
    j["detection"].push_back({{"manipulation", to_string(r.kind)},
                              {"protocol", to_string(r.protocol)},
                              {"tau", r.tau},
                              {"acc", r.acc},
                              {"auc", r.auc},
                              {"mean_real_ber", r.mean_real_ber},
                              {"mean_fake_ber", r.mean_fake_ber}});
  }
  if (pooled_black_box_auc) j["pooled_black_box_auc"] = *pooled_black_box_auc;
  return j.dump(2);
}

void write_report(const EvaluationReport& report, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  {
    std::ofstream out(directory / "report.json");
    out << report.to_json() << "\n";
  }
  {
    std::ofstream out(directory / "robustness.csv");
    out << "kind";
    for (int l = 0; l <= kMaxPerturbationLevel; ++l) out << ",level" << l;
    out << "\n" << std::setprecision(6);
    for (auto kind : kPerturbationKinds) {
      out << to_string(kind);
      for (int l = 0; l <= kMaxPerturbationLevel; ++l) out << ',' << report.robustness.at(kind, l);
      out << "\n";
    }
  }
  {
    std::ofstream out(directory / "detection.csv");
    out << "manipulation,protocol,tau,acc,auc,mean_real_ber,mean_fake_ber\n" << std::setprecision(6);
    for (const auto& r : report.detection) {
      out << to_string(r.kind) << ',' << to_string(r.protocol) << ',' << r.tau << ',' << r.acc
          << ',' << r.auc << ',' << r.mean_real_ber << ',' << r.mean_fake_ber << "\n";
    }
  }
  {
    std::ofstream out(directory / "fidelity.csv");
    out << "psnr,ssim\n" << std::setprecision(6) << report.fidelity.psnr << ','
        << report.fidelity.ssim << "\n";
  }
  {
    std::ofstream out(directory / "samples.csv");
    out << "image,kind,ber,p_fake,verdict\n" << std::setprecision(6);
    for (const auto& s : report.samples) {
      out << s.image << ',' << s.kind << ',' << s.ber << ',' << s.p_fake << ','
          << to_string(s.verdict) << "\n";
    }
  }
  plot_robustness(report.robustness, directory / "robustness.png");
}

namespace {

struct Canvas {
  cv::Mat img;
  cv::Rect area;
  double y_lo, y_hi, x_lo, x_hi;

  Canvas(double xl, double xh, double yl, double yh)
      : img(360, 540, CV_8UC3, cv::Scalar(255, 255, 255)),
        area(60, 20, 440, 290),
        y_lo(yl), y_hi(yh), x_lo(xl), x_hi(xh) {
    cv::rectangle(img, area, cv::Scalar(0, 0, 0));
    for (int i = 0; i <= 4; ++i) {
      const double v = y_lo + (y_hi - y_lo) * i / 4.0;
      const int y = to_y(v);
      cv::line(img, {area.x - 4, y}, {area.x, y}, cv::Scalar(0, 0, 0));
      std::ostringstream label;
      label << std::setprecision(3) << v;
      cv::putText(img, label.str(), {4, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(0, 0, 0));
    }
  }
  int to_x(double v) const { return area.x + static_cast<int>((v - x_lo) / (x_hi - x_lo) * area.width); }
  int to_y(double v) const {
    return area.y + area.height - static_cast<int>((v - y_lo) / (y_hi - y_lo) * area.height);
  }
  void line(const std::vector<double>& xs, const std::vector<double>& ys, const cv::Scalar& colour) {
    std::vector<cv::Point> pts;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (std::isfinite(ys[i])) pts.emplace_back(to_x(xs[i]), to_y(std::clamp(ys[i], y_lo, y_hi)));
    }
    if (pts.size() > 1) cv::polylines(img, pts, false, colour, 2, cv::LINE_AA);
  }
  void legend(int row, const std::string& text, const cv::Scalar& colour) {
    const int y = area.y + 14 + 16 * row;
    cv::line(img, {area.x + area.width + 6, y - 4}, {area.x + area.width + 20, y - 4}, colour, 2);
    cv::putText(img, text, {area.x + area.width + 22, y}, cv::FONT_HERSHEY_SIMPLEX, 0.3, cv::Scalar(0, 0, 0));
  }
  void save(const std::filesystem::path& path) const {
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
  }
};

const std::array<cv::Scalar, 6> kColours = {cv::Scalar(200, 60, 30), cv::Scalar(30, 140, 30),
                                            cv::Scalar(30, 30, 200), cv::Scalar(160, 30, 160),
                                            cv::Scalar(20, 150, 190), cv::Scalar(90, 90, 90)};

}  // namespace

void plot_robustness(const RobustnessTable& table, const std::filesystem::path& path) {
  Canvas canvas(0, kMaxPerturbationLevel, 0, 0.5);
  std::vector<double> levels;
  for (int l = 0; l <= kMaxPerturbationLevel; ++l) levels.push_back(l);
  for (auto kind : kPerturbationKinds) {
    const auto k = static_cast<size_t>(kind);
    std::vector<double> bers(table.mean_ber[k].begin(), table.mean_ber[k].end());
    canvas.line(levels, bers, kColours[k]);
    canvas.legend(static_cast<int>(k), to_string(kind), kColours[k]);
  }
  cv::putText(canvas.img, "BER vs perturbation level", {60, 340}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
              cv::Scalar(0, 0, 0));
  canvas.save(path);
}

void plot_losses(const std::filesystem::path& csv, const std::filesystem::path& path) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) names.push_back(col);
  }
  if (names.size() < 7) throw std::invalid_argument("not a training loss log: " + csv.string());
  std::vector<std::vector<double>> cols(names.size());
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (size_t c = 0; c < names.size() && std::getline(ss, cell, ','); ++c) cols[c].push_back(std::stod(cell));
  }
  if (cols[0].empty()) throw std::invalid_argument("empty training log: " + csv.string());
  double lo = 0, hi = 0;
  for (size_t c = 2; c <= 6; ++c) {
    for (double v : cols[c]) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  Canvas canvas(cols[0].front(), std::max(cols[0].back(), cols[0].front() + 1), lo, std::max(hi, lo + 1e-3));
  for (size_t c = 2; c <= 6; ++c) {
    canvas.line(cols[0], cols[c], kColours[c - 2]);
    canvas.legend(static_cast<int>(c - 2), names[c], kColours[c - 2]);
  }
  cv::putText(canvas.img, "training losses vs step", {60, 340}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
              cv::Scalar(0, 0, 0));
  canvas.save(path);
}

}  // namespace shield
