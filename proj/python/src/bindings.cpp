#include "shield/config.hpp"
#include "shield/distortions.hpp"
#include "shield/message.hpp"
#include "shield/metrics.hpp"
#include "shield/model.hpp"
#include "shield/tensor_ops.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <random>

namespace py = pybind11;
using namespace shield;

namespace {

using ImageArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

// HxWx3 uint8 RGB -> 3xHxW float in [-1, 1].
torch::Tensor from_array(const ImageArray& image) {
  if (image.ndim() != 3 || image.shape(2) != 3) {
    throw std::invalid_argument("expected an HxWx3 uint8 RGB array");
  }
  auto codes = torch::empty({image.shape(0), image.shape(1), 3}, torch::kUInt8);
  std::memcpy(codes.data_ptr<uint8_t>(), image.data(), static_cast<size_t>(image.size()));
  return from_uint8(codes.permute({2, 0, 1}));
}

ImageArray to_array(const torch::Tensor& image) {
  auto codes = to_uint8(image.detach()).permute({1, 2, 0}).contiguous();
  ImageArray out({codes.size(0), codes.size(1), int64_t{3}});
  std::memcpy(out.mutable_data(), codes.data_ptr<uint8_t>(), static_cast<size_t>(codes.numel()));
  return out;
}

class PyModel {
 public:
  explicit PyModel(const std::string& path) : model_(IntegrityModel::load(path, &meta_)) {
    model_.train(false);
  }

  int64_t image_size() const { return model_.config().image_size; }
  int64_t message_bits() const { return model_.config().message_bits; }
  int64_t step() const { return meta_.step; }
  std::string config_text() const { return meta_.config_text; }

  ImageArray embed(const ImageArray& image, const std::string& hex) {
    auto message = Message::from_hex(hex);
    if (message.size() != message_bits()) {
      throw std::invalid_argument("message has " + std::to_string(message.size()) +
                                  " bits, the checkpoint expects " +
                                  std::to_string(message_bits()));
    }
    torch::NoGradGuard no_grad;
    auto x = checked(image);
    auto out = model_.embed(x.unsqueeze(0), message.to_tensor().unsqueeze(0));
    return to_array(out[0].clamp(-1, 1));
  }

  std::string extract(const ImageArray& image) {
    torch::NoGradGuard no_grad;
    auto logits = model_.extract(checked(image).unsqueeze(0));
    return Message::from_logits(logits)[0].to_hex();
  }

 private:
  torch::Tensor checked(const ImageArray& image) const {
    auto x = from_array(image);
    if (x.size(1) != image_size() || x.size(2) != image_size()) {
      throw std::invalid_argument("image must be " + std::to_string(image_size()) + "x" +
                                  std::to_string(image_size()));
    }
    return x;
  }

  CheckpointMeta meta_;
  IntegrityModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Face-conditioned semi-fragile watermarking";
  torch::set_num_threads(1);

  m.def("default_config", [] { return TrainConfig().to_text(); },
        "Default training configuration as key = value text.");
  m.def("normalize_config", [](const std::string& text) { return TrainConfig::parse(text).to_text(); },
        py::arg("text"), "Parse and re-render a configuration; raises ValueError when invalid.");
  m.def("config_digest", [](const std::string& text) { return TrainConfig::parse(text).digest(); },
        py::arg("text"));

  m.def("random_message", [](int64_t bits, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Message::random(bits, rng).to_hex();
  }, py::arg("bits"), py::arg("seed") = 0);
  m.def("bit_error_rate", [](const std::string& a, const std::string& b) {
    return bit_error_rate(Message::from_hex(a), Message::from_hex(b));
  }, py::arg("a"), py::arg("b"));
  m.def("fake_probability", &fake_probability, py::arg("ber"), py::arg("tau"));

  m.def("verify", [](double ber, double tau) {
    auto r = verify_ber(ber, tau);
    return py::dict(py::arg("ber") = r.ber, py::arg("p_fake") = r.p_fake,
                    py::arg("verdict") = to_string(r.verdict), py::arg("tau") = r.tau);
  }, py::arg("ber"), py::arg("tau"));

  m.def("calibrate_black_box", [](const std::vector<double>& bers, double safety) {
    return calibrate_black_box(bers, safety).tau;
  }, py::arg("robust_bers"), py::arg("safety") = 0.0);
  m.def("calibrate_white_box", [](const std::vector<double>& real, const std::vector<double>& fake) {
    return calibrate_white_box(real, fake).tau;
  }, py::arg("real_bers"), py::arg("fake_bers"));

  m.def("detection_metrics", [](const std::vector<double>& p_fake, const std::vector<bool>& fake) {
    if (p_fake.size() != fake.size()) throw std::invalid_argument("length mismatch");
    std::vector<Scored> scored;
    for (size_t i = 0; i < p_fake.size(); ++i) scored.push_back({p_fake[i], fake[i]});
    auto d = detection_metrics(scored);
    py::object auc = d.auc ? py::object(py::float_(*d.auc)) : py::none();
    return py::dict(py::arg("acc") = d.acc, py::arg("auc") = auc);
  }, py::arg("p_fake"), py::arg("fake"));

  m.def("psnr", [](const ImageArray& a, const ImageArray& b) {
    return fidelity(from_array(a), from_array(b)).psnr;
  }, py::arg("reference"), py::arg("test"));
  m.def("ssim", [](const ImageArray& a, const ImageArray& b) {
    return fidelity(from_array(a), from_array(b)).ssim;
  }, py::arg("reference"), py::arg("test"));

  m.def("jpeg_approx", [](const ImageArray& image, int quality, double hard_rounding) {
    torch::NoGradGuard no_grad;
    return to_array(jpeg_approx(from_array(image), quality, hard_rounding).clamp(-1, 1));
  }, py::arg("image"), py::arg("quality"), py::arg("hard_rounding") = 0.0);
  m.def("jpeg_compress", [](const ImageArray& image, int quality) {
    return to_array(jpeg_compress(from_array(image), quality));
  }, py::arg("image"), py::arg("quality"));
  m.def("gaussian_blur", [](const ImageArray& image, int kernel) {
    torch::NoGradGuard no_grad;
    return to_array(gaussian_blur(from_array(image), kernel));
  }, py::arg("image"), py::arg("kernel"));

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("image_size", &PyModel::image_size)
      .def_property_readonly("message_bits", &PyModel::message_bits)
      .def_property_readonly("step", &PyModel::step)
      .def_property_readonly("config", &PyModel::config_text)
      .def("embed", &PyModel::embed, py::arg("image"), py::arg("message"),
           "Protect an HxWx3 uint8 image; returns the protected uint8 image.")
      .def("extract", &PyModel::extract, py::arg("image"),
           "Recover the message as hex using the image's own facial condition.");
}
