#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tap/checkpoint.hpp"
#include "tap/data.hpp"
#include "tap/errors.hpp"
#include "tap/eval.hpp"
#include "tap/kernels.hpp"
#include "tap/noise.hpp"
#include "tap/video_denoiser.hpp"

namespace py = pybind11;
using namespace tap;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  Tensor<T> t(s);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> s(t.shape().begin(), t.shape().end());
  Array<T> a(s);
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

Tensor<float> denoise(const VideoDenoiser& vd, const Array<float>& video) {
  const auto v = to_tensor(video);
  py::gil_scoped_release nogil;
  return vd.step_index() == 0 ? vd.denoise_image(v) : vd.denoise_video(v);
}

}  // namespace

PYBIND11_MODULE(_tapvd, m) {
  m.doc() = "Temporal plug-in video denoising core";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DataError> data_error(m, "DataError", PyExc_IOError);
  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    }
  });

  m.def("psnr", [](const Array<double>& a, const Array<double>& b, double peak) {
    return psnr(to_tensor(a), to_tensor(b), peak);
  }, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def("ssim", [](const Array<double>& a, const Array<double>& b, double peak) {
    return ssim(to_tensor(a), to_tensor(b), peak);
  }, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0, "C x H x W images; per-channel SSIM averaged");
  m.def("temporal_coherence", [](const Array<double>& v) { return temporal_coherence(to_tensor(v)); },
        py::arg("video"), "mean |frame[t+1] - frame[t]| of an N x C x H x W video");

  m.def("pack_raw_to_rgbg", [](const Array<float>& bayer, const std::string& cfa, double black, double white) {
    return to_array(pack_raw_to_rgbg(to_tensor(bayer), parse_cfa(cfa), black, white));
  }, py::arg("bayer"), py::arg("cfa"), py::arg("black_level"), py::arg("white_level"));
  m.def("unpack_rgbg_to_raw", [](const Array<float>& packed, const std::string& cfa, double black, double white) {
    return to_array(unpack_rgbg_to_raw(to_tensor(packed), parse_cfa(cfa), black, white));
  }, py::arg("packed"), py::arg("cfa"), py::arg("black_level"), py::arg("white_level"));

  m.def("add_noise", [](const Array<float>& clean, const std::string& descriptor, uint64_t seed) {
    const auto model = NoiseModel::parse(descriptor, seed);
    Rng rng(seed);
    auto x = to_tensor(clean);
    x += sample_noise(x, model, rng);
    return to_array(x);
  }, py::arg("clean"), py::arg("noise"), py::arg("seed") = 0,
        "clean + noise for a descriptor such as 'awgn:sigma=30/255' or 'pg:alpha=0.01,delta=0.005'");
  m.def("noise_descriptor", [](const std::string& d) { return NoiseModel::parse(d).descriptor(); },
        "canonical form of a noise descriptor");

  m.def("make_toy", [](const std::string& kind, int64_t size, int64_t frames, double shift_x, double shift_y,
                       bool subpixel, double sigma, uint64_t seed) {
    ToyOptions o;
    o.size = size;
    o.frames = frames;
    o.shift_x = shift_x;
    o.shift_y = shift_y;
    o.subpixel = subpixel;
    Rng rng(seed);
    const auto clip = make_toy_dataset(parse_toy_kind(kind), o, sigma, rng);
    return py::make_tuple(to_array(clip.clean.frames), to_array(clip.noisy.frames));
  }, py::arg("kind") = "translating", py::arg("size") = 64, py::arg("frames") = 12, py::arg("shift_x") = 1.0,
        py::arg("shift_y") = 0.0, py::arg("subpixel") = false, py::arg("sigma") = 30.0 / 255.0, py::arg("seed") = 0,
        "returns (clean, noisy), each N x 3 x size x size");

  m.def("read_png", [](const std::filesystem::path& p) { return to_array(read_png(p)); });
  m.def("write_png", [](const std::filesystem::path& p, const Array<float>& img, int bit_depth) {
    write_png(p, to_tensor(img), bit_depth);
  }, py::arg("path"), py::arg("image"), py::arg("bit_depth") = 8);
  m.def("load_srgb_video", [](const std::filesystem::path& d) { return to_array(load_srgb_video(d).frames); });

  m.def("deform_conv", [](const Array<double>& x, const Array<double>& offset, const Array<double>& weight,
                          const Array<double>& bias, int64_t pad, int64_t deform_groups) {
    const auto w = to_tensor(weight);
    return to_array(kernels::deform_conv_forward(to_tensor(x), to_tensor(offset), w, to_tensor(bias),
                                                 kernels::DeformGeom{w.dim(2), pad, deform_groups}));
  }, py::arg("x"), py::arg("offset"), py::arg("weight"), py::arg("bias"), py::arg("pad") = 1,
        py::arg("deform_groups") = 1, "deformable convolution v1 (stride 1), float64");

  py::class_<VideoDenoiser>(m, "VideoDenoiser")
      .def_static("load", [](const std::filesystem::path& p, int64_t frames, uint64_t seed) {
        return VideoDenoiser::load(p, frames, seed);
      }, py::arg("path"), py::arg("frames") = 5, py::arg("seed") = 0,
                  "image (step 0) or video checkpoint; frames applies to image checkpoints")
      .def_static("desk", [](int64_t frames, uint64_t seed, int64_t in_channels) {
        return VideoDenoiser(VideoDenoiserConfig::for_backbone(DenoiserConfig::desk(in_channels), frames), seed);
      }, py::arg("frames") = 5, py::arg("seed") = 0, py::arg("in_channels") = 3)
      .def_property_readonly("step_index", &VideoDenoiser::step_index)
      .def_property_readonly("frames", &VideoDenoiser::frames)
      .def("all_gates_zero", &VideoDenoiser::all_gates_zero)
      .def("set_tile", &VideoDenoiser::set_tile, py::arg("tile"), py::arg("overlap") = 16)
      .def("denoise", [](const VideoDenoiser& vd, const Array<float>& v) { return to_array(denoise(vd, v)); },
           py::arg("video"), "N x C x H x W; frame by frame at step 0")
      .def("denoise_image", [](const VideoDenoiser& vd, const Array<float>& v) {
        return to_array(vd.denoise_image(to_tensor(v)));
      })
      .def("denoise_window", [](const VideoDenoiser& vd, const Array<float>& w) {
        return to_array(vd.denoise_window(to_tensor(w)));
      })
      .def("save", [](const VideoDenoiser& vd, const std::filesystem::path& p) { vd.save(p); });
}
