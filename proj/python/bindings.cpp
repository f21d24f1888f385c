// Python bindings for the core operations: schedules, flow matching, masked
// text diffusion, metrics, synthetic data, and checkpointed joint sampling.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dualtsr/checkpoint.hpp"
#include "dualtsr/evaluate.hpp"
#include "dualtsr/image.hpp"
#include "dualtsr/metrics.hpp"
#include "dualtsr/sampler.hpp"
#include "dualtsr/schedule.hpp"
#include "dualtsr/synthdata.hpp"
#include "dualtsr/text.hpp"

namespace py = pybind11;
using namespace dualtsr;

namespace {

ImageGrid grid_from_array(const py::array_t<float, py::array::c_style |
                                                       py::array::forcecast>& a) {
    if (a.ndim() != 3) throw std::invalid_argument("expected (h, w, c) array");
    ImageGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + g.size(), g.data.begin());
    return g;
}

py::array_t<float> grid_to_array(const ImageGrid& g) {
    py::array_t<float> a({g.h, g.w, g.c});
    std::copy(g.data.begin(), g.data.end(), a.mutable_data());
    return a;
}

}  // namespace

PYBIND11_MODULE(_dualtsr, m) {
    m.doc() = "dual-diffusion text super-resolution core";

    // Schedule.
    m.def("log_linear_alpha", &schedule::log_linear_alpha);
    m.def("nelbo_weight", [](double t, double delta) {
        return schedule::nelbo_weight(schedule::log_linear_schedule(), t, delta);
    });
    m.def("stratified_timesteps", [](int k, double delta, double u) {
        return schedule::stratified_timesteps(k, delta, u).values;
    });

    // Flow matching.
    m.def("interpolate", [](py::array_t<float> x0, py::array_t<float> x1, double t) {
        return grid_to_array(
            imageflow::interpolate(grid_from_array(x0), grid_from_array(x1), t));
    });
    m.def("velocity_target", [](py::array_t<float> x0, py::array_t<float> x1) {
        return grid_to_array(
            imageflow::velocity_target(grid_from_array(x0), grid_from_array(x1)));
    });
    m.def("cfm_loss", [](py::array_t<float> v, py::array_t<float> u) {
        return imageflow::cfm_loss(grid_from_array(v), grid_from_array(u));
    });
    m.def("euler_step",
          [](py::array_t<float> x, py::array_t<float> v, double t, double s) {
              return grid_to_array(imageflow::euler_step(grid_from_array(x),
                                                         grid_from_array(v), t, s));
          });

    // Masked text diffusion.
    m.def("forward_mask",
          [](const std::vector<int>& ids, int vocab, double t, std::uint64_t seed) {
              textdiff::TokenSequence x{ids, vocab};
              Rng rng(seed);
              return textdiff::forward_mask(x, t, schedule::log_linear_schedule(),
                                            rng)
                  .ids;
          });
    m.def("masked_cross_entropy",
          [](const std::vector<float>& probs, int vocab,
             const std::vector<int>& clean, const std::vector<int>& corrupted) {
              textdiff::TextPosterior p;
              p.length = static_cast<int>(clean.size());
              p.vocab = vocab;
              p.probs = probs;
              return textdiff::masked_cross_entropy(p, {clean, vocab},
                                                    {corrupted, vocab});
          });

    // Metrics.
    m.def("edit_distance", &metrics::edit_distance);
    m.def("ned", &metrics::ned);
    m.def("accuracy", &metrics::accuracy);
    m.def("psnr", [](py::array_t<float> a, py::array_t<float> b) {
        return metrics::psnr(grid_from_array(a), grid_from_array(b));
    });

    // Synthetic data.
    m.attr("CHARSET") = std::string(synthdata::kCharset);
    m.def("encode_text", [](const std::string& s, int length) {
        return synthdata::encode_text(s, length).ids;
    });
    m.def("decode_text", [](const std::vector<int>& ids) {
        return synthdata::decode_text({ids, synthdata::kVocab});
    });
    m.def("make_dataset",
          [](int count, std::uint64_t seed, const std::string& out_dir,
             double test_fraction) {
              const auto p = synthdata::make_dataset(
                  count, synthdata::RenderSpec{}, synthdata::DegradeSpec{}, seed,
                  out_dir, test_fraction);
              return std::make_pair(p.train_manifest, p.test_manifest);
          },
          py::arg("count"), py::arg("seed"), py::arg("out_dir"),
          py::arg("test_fraction") = 0.1);
    m.def("read_ppm",
          [](const std::string& path) { return grid_to_array(synthdata::read_ppm(path)); });
    m.def("write_ppm", [](py::array_t<float> img, const std::string& path) {
        synthdata::write_ppm(grid_from_array(img), path);
    });
    m.def("bicubic_resize",
          [](py::array_t<float> img, int out_h, int out_w) {
              return grid_to_array(
                  synthdata::bicubic_resize(grid_from_array(img), out_h, out_w));
          });

    // Checkpointed joint inference.
    m.def("sample_from_checkpoint",
          [](const std::string& ckpt_path, const std::string& lr_path, int steps,
             double w, std::uint64_t seed) {
              auto ckpt = checkpoint::load(ckpt_path);
              model::Model<float> mdl(ckpt.config);
              mdl.params() = ckpt.ema_params;
              auto [sr, tokens] = sampler::sample_with_model(
                  mdl, synthdata::read_ppm(lr_path), steps, w, seed);
              return std::make_pair(grid_to_array(sr),
                                    synthdata::decode_text(tokens));
          },
          py::arg("checkpoint"), py::arg("lr_path"), py::arg("steps") = 4,
          py::arg("w") = 1.0, py::arg("seed") = 0);
}
