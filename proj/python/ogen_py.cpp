// Python bindings for the core operations. Matrices cross the boundary as
// numpy arrays in the library's column layout (d x n).

#include <numeric>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ogen/embedding_store.hpp"
#include "ogen/generator.hpp"
#include "ogen/knn_retrieval.hpp"
#include "ogen/distillation.hpp"
#include "ogen/trainer.hpp"

namespace py = pybind11;
using namespace ogen;

namespace {

NeighborContext make_context(const Vec& conditioning, const Mat& neighbor_embeddings, const Mat& support_features) {
  NeighborContext ctx;
  ctx.conditioning = conditioning;
  ctx.neighbor_embeddings = neighbor_embeddings;
  ctx.support_features = support_features;
  ctx.neighbors.resize(neighbor_embeddings.cols());
  std::iota(ctx.neighbors.begin(), ctx.neighbors.end(), 0);
  ctx.sample_ids.assign(neighbor_embeddings.cols(), 0);
  return ctx;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "OGEN core bindings";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", validation.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("num_classes", &SynthConfig::num_classes)
      .def_readwrite("dim", &SynthConfig::dim)
      .def_readwrite("per_class", &SynthConfig::per_class)
      .def_readwrite("image_noise", &SynthConfig::image_noise)
      .def_readwrite("text_noise", &SynthConfig::text_noise)
      .def_readwrite("base_fraction", &SynthConfig::base_fraction)
      .def_readwrite("groups", &SynthConfig::groups)
      .def_readwrite("group_spread", &SynthConfig::group_spread)
      .def_readwrite("seed", &SynthConfig::seed);

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def_readonly("dim", &EmbeddingSet::dim)
      .def_readonly("class_names", &EmbeddingSet::class_names)
      .def_property_readonly("class_embeddings",
                             [](const EmbeddingSet& s) -> Mat { return s.class_embeddings.cast<double>(); })
      .def("image_features", [](const EmbeddingSet& s, int c) -> Mat { return s.image_features.at(c).cast<double>(); })
      .def_property_readonly("base_classes", [](const EmbeddingSet& s) { return s.split.base; })
      .def_property_readonly("new_classes", [](const EmbeddingSet& s) { return s.split.new_classes; })
      .def_property_readonly("num_classes", &EmbeddingSet::num_classes)
      .def("__eq__", &EmbeddingSet::operator==);

  m.def("make_synthetic", &make_synthetic, py::arg("config") = SynthConfig{});
  m.def("load_embeddings", &load_embeddings, py::arg("path"));
  m.def("save_embeddings", &save_embeddings, py::arg("set"), py::arg("path"));
  m.def("nearest_centroid_accuracy", &nearest_centroid_accuracy);
  m.def("class_probabilities", &class_probabilities, py::arg("feature"), py::arg("class_matrix"), py::arg("tau"));

  m.def(
      "retrieve_knn",
      [](const Vec& q, const Mat& candidates, int k) { return retrieve_knn(q, candidates, k).indices; },
      py::arg("query"), py::arg("candidates"), py::arg("k"), "Top-k candidate columns by cosine similarity.");

  py::class_<GeneratorParams>(m, "GeneratorParams")
      .def_readonly("heads", &GeneratorParams::heads)
      .def_readonly("dim", &GeneratorParams::dim)
      .def_readonly("ffn_dim", &GeneratorParams::ffn_dim)
      .def_readwrite("w_q", &GeneratorParams::w_q)
      .def_readwrite("w_k", &GeneratorParams::w_k)
      .def_readwrite("w_v", &GeneratorParams::w_v)
      .def_readwrite("w_o", &GeneratorParams::w_o)
      .def_readwrite("ln_gain", &GeneratorParams::ln_gain)
      .def_readwrite("ln_bias", &GeneratorParams::ln_bias)
      .def_readwrite("ffn_w1", &GeneratorParams::ffn_w1)
      .def_readwrite("ffn_b1", &GeneratorParams::ffn_b1)
      .def_readwrite("ffn_w2", &GeneratorParams::ffn_w2)
      .def_readwrite("ffn_b2", &GeneratorParams::ffn_b2);
  m.def("init_params", &init_params, py::arg("heads"), py::arg("dim"), py::arg("ffn_dim"), py::arg("seed") = 0);
  m.def(
      "extrapolate_per_class",
      [](const Vec& w, const Mat& neighbor_embeddings, const Mat& supports, const GeneratorParams& p) -> Mat {
        return extrapolate_per_class(make_context(w, neighbor_embeddings, supports), w, p).features;
      },
      py::arg("conditioning"), py::arg("neighbor_embeddings"), py::arg("support_features"), py::arg("params"));
  m.def(
      "extrapolate_jointly",
      [](const Vec& w, const Mat& neighbor_embeddings, const Mat& supports, const GeneratorParams& p) -> Vec {
        return extrapolate_jointly(make_context(w, neighbor_embeddings, supports), w, p).features.col(0);
      },
      py::arg("conditioning"), py::arg("neighbor_embeddings"), py::arg("support_features"), py::arg("params"));
  m.def(
      "project_directly", [](const Vec& w, const GeneratorParams& p) -> Vec { return project_directly(w, p).features.col(0); },
      py::arg("conditioning"), py::arg("params"));

  m.def(
      "window_size",
      [](int t, int t_max, int m_min, int m_max) { return window_size(t, ScheduleConfig{m_min, m_max, t_max, 0.99}); },
      py::arg("t"), py::arg("t_max"), py::arg("m_min") = 2, py::arg("m_max") = 9);
  m.def("harmonic_mean", &harmonic_mean);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("k", &TrainConfig::k)
      .def_property(
          "scheme", [](const TrainConfig& c) { return to_string(c.scheme); },
          [](TrainConfig& c, const std::string& s) { c.scheme = parse_scheme(s); })
      .def_property(
          "distill", [](const TrainConfig& c) { return to_string(c.distill); },
          [](TrainConfig& c, const std::string& s) { c.distill = parse_distill(s); })
      .def_property(
          "neighbors", [](const TrainConfig& c) { return to_string(c.neighbors); },
          [](TrainConfig& c, const std::string& s) { c.neighbors = parse_neighbor_mode(s); })
      .def_readwrite("fixed_window", &TrainConfig::fixed_window)
      .def_readwrite("tau", &TrainConfig::tau)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("generator_learning_rate", &TrainConfig::generator_learning_rate)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("lambda_syn", &TrainConfig::lambda_syn)
      .def_readwrite("lambda_distill", &TrainConfig::lambda_distill)
      .def_readwrite("pseudo_unknown_fraction", &TrainConfig::pseudo_unknown_fraction)
      .def_readwrite("shots", &TrainConfig::shots)
      .def_readwrite("heads", &TrainConfig::heads)
      .def_readwrite("ffn_dim", &TrainConfig::ffn_dim)
      .def_readwrite("ema_alpha", &TrainConfig::ema_alpha)
      .def_readwrite("m_min", &TrainConfig::m_min)
      .def_readwrite("m_max", &TrainConfig::m_max)
      .def_readwrite("known_loss_base_only", &TrainConfig::known_loss_base_only)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("validate", [](const TrainConfig& c) { validate(c); });

  py::class_<EpochMetrics>(m, "EpochMetrics")
      .def_readonly("epoch", &EpochMetrics::epoch)
      .def_readonly("base_acc", &EpochMetrics::base_acc)
      .def_readonly("new_acc", &EpochMetrics::new_acc)
      .def_readonly("harmonic", &EpochMetrics::harmonic)
      .def_readonly("known_ce", &EpochMetrics::known_ce)
      .def_readonly("synth_ce", &EpochMetrics::synth_ce)
      .def_readonly("distill_mse", &EpochMetrics::distill_mse)
      .def_readonly("window", &EpochMetrics::window);

  py::class_<Accuracy>(m, "Accuracy")
      .def_readonly("base", &Accuracy::base)
      .def_readonly("new", &Accuracy::novel)
      .def_readonly("harmonic", &Accuracy::harmonic);
  m.def("evaluate", &evaluate, py::arg("base_embeddings"), py::arg("set"), py::arg("tau"), py::arg("shots"));

  m.def(
      "train",
      [](const EmbeddingSet& set, const TrainConfig& cfg) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(set, cfg);
        }
        py::dict out;
        out["params"] = r.params;
        out["embeddings"] = r.embeddings;
        out["metrics"] = r.metrics.epochs;
        out["warnings"] = r.metrics.warnings;
        return out;
      },
      py::arg("set"), py::arg("config") = TrainConfig{},
      "Train and return a dict with params, embeddings, per-epoch metrics and warnings.");
}
