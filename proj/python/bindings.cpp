#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "l2g/config.hpp"
#include "l2g/data.hpp"
#include "l2g/experiments.hpp"
#include "l2g/mapper.hpp"
#include "l2g/metrics.hpp"
#include "l2g/model.hpp"
#include "l2g/quantizer.hpp"
#include "l2g/sinkhorn.hpp"
#include "l2g/train.hpp"

namespace py = pybind11;
using namespace l2g;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const LabelArray& a) { return LabelMap(a.data(), a.data() + a.size()); }

LabelArray labels_array(const LabelMap& l, std::size_t h, std::size_t w) {
  LabelArray out({static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
  std::copy(l.begin(), l.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> mask_shape(const LabelArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("label maps must be 2-D");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
}

py::dict dataset_dict(const SegDataset& ds) {
  const auto n = static_cast<py::ssize_t>(ds.size());
  const auto c = static_cast<py::ssize_t>(ds.channels), h = static_cast<py::ssize_t>(ds.height),
             w = static_cast<py::ssize_t>(ds.width);
  Array images({n, c, h, w});
  LabelArray labels({n, h, w});
  double* ip = images.mutable_data();
  std::uint8_t* lp = labels.mutable_data();
  for (const SegSample& s : ds.samples) {
    ip = std::copy(s.image.data().begin(), s.image.data().end(), ip);
    lp = std::copy(s.labels.begin(), s.labels.end(), lp);
  }
  py::dict d;
  d["images"] = images;
  d["labels"] = labels;
  d["classes"] = ds.classes;
  d["seed"] = ds.seed;
  d["split"] = ds.split;
  return d;
}

SegDataset dataset_from(const Array& images, const LabelArray& labels, std::size_t classes) {
  if (images.ndim() != 4 || labels.ndim() != 3)
    throw std::invalid_argument("images must be [N, C, H, W] and labels [N, H, W]");
  SegDataset ds;
  ds.classes = classes;
  ds.channels = images.shape(1);
  ds.height = images.shape(2);
  ds.width = images.shape(3);
  if (labels.shape(0) != images.shape(0) || std::size_t(labels.shape(1)) != ds.height ||
      std::size_t(labels.shape(2)) != ds.width)
    throw std::invalid_argument("images and labels disagree in shape");
  const std::size_t per_image = ds.channels * ds.height * ds.width, per_map = ds.height * ds.width;
  for (py::ssize_t i = 0; i < images.shape(0); ++i) {
    SegSample s;
    s.image = Tensor({ds.channels, ds.height, ds.width},
                     std::vector<double>(images.data() + i * per_image, images.data() + (i + 1) * per_image));
    s.labels.assign(labels.data() + i * per_map, labels.data() + (i + 1) * per_map);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// Owns a trained or freshly initialised model.
class PyModel {
 public:
  explicit PyModel(SegModel m) : model_(std::make_unique<SegModel>(std::move(m))) {}

  static PyModel from_config(const std::string& json, std::uint64_t seed) {
    Rng rng(seed);
    return PyModel(SegModel(model_config_from_json(json), rng));
  }
  static PyModel load(const std::string& path) { return PyModel(restore_model(load_checkpoint(path))); }

  std::string config() const { return model_config_to_json(model_->config()); }

  py::dict forward(const Array& image) {
    Graph g;
    const ForwardResult r = model_->forward(g, to_tensor(image));
    py::list plans;
    for (const Var& p : r.plans) plans.append(to_array(p.value()));
    py::dict d;
    d["logits"] = to_array(r.logits.value());
    d["quant_loss"] = r.quant_loss.value().item();
    d["code_indices"] = r.code_indices;
    d["plans"] = plans;
    d["code_usage"] = r.diagnostics.code_usage;
    d["transport_residuals"] = r.diagnostics.transport_residuals;
    return d;
  }

  LabelArray predict(const Array& image) {
    const ModelConfig& c = model_->config();
    return labels_array(l2g::predict(*model_, to_tensor(image)), c.height, c.width);
  }

  py::dict evaluate(const Array& images, const LabelArray& labels, double pct) {
    const SegDataset ds = dataset_from(images, labels, model_->config().classes);
    const MetricReport r = evaluate_model(*model_, ds, pct, 1);
    py::dict d;
    d["mean_dsc"] = r.mean_dsc;
    d["mean_hd"] = r.mean_hd;
    d["class_dsc"] = r.class_dsc;
    d["class_hd"] = r.class_hd;
    return d;
  }

  py::dict parameters() const {
    py::dict d;
    for (const Parameter* p : std::as_const(*model_).parameters()) d[py::str(p->name)] = to_array(p->value);
    return d;
  }

 private:
  std::unique_ptr<SegModel> model_;
};

}  // namespace

PYBIND11_MODULE(_l2gnet, m) {
  m.doc() = "Optimal-transport bottleneck for segmentation: core operations";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<DatasetFormatError>(m, "DatasetFormatError", PyExc_IOError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);

  m.def(
      "sinkhorn",
      [](const Array& cost, const Array& a, const Array& b, double epsilon, int iterations) {
        const TransportPlan p = sinkhorn_solve({to_tensor(cost), to_tensor(a), to_tensor(b), epsilon, iterations});
        return py::make_tuple(to_array(p.plan), p.marginal_residual);
      },
      py::arg("cost"), py::arg("a"), py::arg("b"), py::arg("epsilon") = 0.1, py::arg("iterations") = 10,
      "Fixed-iteration log-domain Sinkhorn. Returns (plan, marginal_residual).");
  m.def(
      "sinkhorn_converge",
      [](const Array& cost, const Array& a, const Array& b, double epsilon, double tol, int max_iter) {
        const TransportPlan p =
            sinkhorn_converge({to_tensor(cost), to_tensor(a), to_tensor(b), epsilon, 1}, tol, max_iter);
        return py::make_tuple(to_array(p.plan), p.marginal_residual);
      },
      py::arg("cost"), py::arg("a"), py::arg("b"), py::arg("epsilon"), py::arg("tolerance") = 1e-9,
      py::arg("max_iterations") = 100000);
  m.def(
      "quantize",
      [](const Array& z, const Array& codes, double beta) {
        Codebook cb{Parameter("codes", to_tensor(codes))};
        const QuantizeResult r = quantize(to_tensor(z), cb, beta);
        return py::make_tuple(r.indices, to_array(r.z_dis), r.quant_loss);
      },
      py::arg("z"), py::arg("codes"), py::arg("beta") = 0.25,
      "Nearest-code quantisation. Returns (indices, z_dis, quant_loss).");
  m.def(
      "nystrom_embed",
      [](const Array& z, const Array& anchors, double bandwidth) {
        return to_array(nystrom_embed(to_tensor(z), NystromEmbedding::from_anchors(to_tensor(anchors), bandwidth)));
      },
      py::arg("z"), py::arg("anchors"), py::arg("bandwidth"));
  m.def("position_weights", [](std::size_t n, std::size_t t, double s) { return to_array(position_weights(n, t, s)); },
        py::arg("n"), py::arg("t"), py::arg("sigma_pos"));
  m.def(
      "ot_align",
      [](const Array& psi, const Array& ref, double epsilon, int iterations) {
        const TransportPlan p = ot_align(to_tensor(psi), to_tensor(ref), epsilon, iterations);
        return py::make_tuple(to_array(p.plan), p.marginal_residual);
      },
      py::arg("psi"), py::arg("ref"), py::arg("epsilon") = 0.1, py::arg("iterations") = 10);
  m.def(
      "embed",
      [](const Array& z, const Array& anchors, double bandwidth, const std::vector<Array>& refs, double sigma_pos,
         double epsilon, int iterations) {
        NystromEmbedding emb = NystromEmbedding::from_anchors(to_tensor(anchors), bandwidth);
        ReferenceSet set;
        for (std::size_t i = 0; i < refs.size(); ++i)
          set.references.emplace_back("ref." + std::to_string(i), to_tensor(refs[i]));
        set.sigma_pos = sigma_pos;
        set.epsilon = epsilon;
        set.iterations = iterations;
        Graph g;
        return to_array(embed_multi_ref(g.constant(to_tensor(z)), set, emb).embedding.value());
      },
      py::arg("z"), py::arg("anchors"), py::arg("bandwidth"), py::arg("references"), py::arg("sigma_pos") = 0.3,
      py::arg("epsilon") = 0.1, py::arg("iterations") = 10,
      "Multi-reference embedding of a code set, (q t) x k_a.");

  m.def(
      "gen_synthetic",
      [](std::size_t classes, std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed, double difficulty) {
        return dataset_dict(gen_synthetic(classes, count, h, w, seed, difficulty));
      },
      py::arg("classes"), py::arg("count"), py::arg("height"), py::arg("width"), py::arg("seed") = 0,
      py::arg("difficulty") = 1.0);
  m.def("load_dataset", [](const std::string& path) { return dataset_dict(load_dataset(path)); }, py::arg("path"));
  m.def(
      "save_dataset",
      [](const std::string& path, const Array& images, const LabelArray& labels, std::size_t classes,
         std::uint64_t seed) {
        SegDataset ds = dataset_from(images, labels, classes);
        ds.seed = seed;
        save_dataset(ds, path);
      },
      py::arg("path"), py::arg("images"), py::arg("labels"), py::arg("classes"), py::arg("seed") = 0);

  m.def(
      "dice",
      [](const LabelArray& pred, const LabelArray& gt, std::uint8_t cls) {
        if (mask_shape(pred) != mask_shape(gt)) throw std::invalid_argument("dice: shape mismatch");
        return dice(to_labels(pred), to_labels(gt), cls);
      },
      py::arg("pred"), py::arg("gt"), py::arg("cls"));
  m.def(
      "hausdorff",
      [](const LabelArray& pred, const LabelArray& gt, std::uint8_t cls, double pct) {
        const auto shape = mask_shape(pred);
        if (shape != mask_shape(gt)) throw std::invalid_argument("hausdorff: shape mismatch");
        return hausdorff(to_labels(pred), to_labels(gt), shape[0], shape[1], cls, pct);
      },
      py::arg("pred"), py::arg("gt"), py::arg("cls"), py::arg("percentile") = 95.0,
      "Percentile Hausdorff distance in pixels, None when either mask is empty.");

  m.def(
      "gradcheck",
      [](const std::string& scale, std::uint64_t seed, bool fault) {
        if (scale != "tiny" && scale != "small") throw std::invalid_argument("scale must be 'tiny' or 'small'");
        py::dict out;
        for (const GradCheckGroup& g :
             run_gradcheck_suite(scale == "tiny" ? GradCheckScale::kTiny : GradCheckScale::kSmall, seed, fault)) {
          py::dict d;
          d["passed"] = g.report.passed();
          d["worst"] = g.report.worst();
          out[py::str(g.group)] = d;
        }
        return out;
      },
      py::arg("scale") = "tiny", py::arg("seed") = 0, py::arg("inject_fault") = false);

  m.def(
      "default_model_config", [] { return model_config_to_json(ModelConfig{}); },
      "Default model configuration as JSON.");

  py::class_<PyModel>(m, "Model")
      .def_static("from_config", &PyModel::from_config, py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", &PyModel::load, py::arg("checkpoint"))
      .def_property_readonly("config", &PyModel::config)
      .def("forward", &PyModel::forward, py::arg("image"))
      .def("predict", &PyModel::predict, py::arg("image"))
      .def("evaluate", &PyModel::evaluate, py::arg("images"), py::arg("labels"), py::arg("percentile") = 95.0)
      .def("parameters", &PyModel::parameters);
}
