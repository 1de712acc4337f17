// Python surface over the core operations: rendering, losses, gradient
// fusion, similarity/selection and the attack loop.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oga/config.hpp"
#include "oga/fusion.hpp"
#include "oga/io.hpp"
#include "oga/losses.hpp"
#include "oga/models.hpp"
#include "oga/pretrain.hpp"
#include "oga/renderer.hpp"
#include "oga/rng.hpp"
#include "oga/scene.hpp"
#include "oga/similarity.hpp"
#include "oga/trainer.hpp"

namespace py = pybind11;
using namespace oga;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style |
                                                       py::array::forcecast>& a) {
  Tensor t;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) {
    t.shape.push_back(int(a.shape(d)));
  }
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

using NpArray =
    py::array_t<double, py::array::c_style | py::array::forcecast>;

GradientSet grads_from_list(const std::vector<NpArray>& arrays) {
  GradientSet gs;
  for (const auto& a : arrays) gs.grads.push_back(tensor_from_array(a));
  return gs;
}

FusionWeights weights_from_list(const std::vector<double>& w) {
  FusionWeights fw;
  fw.omega = w;
  return fw;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multi-model adversarial texture attack core";

  // --- rendering ---
  m.def(
      "render",
      [](const NpArray& texture, double azimuth, double elevation,
         double distance, double ambient, std::array<double, 3> light,
         int image_size, double offset_x, double offset_y) {
        Tensor tex = tensor_from_array(texture);
        Mesh mesh = Mesh::unit_cube(tex.shape[0], tex.shape[1]);
        Pose pose{azimuth, elevation, distance};
        Illumination illum{ambient, light};
        RenderOutput out = rasterize(mesh, tex, pose, illum, image_size,
                                     image_size, offset_x, offset_y);
        py::dict d;
        d["image"] = array_from_tensor(out.image);
        d["screen_mask"] = array_from_tensor(out.screen_mask);
        d["depth"] = array_from_tensor(out.depth);
        d["texel_visibility"] = array_from_tensor(out.texel_visibility);
        return d;
      },
      py::arg("texture"), py::arg("azimuth") = 30.0,
      py::arg("elevation") = 20.0, py::arg("distance") = 14.0,
      py::arg("ambient") = 0.8,
      py::arg("light") = std::array<double, 3>{0, 0, 1},
      py::arg("image_size") = 128, py::arg("offset_x") = 0.0,
      py::arg("offset_y") = 0.0,
      "Rasterize the textured cube; returns image, mask, depth, visibility.");

  m.def(
      "composite",
      [](const NpArray& render_img, const NpArray& background,
         const NpArray& mask) {
        return array_from_tensor(composite(tensor_from_array(render_img),
                                           tensor_from_array(background),
                                           tensor_from_array(mask)));
      },
      py::arg("render"), py::arg("background"), py::arg("mask"));

  // --- losses (values) ---
  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
    return iou(Box{a[0], a[1], a[2], a[3]}, Box{b[0], b[1], b[2], b[3]});
  });
  m.def("smooth_loss", [](const NpArray& texture) {
    Graph g;
    Var t = g.input("t", tensor_from_array(texture));
    return g.value(smooth_loss(g, t)).data[0];
  });
  m.def("segmentation_loss", [](const NpArray& prob, const NpArray& mask) {
    Graph g;
    Var p = g.input("p", tensor_from_array(prob));
    return g.value(segmentation_loss(g, p, tensor_from_array(mask))).data[0];
  });
  m.def("depth_loss", [](const NpArray& depth, const NpArray& mask) {
    Graph g;
    Var d = g.input("d", tensor_from_array(depth));
    return g.value(depth_loss(g, d, tensor_from_array(mask))).data[0];
  });
  m.def("detection_loss",
        [](const NpArray& confidences, const std::vector<bool>& hazardous) {
          Graph g;
          Var c = g.input("c", tensor_from_array(confidences));
          std::vector<char> hz(hazardous.begin(), hazardous.end());
          return g.value(detection_loss(g, c, hz)).data[0];
        });

  // --- fusion ---
  m.def(
      "oga_fuse",
      [](const std::vector<NpArray>& grads, const std::vector<double>& omega,
         int patch, double eps_floor) {
        return array_from_tensor(oga_fuse(grads_from_list(grads),
                                          weights_from_list(omega), patch,
                                          eps_floor));
      },
      py::arg("grads"), py::arg("omega"), py::arg("patch") = 16,
      py::arg("eps_floor") = -1.0,
      "Patch-wise orthogonal-alignment fusion of texture-shaped gradients.");
  m.def(
      "baseline_fuse",
      [](const std::vector<NpArray>& grads, const std::vector<double>& omega,
         const std::string& strategy) {
        return array_from_tensor(baseline_fuse(grads_from_list(grads),
                                               weights_from_list(omega),
                                               baseline_from_string(strategy)));
      },
      py::arg("grads"), py::arg("omega"), py::arg("strategy"));
  m.def("task_weights", [](const std::vector<double>& losses) {
    return task_weights(losses).omega;
  });
  m.def(
      "gram_eigen",
      [](const NpArray& g_cols, double eps_floor) {
        Tensor t = tensor_from_array(g_cols);
        if (t.rank() != 2) throw std::invalid_argument("expect (d,N)");
        const int d = t.shape[0], n = t.shape[1];
        // column-major columns for the core routine
        std::vector<double> cols(size_t(d) * n);
        for (int i = 0; i < d; ++i) {
          for (int k = 0; k < n; ++k) {
            cols[size_t(k) * d + i] = t.at2(i, k);
          }
        }
        GramDecomposition dec = gram_eigen(cols, d, n, eps_floor);
        py::dict out;
        out["gram"] = py::array_t<double>({n, n}, dec.gram.data());
        out["eigvals"] = py::array_t<double>({n}, dec.eigvals.data());
        out["eigvecs"] = py::array_t<double>({n, n}, dec.eigvecs.data());
        out["mean_eig"] = dec.mean_eig;
        out["align"] = py::array_t<double>({n, n}, dec.align.data());
        return out;
      },
      py::arg("g_cols"), py::arg("eps_floor") = -1.0);
  m.def("jacobi_eigen", [](const NpArray& sym) {
    Tensor t = tensor_from_array(sym);
    if (t.rank() != 2 || t.shape[0] != t.shape[1]) {
      throw std::invalid_argument("expect a square matrix");
    }
    const int n = t.shape[0];
    std::vector<double> vals, vecs;
    jacobi_eigen(t.data, n, vals, vecs);
    return py::make_tuple(py::array_t<double>({n}, vals.data()),
                          py::array_t<double>({n, n}, vecs.data()));
  });

  // --- similarity / selection ---
  m.def(
      "greedy_select",
      [](const NpArray& matrix, int n) {
        Tensor t = tensor_from_array(matrix);
        SimilarityMatrix m;
        m.n = t.shape[0];
        m.entries = t.data;
        return greedy_select(m, n);
      },
      py::arg("matrix"), py::arg("n"));

  // --- trainer pieces ---
  m.def(
      "std_mask",
      [](int h, int w, double p, int block, uint64_t seed) {
        Rng rng(seed);
        return array_from_tensor(std_mask(h, w, p, block, rng));
      },
      py::arg("h"), py::arg("w"), py::arg("p"), py::arg("block") = 8,
      py::arg("seed") = 42);
  m.def("apply_vtg", [](const NpArray& grad, const NpArray& visibility) {
    return array_from_tensor(
        apply_vtg(tensor_from_array(grad), tensor_from_array(visibility)));
  });

  // --- file formats ---
  m.def("read_ogaf", [](const std::string& path) {
    return array_from_tensor(read_ogaf(path));
  });
  m.def("write_ogaf", [](const std::string& path, const NpArray& tensor) {
    write_ogaf(path, tensor_from_array(tensor));
  });

  // --- config-driven pipeline (mirrors the CLI) ---
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        // re-exported for driving full runs from python
        extern int run_cli_shim(const std::vector<std::string>&);
        return run_cli_shim(args);
      },
      py::arg("args"));

  m.attr("__version__") = "0.1.0";
}

// Bridged separately so the binding above has no direct CLI11 dependency.
#include "oga/cli.hpp"
int run_cli_shim(const std::vector<std::string>& args) {
  return oga::run_cli(args);
}
