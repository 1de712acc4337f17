#include "oga/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oga {

namespace {

constexpr double kDefaultEpsFloor = 1e-10;
constexpr double kWeightEta = 1e-6;

void validate_set(const GradientSet& grads) {
  if (grads.grads.empty()) {
    throw std::invalid_argument("gradient set is empty");
  }
  const Shape& s = grads.grads.front().shape;
  for (const Tensor& t : grads.grads) {
    if (!shape_eq(t.shape, s)) {
      throw std::invalid_argument("gradient shapes differ");
    }
    if (!t.all_finite()) {
      throw std::invalid_argument("non-finite gradient entries");
    }
  }
}

}  // namespace

void jacobi_eigen(const std::vector<double>& sym, int n,
                  std::vector<double>& eigvals, std::vector<double>& eigvecs) {
  if (n <= 0 || int(sym.size()) != n * n) {
    throw std::invalid_argument("jacobi_eigen: bad dimensions");
  }
  std::vector<double> a(sym);
  // Symmetrize defensively; Gram construction already is.
  for (int p = 0; p < n; ++p) {
    for (int q = p + 1; q < n; ++q) {
      double v = 0.5 * (a[size_t(p) * n + q] + a[size_t(q) * n + p]);
      a[size_t(p) * n + q] = v;
      a[size_t(q) * n + p] = v;
    }
  }
  std::vector<double> v(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[size_t(i) * n + i] = 1.0;

  double fro = 0.0;
  for (double x : a) fro += x * x;
  fro = std::sqrt(fro);
  // 1e-12 absolute, relaxed to the roundoff floor for badly scaled inputs.
  double tol = std::max(1e-12, fro * 1e-15);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q)
        off = std::max(off, std::fabs(a[size_t(p) * n + q]));
    if (off < tol) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[size_t(p) * n + q];
        if (std::fabs(apq) < tol * 1e-2) continue;
        double app = a[size_t(p) * n + p];
        double aqq = a[size_t(q) * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        // A <- J^T A J on rows/cols p and q.
        for (int k = 0; k < n; ++k) {
          double akp = a[size_t(k) * n + p];
          double akq = a[size_t(k) * n + q];
          a[size_t(k) * n + p] = c * akp - s * akq;
          a[size_t(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a[size_t(p) * n + k];
          double aqk = a[size_t(q) * n + k];
          a[size_t(p) * n + k] = c * apk - s * aqk;
          a[size_t(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v[size_t(k) * n + p];
          double vkq = v[size_t(k) * n + q];
          v[size_t(k) * n + p] = c * vkp - s * vkq;
          v[size_t(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return a[size_t(x) * n + x] > a[size_t(y) * n + y];
  });
  eigvals.assign(size_t(n), 0.0);
  eigvecs.assign(size_t(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    int src = order[size_t(k)];
    eigvals[size_t(k)] = a[size_t(src) * n + src];
    for (int i = 0; i < n; ++i) {
      eigvecs[size_t(i) * n + k] = v[size_t(i) * n + src];
    }
  }
}

std::vector<std::vector<double>> partition(const GradientSet& grads,
                                           int patch) {
  validate_set(grads);
  const Shape& s = grads.shape();
  if (s.size() != 3) {
    throw std::invalid_argument("partition: gradients must be (H,W,C)");
  }
  int h = s[0], w = s[1], c = s[2];
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument(
        "partition: texture dims " + shape_str(s) +
        " not divisible by patch " + std::to_string(patch));
  }
  int n = grads.count();
  int rows = h / patch, cols = w / patch;
  int64_t d = int64_t(patch) * patch * c;
  std::vector<std::vector<double>> out;
  out.reserve(size_t(rows) * cols);
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      std::vector<double> g_cols(size_t(d) * n);
      for (int k = 0; k < n; ++k) {
        const Tensor& t = grads.grads[size_t(k)];
        double* col = &g_cols[size_t(k) * d];
        int64_t i = 0;
        for (int y = pr * patch; y < (pr + 1) * patch; ++y) {
          const double* row = &t.data[(size_t(y) * w + size_t(pc) * patch) * c];
          for (int64_t j = 0; j < int64_t(patch) * c; ++j) col[i++] = row[j];
        }
      }
      out.push_back(std::move(g_cols));
    }
  }
  return out;
}

Tensor reassemble(const std::vector<std::vector<double>>& patches,
                  const Shape& texture_shape, int patch) {
  int h = texture_shape[0], w = texture_shape[1], c = texture_shape[2];
  int rows = h / patch, cols = w / patch;
  if (int(patches.size()) != rows * cols) {
    throw std::invalid_argument("reassemble: patch count mismatch");
  }
  Tensor out(texture_shape);
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      const std::vector<double>& p = patches[size_t(pr) * cols + pc];
      int64_t i = 0;
      for (int y = pr * patch; y < (pr + 1) * patch; ++y) {
        double* row = &out.data[(size_t(y) * w + size_t(pc) * patch) * c];
        for (int64_t j = 0; j < int64_t(patch) * c; ++j) row[j] = p[size_t(i++)];
      }
    }
  }
  return out;
}

namespace {

// Decomposition of a Gram matrix; align stays zero when every eigenvalue
// sits below the floor (dead patch).
GramDecomposition decompose(std::vector<double> gram, int n,
                            double eps_floor) {
  GramDecomposition d;
  d.n = n;
  d.gram = std::move(gram);
  jacobi_eigen(d.gram, n, d.eigvals, d.eigvecs);
  for (double& v : d.eigvals) v = std::max(v, 0.0);
  double sum = 0.0;
  for (double v : d.eigvals) sum += v;
  d.mean_eig = sum / double(n);
  double rel = eps_floor < 0.0 ? kDefaultEpsFloor : eps_floor;
  double floor_abs = rel * (d.eigvals.empty() ? 0.0 : d.eigvals[0]);
  d.null_flag.resize(size_t(n));
  bool any_live = false;
  for (int k = 0; k < n; ++k) {
    bool null =
        d.eigvals[size_t(k)] <= floor_abs || d.eigvals[size_t(k)] == 0.0;
    d.null_flag[size_t(k)] = null;
    any_live |= !null;
  }
  d.align.assign(size_t(n) * n, 0.0);
  if (any_live) {
    double scale = std::sqrt(d.mean_eig);
    for (int k = 0; k < n; ++k) {
      if (d.null_flag[size_t(k)]) continue;
      double inv_sqrt = scale / std::sqrt(d.eigvals[size_t(k)]);
      for (int i = 0; i < n; ++i) {
        double vik = d.eigvecs[size_t(i) * n + k] * inv_sqrt;
        for (int j = 0; j < n; ++j) {
          d.align[size_t(i) * n + j] += vik * d.eigvecs[size_t(j) * n + k];
        }
      }
    }
  }
  return d;
}

}  // namespace

GramDecomposition gram_eigen(const std::vector<double>& g_cols, int d, int n,
                             double eps_floor) {
  if (n < 2) throw std::invalid_argument("gram_eigen: need at least 2 models");
  if (int64_t(g_cols.size()) != int64_t(d) * n) {
    throw std::invalid_argument("gram_eigen: bad column matrix size");
  }
  for (double v : g_cols) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("gram_eigen: non-finite entries");
    }
  }
  std::vector<double> m(size_t(n) * n, 0.0);
  for (int a = 0; a < n; ++a) {
    for (int b = a; b < n; ++b) {
      const double* ca = &g_cols[size_t(a) * d];
      const double* cb = &g_cols[size_t(b) * d];
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += ca[i] * cb[i];
      m[size_t(a) * n + b] = acc;
      m[size_t(b) * n + a] = acc;
    }
  }
  return decompose(std::move(m), n, eps_floor);
}

std::vector<double> alignment_matrix(const GramDecomposition& d) {
  bool any_live = false;
  for (bool f : d.null_flag) any_live |= !f;
  if (!any_live) {
    throw std::runtime_error("alignment_matrix: vanished gradients");
  }
  return d.align;
}

FusionWeights task_weights(const std::vector<double>& losses) {
  if (losses.empty()) throw std::invalid_argument("task_weights: no losses");
  for (double l : losses) {
    if (!(l >= 0.0)) {
      throw std::invalid_argument("task_weights: losses must be >= 0");
    }
  }
  double total = 0.0;
  for (double l : losses) total += l + kWeightEta;
  FusionWeights w;
  w.omega.reserve(losses.size());
  for (double l : losses) w.omega.push_back((l + kWeightEta) / total);
  return w;
}

namespace {

// Fused patch = G * (B * omega); zero when no live eigen-direction remains.
void fuse_patch(const std::vector<double>& g_cols, int64_t d, int n,
                const std::vector<double>& omega, double eps_floor,
                std::vector<double>& out) {
  GramDecomposition dec = gram_eigen(g_cols, int(d), n, eps_floor);
  out.assign(size_t(d), 0.0);
  bool any_live = false;
  for (bool f : dec.null_flag) any_live |= !f;
  if (!any_live) return;
  std::vector<double> t(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      acc += dec.align[size_t(i) * n + k] * omega[size_t(k)];
    }
    t[size_t(i)] = acc;
  }
  for (int k = 0; k < n; ++k) {
    const double* col = &g_cols[size_t(k) * d];
    double tk = t[size_t(k)];
    if (tk == 0.0) continue;
    for (int64_t i = 0; i < d; ++i) out[size_t(i)] += col[i] * tk;
  }
}

void check_weights(const GradientSet& grads, const FusionWeights& weights) {
  if (int(weights.omega.size()) != grads.count()) {
    throw std::invalid_argument("weight count does not match model count");
  }
}

}  // namespace

Tensor oga_fuse(const GradientSet& grads, const FusionWeights& weights,
                int patch, double eps_floor) {
  validate_set(grads);
  check_weights(grads, weights);
  auto patches = partition(grads, patch);
  int n = grads.count();
  int64_t d = int64_t(patch) * patch * grads.shape()[2];
  std::vector<std::vector<double>> fused(patches.size());
  std::vector<double> buf;
  for (size_t p = 0; p < patches.size(); ++p) {
    fuse_patch(patches[p], d, n, weights.omega, eps_floor, buf);
    fused[p] = buf;
  }
  return reassemble(fused, grads.shape(), patch);
}

Tensor oga_fuse_global(const GradientSet& grads, const FusionWeights& weights,
                       double eps_floor) {
  validate_set(grads);
  check_weights(grads, weights);
  int n = grads.count();
  int64_t d = grads.grads.front().numel();
  std::vector<double> g_cols(size_t(d) * n);
  for (int k = 0; k < n; ++k) {
    std::copy(grads.grads[size_t(k)].data.begin(),
              grads.grads[size_t(k)].data.end(),
              g_cols.begin() + size_t(k) * d);
  }
  std::vector<double> out;
  fuse_patch(g_cols, d, n, weights.omega, eps_floor, out);
  Tensor fused(grads.shape());
  fused.data = std::move(out);
  return fused;
}

BaselineStrategy baseline_from_string(const std::string& name) {
  if (name == "equal-sum") return BaselineStrategy::kEqualSum;
  if (name == "norm-average") return BaselineStrategy::kNormAverage;
  if (name == "conflict-project") return BaselineStrategy::kConflictProject;
  throw std::invalid_argument("unknown fusion strategy '" + name + "'");
}

Tensor baseline_fuse(const GradientSet& grads, const FusionWeights& weights,
                     BaselineStrategy strategy) {
  validate_set(grads);
  check_weights(grads, weights);
  int n = grads.count();
  int64_t numel = grads.grads.front().numel();
  Tensor out(grads.shape());
  switch (strategy) {
    case BaselineStrategy::kEqualSum: {
      for (int k = 0; k < n; ++k) {
        double wk = weights.omega[size_t(k)];
        const Tensor& gk = grads.grads[size_t(k)];
        for (int64_t i = 0; i < numel; ++i) {
          out.data[size_t(i)] += wk * gk.data[size_t(i)];
        }
      }
      break;
    }
    case BaselineStrategy::kNormAverage: {
      std::vector<double> norms(size_t(n), 0.0);
      double mean_norm = 0.0;
      int live = 0;
      for (int k = 0; k < n; ++k) {
        norms[size_t(k)] = grads.grads[size_t(k)].norm();
        if (norms[size_t(k)] >= 1e-12) {
          mean_norm += norms[size_t(k)];
          ++live;
        }
      }
      if (live == 0) return out;
      mean_norm /= double(live);
      for (int k = 0; k < n; ++k) {
        if (norms[size_t(k)] < 1e-12) continue;  // skipped model
        double scale = weights.omega[size_t(k)] * mean_norm / norms[size_t(k)];
        const Tensor& gk = grads.grads[size_t(k)];
        for (int64_t i = 0; i < numel; ++i) {
          out.data[size_t(i)] += scale * gk.data[size_t(i)];
        }
      }
      break;
    }
    case BaselineStrategy::kConflictProject: {
      for (int k = 0; k < n; ++k) {
        Tensor mean_other(grads.shape());
        for (int j = 0; j < n; ++j) {
          if (j == k) continue;
          const Tensor& gj = grads.grads[size_t(j)];
          for (int64_t i = 0; i < numel; ++i) {
            mean_other.data[size_t(i)] += gj.data[size_t(i)] / double(n - 1);
          }
        }
        const Tensor& gk = grads.grads[size_t(k)];
        double num = dot(gk, mean_other);
        double den = dot(mean_other, mean_other);
        double proj = (num < 0.0 && den > 0.0) ? num / den : 0.0;
        double wk = weights.omega[size_t(k)];
        for (int64_t i = 0; i < numel; ++i) {
          out.data[size_t(i)] +=
              wk * (gk.data[size_t(i)] - proj * mean_other.data[size_t(i)]);
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace oga
