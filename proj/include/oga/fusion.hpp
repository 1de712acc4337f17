#pragma once

#include <string>
#include <vector>

#include "oga/tensor.hpp"

namespace oga {

/// Per-model gradients of the total loss w.r.t. the texture; all entries
/// share the texture's shape.
struct GradientSet {
  std::vector<Tensor> grads;

  int count() const { return int(grads.size()); }
  const Shape& shape() const { return grads.front().shape; }
};

/// Eigendecomposition of a patch Gram matrix plus the derived alignment
/// matrix. Eigenvalues are sorted descending and clamped at zero; entries
/// below the relative floor are flagged null and truncated in `align`.
struct GramDecomposition {
  int n = 0;
  std::vector<double> gram;     // n*n, row-major, symmetric
  std::vector<double> eigvecs;  // n*n, column k = eigenvector k
  std::vector<double> eigvals;  // n, descending
  std::vector<bool> null_flag;  // true where eigenvalue fell below the floor
  double mean_eig = 0.0;
  std::vector<double> align;    // n*n, symmetric PSD
};

struct FusionWeights {
  std::vector<double> omega;  // nonnegative, sums to 1
};

/// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix (row-major).
/// Rotates until the largest off-diagonal magnitude drops below 1e-12 (or
/// the roundoff floor for badly scaled inputs). Returns eigenvalues sorted
/// descending with matching eigenvector columns.
void jacobi_eigen(const std::vector<double>& sym, int n,
                  std::vector<double>& eigvals, std::vector<double>& eigvecs);

/// Splits texture-shaped gradients into per-patch d x N column matrices,
/// d = patch*patch*channels. Texture H and W must be divisible by `patch`.
/// Patches are ordered row-major over the patch grid; reassembly is exact.
std::vector<std::vector<double>> partition(const GradientSet& grads,
                                           int patch);

/// Writes per-patch fused vectors (length d, same patch order as
/// partition()) back into a texture-shaped tensor.
Tensor reassemble(const std::vector<std::vector<double>>& patches,
                  const Shape& texture_shape, int patch);

/// Gram matrix M = G^T G of a d x N column matrix followed by the Jacobi
/// decomposition and alignment matrix of the energy-reallocation rule.
/// `eps_floor` is relative to the largest eigenvalue; pass a negative value
/// for the 1e-10 default.
GramDecomposition gram_eigen(const std::vector<double>& g_cols, int d, int n,
                             double eps_floor = -1.0);

/// The alignment matrix sqrt(mean_eig) * V * S^{-1/2} * V^T with null
/// directions truncated to zero. Throws if every eigenvalue is null.
std::vector<double> alignment_matrix(const GramDecomposition& d);

/// Dynamic task weights: proportional to per-model loss with a small floor,
/// normalized to sum 1.
FusionWeights task_weights(const std::vector<double>& losses);

/// Patch-wise orthogonal-alignment fusion. Patches whose Gram is entirely
/// null contribute zeros. Returns the fused texture-shaped gradient.
Tensor oga_fuse(const GradientSet& grads, const FusionWeights& weights,
                int patch, double eps_floor = -1.0);

/// Whole-texture variant (no patch grid); used by the "no patch" ablation.
Tensor oga_fuse_global(const GradientSet& grads, const FusionWeights& weights,
                       double eps_floor = -1.0);

enum class BaselineStrategy { kEqualSum, kNormAverage, kConflictProject };

BaselineStrategy baseline_from_string(const std::string& name);

/// Reference fusion strategies for the comparison harness.
Tensor baseline_fuse(const GradientSet& grads, const FusionWeights& weights,
                     BaselineStrategy strategy);

}  // namespace oga
