#pragma once

// Structure information learning: turns the cls-to-patch attention of one
// layer into a structure feature for the cls token.
//
//   A      = sum over heads of the cls row's attention to each patch
//   A_new  = A where A > mean(A), else 0
//   ref    = argmax A (lowest index on ties)
//   (rho, theta) polar coordinates of every patch around ref
//   X      = [rho, cos 2 pi theta, sin 2 pi theta, A_new]      (N x 4)
//   Adj    = A_new A_new^T
//   S      = relu(Adj relu(Adj X W1) W2), row ref
//
// The threshold mask and the choice of ref are constants for
// differentiation; gradients reach the attention through the A_new column
// of X and through Adj.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "simtrans/autodiff.hpp"
#include "simtrans/tensor.hpp"
#include "simtrans/vit.hpp"

namespace simtrans::sil {

inline constexpr std::size_t kNodeFeatureDim = 4;

struct FilteredAttention {
  std::vector<double> attention;  // A
  double mean = 0.0;
  std::vector<double> filtered;   // A_new
  std::size_t reference = 0;

  std::size_t kept() const;
};

struct Polar {
  std::vector<double> rho;
  std::vector<double> theta;  // in [0, 1)
};

struct StructureGraph {
  Tensor features;   // X, N x 4
  Tensor adjacency;  // N x N
  Polar polar;
};

struct GcnParams {
  Tensor w1;  // 4 x hidden
  Tensor w2;  // hidden x D

  static GcnParams init(std::size_t hidden, std::size_t dim, std::mt19937_64& rng);
  static GcnParams zeros(std::size_t hidden, std::size_t dim);
};

/// A[i] = sum_h Att_h[0, i+1]. Throws ConfigError when fewer than two
/// patches are present.
std::vector<double> aggregate_cls_attention(const AttentionRecord& record);

FilteredAttention threshold(std::span<const double> attention);

Polar polar_coordinates(const PatchGrid& grid, std::size_t reference);

StructureGraph build_graph(const FilteredAttention& fa, const Polar& polar);

/// Value-level evaluation of the two-layer propagation; returns 1 x D.
Tensor gcn_structure_feature(const StructureGraph& graph, const GcnParams& params, std::size_t reference);

/// Row 0 of `tokens` plus `feature`; other rows unchanged.
Tensor inject(const Tensor& tokens, const Tensor& feature);

// Differentiable forms used inside the model.

struct StructureResult {
  ad::Var feature;  // 1 x D
  FilteredAttention filtered;
};

/// Structure feature computed from one layer's per-head attention nodes.
StructureResult structure_feature(ad::ParameterBinder& bind, std::span<const ad::Var> attention,
                                  const PatchGrid& grid, const GcnParams& params);

ad::Var inject(ad::Var tokens, ad::Var feature);

}  // namespace simtrans::sil
