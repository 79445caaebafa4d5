#include "simtrans/sil.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "simtrans/error.hpp"
#include "simtrans/kernels.hpp"

namespace simtrans::sil {

std::size_t FilteredAttention::kept() const {
  return static_cast<std::size_t>(std::count_if(filtered.begin(), filtered.end(), [](double v) { return v != 0.0; }));
}

namespace {

// Glorot-uniform, the usual initialisation for graph convolution weights.
Tensor glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({in, out});
  for (double& v : w.values()) v = dist(rng);
  return w;
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  kernels::matmul(a.values(), {a.rows(), a.cols()}, b.values(), {b.rows(), b.cols()}, out.values());
  return out;
}

void relu_in_place(Tensor& t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
}

}  // namespace

GcnParams GcnParams::init(std::size_t hidden, std::size_t dim, std::mt19937_64& rng) {
  GcnParams p;
  p.w1 = glorot(kNodeFeatureDim, hidden, rng);
  p.w2 = glorot(hidden, dim, rng);
  return p;
}

GcnParams GcnParams::zeros(std::size_t hidden, std::size_t dim) {
  return {Tensor::zeros({kNodeFeatureDim, hidden}), Tensor::zeros({hidden, dim})};
}

std::vector<double> aggregate_cls_attention(const AttentionRecord& record) {
  if (record.heads.empty()) throw ConfigError("attention record has no heads");
  const std::size_t tokens = record.heads.front().rows();
  if (tokens < 3) {
    throw ConfigError("structure learning needs at least 2 patches, layer " + std::to_string(record.layer) +
                      " has " + std::to_string(tokens - 1));
  }
  std::vector<double> a(tokens - 1, 0.0);
  for (const Tensor& head : record.heads) {
    if (head.rows() != tokens || head.cols() != tokens) {
      throw DimensionError("attention head of shape " + to_string(head.shape()) + " in a record of " +
                           std::to_string(tokens) + " tokens");
    }
    for (std::size_t i = 0; i + 1 < tokens; ++i) a[i] += head.at(0, i + 1);
  }
  return a;
}

FilteredAttention threshold(std::span<const double> attention) {
  if (attention.empty()) throw ContractError("threshold: empty attention vector");
  FilteredAttention fa;
  fa.attention.assign(attention.begin(), attention.end());
  double sum = 0.0;
  for (double v : attention) sum += v;
  fa.mean = sum / static_cast<double>(attention.size());
  fa.reference = static_cast<std::size_t>(std::max_element(attention.begin(), attention.end()) - attention.begin());

  fa.filtered.assign(attention.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(attention.begin(), attention.end());
  // A constant vector has nothing strictly above its mean; rounding in the
  // mean must not let every entry through.
  if (*lo == *hi) return fa;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    if (attention[i] > fa.mean) fa.filtered[i] = attention[i];
  }
  return fa;
}

Polar polar_coordinates(const PatchGrid& grid, std::size_t reference) {
  const std::size_t n = grid.count();
  if (reference >= n) {
    throw ContractError("reference patch " + std::to_string(reference) + " outside a grid of " + std::to_string(n));
  }
  const double x0 = static_cast<double>(grid.col_of(reference));
  const double y0 = static_cast<double>(grid.row_of(reference));
  const double nw = static_cast<double>(grid.n_w);
  const double nh = static_cast<double>(grid.n_h);
  Polar p;
  p.rho.resize(n);
  p.theta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(grid.col_of(i)) - x0;
    const double dy = static_cast<double>(grid.row_of(i)) - y0;
    p.rho[i] = std::sqrt((dx / nw) * (dx / nw) + (dy / nh) * (dy / nh));
    // atan2(0, negative) is +pi, which lands exactly on 1; fold into [0, 1).
    double theta = (std::atan2(dy, dx) + std::numbers::pi) / (2.0 * std::numbers::pi);
    if (theta >= 1.0) theta -= 1.0;
    p.theta[i] = theta;
  }
  return p;
}

namespace {

Tensor polar_features(const Polar& polar) {
  const std::size_t n = polar.rho.size();
  Tensor x({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * polar.theta[i];
    x.at(i, 0) = polar.rho[i];
    x.at(i, 1) = std::cos(angle);
    x.at(i, 2) = std::sin(angle);
  }
  return x;
}

}  // namespace

StructureGraph build_graph(const FilteredAttention& fa, const Polar& polar) {
  const std::size_t n = fa.filtered.size();
  if (polar.rho.size() != n || polar.theta.size() != n) {
    throw DimensionError("build_graph: " + std::to_string(n) + " attention entries but " +
                         std::to_string(polar.rho.size()) + " polar coordinates");
  }
  StructureGraph g;
  g.polar = polar;
  const Tensor base = polar_features(polar);
  g.features = Tensor({n, kNodeFeatureDim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) g.features.at(i, c) = base.at(i, c);
    g.features.at(i, 3) = fa.filtered[i];
  }
  g.adjacency = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g.adjacency.at(i, j) = fa.filtered[i] * fa.filtered[j];
  }
  return g;
}

Tensor gcn_structure_feature(const StructureGraph& graph, const GcnParams& params, std::size_t reference) {
  Tensor hidden = matmul_value(matmul_value(graph.adjacency, graph.features), params.w1);
  relu_in_place(hidden);
  Tensor out = matmul_value(matmul_value(graph.adjacency, hidden), params.w2);
  relu_in_place(out);
  const std::size_t d = out.cols();
  return Tensor({1, d}, std::vector<double>(out.data() + reference * d, out.data() + (reference + 1) * d));
}

Tensor inject(const Tensor& tokens, const Tensor& feature) {
  if (feature.size() != tokens.cols()) {
    throw DimensionError("inject: feature of shape " + to_string(feature.shape()) + " for tokens " +
                         to_string(tokens.shape()));
  }
  Tensor out = tokens;
  for (std::size_t c = 0; c < feature.size(); ++c) out[c] += feature[c];
  return out;
}

StructureResult structure_feature(ad::ParameterBinder& bind, std::span<const ad::Var> attention,
                                  const PatchGrid& grid, const GcnParams& params) {
  if (attention.empty()) throw ConfigError("structure learning needs at least one attention head");
  const std::size_t tokens = attention.front().value().rows();
  if (tokens != grid.count() + 1) {
    throw DimensionError("attention over " + std::to_string(tokens) + " tokens for a grid of " +
                         std::to_string(grid.count()) + " patches");
  }
  ad::Graph& g = bind.graph();

  ad::Var summed{};
  for (std::size_t h = 0; h < attention.size(); ++h) {
    const ad::Var cls_row = ad::slice_cols(ad::slice_rows(attention[h], 0, 1), 1, tokens);
    summed = h == 0 ? cls_row : ad::add(summed, cls_row);
  }

  StructureResult result;
  AttentionRecord record;
  record.heads.reserve(attention.size());
  for (const ad::Var& a : attention) record.heads.push_back(a.value());
  result.filtered = threshold(aggregate_cls_attention(record));
  const FilteredAttention& fa = result.filtered;

  const std::size_t n = grid.count();
  Tensor mask({1, n});
  for (std::size_t i = 0; i < n; ++i) mask[i] = fa.filtered[i] != 0.0 ? 1.0 : 0.0;
  const ad::Var kept_row = ad::mul(summed, g.constant(std::move(mask)));
  const ad::Var kept_col = ad::transpose(kept_row);

  const Polar polar = polar_coordinates(grid, fa.reference);
  const ad::Var parts[] = {g.constant(polar_features(polar)), kept_col};
  const ad::Var features = ad::concat_last_axis(parts);
  const ad::Var adjacency = ad::matmul(kept_col, kept_row);

  const ad::Var hidden = ad::relu(ad::matmul(ad::matmul(adjacency, features), bind(params.w1)));
  const ad::Var out = ad::relu(ad::matmul(ad::matmul(adjacency, hidden), bind(params.w2)));
  result.feature = ad::slice_rows(out, fa.reference, fa.reference + 1);
  return result;
}

ad::Var inject(ad::Var tokens, ad::Var feature) {
  const Tensor& t = tokens.value();
  if (feature.value().size() != t.cols()) {
    throw DimensionError("inject: feature of shape " + to_string(feature.value().shape()) + " for tokens " +
                         to_string(t.shape()));
  }
  const ad::Var cls = ad::add(ad::slice_rows(tokens, 0, 1), feature);
  const ad::Var rows[] = {cls, ad::slice_rows(tokens, 1, t.rows())};
  return ad::concat_rows(rows);
}

}  // namespace simtrans::sil
