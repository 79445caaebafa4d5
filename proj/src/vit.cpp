#include "simtrans/vit.hpp"

#include <cmath>
#include <string>

#include "simtrans/error.hpp"

namespace simtrans {

PatchGrid PatchGrid::make(std::size_t image_h, std::size_t image_w, std::size_t patch, std::size_t stride) {
  if (stride == 0) throw ConfigError("patch stride must be at least 1");
  if (patch == 0 || patch > image_h || patch > image_w) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not fit a " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " image");
  }
  PatchGrid g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.patch = patch;
  g.stride = stride;
  g.n_h = (image_h - patch) / stride + 1;
  g.n_w = (image_w - patch) / stride + 1;
  return g;
}

Tensor split_patches(const Tensor& image, const PatchGrid& grid) {
  if (image.rank() != 3 || image.dim(0) != grid.image_h || image.dim(1) != grid.image_w) {
    throw DimensionError("split_patches: image " + to_string(image.shape()) + " does not match grid " +
                         std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w));
  }
  const std::size_t channels = image.dim(2);
  const std::size_t width = grid.patch_dim(channels);
  Tensor out({grid.count(), width});
  for (std::size_t i = 0; i < grid.n_h; ++i) {
    for (std::size_t j = 0; j < grid.n_w; ++j) {
      double* row = out.data() + grid.index(i, j) * width;
      for (std::size_t dy = 0; dy < grid.patch; ++dy) {
        const std::size_t y = i * grid.stride + dy;
        const double* src = image.data() + (y * grid.image_w + j * grid.stride) * channels;
        std::copy_n(src, grid.patch * channels, row + dy * grid.patch * channels);
      }
    }
  }
  return out;
}

void truncated_normal(Tensor& t, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  for (double& v : t.values()) {
    do {
      v = normal(rng);
    } while (std::abs(v) > 2.0 * std);
  }
}

EncoderParams EncoderParams::init(const BackboneConfig& cfg, const PatchGrid& grid, std::mt19937_64& rng) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError("model dim " + std::to_string(cfg.dim) + " is not divisible by " + std::to_string(cfg.heads) +
                      " heads");
  }
  constexpr double kStd = 0.02;
  const std::size_t d = cfg.dim;
  auto weight = [&](std::size_t in, std::size_t out) {
    Tensor w({in, out});
    truncated_normal(w, kStd, rng);
    return w;
  };
  auto zeros = [](std::size_t n) { return Tensor::zeros({1, n}); };
  auto ones = [](std::size_t n) { return Tensor({1, n}, 1.0); };

  EncoderParams p;
  p.patch_w = weight(grid.patch_dim(), d);
  p.patch_b = zeros(d);
  p.cls_token = zeros(d);
  p.pos_embed = weight(grid.count() + 1, d);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    LayerParams l;
    l.wq = weight(d, d);
    l.bq = zeros(d);
    l.wk = weight(d, d);
    l.bk = zeros(d);
    l.wv = weight(d, d);
    l.bv = zeros(d);
    l.wo = weight(d, d);
    l.bo = zeros(d);
    l.ln1_gamma = ones(d);
    l.ln1_beta = zeros(d);
    l.ffn1_w = weight(d, cfg.ffn_dim);
    l.ffn1_b = zeros(cfg.ffn_dim);
    l.ffn2_w = weight(cfg.ffn_dim, d);
    l.ffn2_b = zeros(d);
    l.ln2_gamma = ones(d);
    l.ln2_beta = zeros(d);
    p.layers.push_back(std::move(l));
  }
  return p;
}

ad::Var embed(ad::ParameterBinder& bind, ad::Var patches, const EncoderParams& params) {
  const std::size_t n = patches.value().rows();
  if (params.pos_embed.rows() != n + 1) {
    throw DimensionError("embed: position embedding has " + std::to_string(params.pos_embed.rows()) +
                         " rows for " + std::to_string(n) + " patches");
  }
  ad::Var projected = ad::add_row(ad::matmul(patches, bind(params.patch_w)), bind(params.patch_b));
  const ad::Var rows[] = {bind(params.cls_token), projected};
  return ad::add(ad::concat_rows(rows), bind(params.pos_embed));
}

LayerOutput encoder_layer(ad::ParameterBinder& bind, ad::Var tokens, const LayerParams& p, const BackboneConfig& cfg,
                          bool capture) {
  const std::size_t dh = cfg.head_dim();
  auto linear = [&](ad::Var x, const Tensor& w, const Tensor& b) { return ad::add_row(ad::matmul(x, bind(w)), bind(b)); };

  const ad::Var q = linear(tokens, p.wq, p.bq);
  const ad::Var k = linear(tokens, p.wk, p.bk);
  const ad::Var v = linear(tokens, p.wv, p.bv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerOutput out;
  std::vector<ad::Var> head_outputs;
  head_outputs.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    const ad::Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    const ad::Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    const ad::Var att = ad::softmax_rows(ad::mul_scalar(ad::matmul(qh, ad::transpose(kh)), scale));
    if (capture) out.attention.push_back(att);
    head_outputs.push_back(ad::matmul(att, vh));
  }
  const ad::Var msa = linear(ad::concat_last_axis(head_outputs), p.wo, p.bo);
  const ad::Var mid = ad::layer_norm(ad::add(msa, tokens), bind(p.ln1_gamma), bind(p.ln1_beta), cfg.ln_eps);
  const ad::Var ffn = linear(ad::gelu(linear(mid, p.ffn1_w, p.ffn1_b)), p.ffn2_w, p.ffn2_b);
  out.tokens = ad::layer_norm(ad::add(ffn, mid), bind(p.ln2_gamma), bind(p.ln2_beta), cfg.ln_eps);
  return out;
}

AttentionRecord make_record(std::size_t layer, std::span<const ad::Var> attention) {
  AttentionRecord r;
  r.layer = layer;
  for (const ad::Var& a : attention) r.heads.push_back(a.value());
  return r;
}

}  // namespace simtrans
