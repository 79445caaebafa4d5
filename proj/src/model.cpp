#include "simtrans/model.hpp"

#include <random>

#include "simtrans/error.hpp"
#include "simtrans/mfb.hpp"

namespace simtrans {

PatchGrid ModelConfig::grid() const { return PatchGrid::make(image_size, image_size, patch, stride); }

std::vector<std::size_t> ModelConfig::sil_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t k = backbone.layers - sil_layer_count + 1; k <= backbone.layers; ++k) out.push_back(k);
  return out;
}

void ModelConfig::validate() const {
  const PatchGrid g = grid();
  if (backbone.heads == 0 || backbone.dim % backbone.heads != 0) {
    throw ConfigError("dim " + std::to_string(backbone.dim) + " is not divisible by " +
                      std::to_string(backbone.heads) + " heads");
  }
  if (backbone.layers == 0) throw ConfigError("the backbone needs at least one layer");
  if (sil_layer_count > backbone.layers) {
    throw ConfigError("sil_layer_count " + std::to_string(sil_layer_count) + " exceeds depth " +
                      std::to_string(backbone.layers));
  }
  if (mfb && backbone.layers < 3) throw ConfigError("multi-level features need at least 3 layers");
  if (sil_layer_count > 0 && g.count() < 2) throw ConfigError("structure learning needs at least 2 patches");
  if (classes < 2) throw ConfigError("at least 2 classes are required");
  if (channels == 0) throw ConfigError("channels must be positive");
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  m.encoder = EncoderParams::init(config.backbone, config.grid(), rng);
  const std::size_t gcn_sets = config.share_gcn ? std::min<std::size_t>(config.sil_layer_count, 1) : config.sil_layer_count;
  for (std::size_t i = 0; i < gcn_sets; ++i) m.gcn.push_back(sil::GcnParams::init(config.gcn_width(), config.backbone.dim, rng));
  m.head_w = Tensor::zeros({config.feature_dim(), config.classes});
  m.head_b = Tensor::zeros({1, config.classes});
  return m;
}

namespace {

template <class M, class Out>
void collect(M& m, Out& out) {
  auto add = [&](std::string name, auto& t) { out.push_back({std::move(name), &t}); };
  add("encoder.patch_w", m.encoder.patch_w);
  add("encoder.patch_b", m.encoder.patch_b);
  add("encoder.cls_token", m.encoder.cls_token);
  add("encoder.pos_embed", m.encoder.pos_embed);
  for (std::size_t k = 0; k < m.encoder.layers.size(); ++k) {
    auto& l = m.encoder.layers[k];
    const std::string p = "encoder.layer" + std::to_string(k + 1) + ".";
    add(p + "wq", l.wq);
    add(p + "bq", l.bq);
    add(p + "wk", l.wk);
    add(p + "bk", l.bk);
    add(p + "wv", l.wv);
    add(p + "bv", l.bv);
    add(p + "wo", l.wo);
    add(p + "bo", l.bo);
    add(p + "ln1_gamma", l.ln1_gamma);
    add(p + "ln1_beta", l.ln1_beta);
    add(p + "ffn1_w", l.ffn1_w);
    add(p + "ffn1_b", l.ffn1_b);
    add(p + "ffn2_w", l.ffn2_w);
    add(p + "ffn2_b", l.ffn2_b);
    add(p + "ln2_gamma", l.ln2_gamma);
    add(p + "ln2_beta", l.ln2_beta);
  }
  for (std::size_t i = 0; i < m.gcn.size(); ++i) {
    const std::string p = "gcn" + std::to_string(i + 1) + ".";
    add(p + "w1", m.gcn[i].w1);
    add(p + "w2", m.gcn[i].w2);
  }
  add("head.w", m.head_w);
  add("head.b", m.head_b);
}

}  // namespace

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out;
  collect(*this, out);
  return out;
}

std::vector<ConstNamedTensor> Model::parameters() const {
  std::vector<ConstNamedTensor> out;
  collect(*this, out);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

ForwardResult forward(ad::ParameterBinder& bind, const Tensor& patches, const PatchGrid& grid,
                      const EncoderParams& params, const BackboneConfig& cfg, std::span<const std::size_t> sil_layers,
                      std::span<const sil::GcnParams> gcn) {
  for (std::size_t k : sil_layers) {
    if (k == 0 || k > params.layers.size()) {
      throw ConfigError("structure layer " + std::to_string(k) + " outside 1.." + std::to_string(params.layers.size()));
    }
  }
  if (!sil_layers.empty() && gcn.size() != 1 && gcn.size() != sil_layers.size()) {
    throw ConfigError(std::to_string(gcn.size()) + " graph convolution parameter sets for " +
                      std::to_string(sil_layers.size()) + " structure layers");
  }
  ad::Graph& g = bind.graph();
  ForwardResult r;
  ad::Var z = embed(bind, g.constant(patches), params);
  std::size_t next_sil = 0;
  for (std::size_t k = 1; k <= params.layers.size(); ++k) {
    const bool equipped = next_sil < sil_layers.size() && sil_layers[next_sil] == k;
    LayerOutput out = encoder_layer(bind, z, params.layers[k - 1], cfg, equipped);
    if (!out.tokens.value().all_finite()) throw NumericError("non-finite activations after layer " + std::to_string(k));
    z = out.tokens;
    if (equipped) {
      const sil::GcnParams& gp = gcn.size() == 1 ? gcn[0] : gcn[next_sil];
      sil::StructureResult s = sil::structure_feature(bind, out.attention, grid, gp);
      r.records.push_back(make_record(k, out.attention));
      r.filtered.push_back(std::move(s.filtered));
      r.structure.push_back(s.feature);
      z = sil::inject(z, s.feature);
      ++next_sil;
    }
    r.cls.push_back(ad::slice_rows(z, 0, 1));
  }
  r.tokens = z;
  return r;
}

ImageOutput image_features(ad::ParameterBinder& bind, const Model& model, const Tensor& patches) {
  const std::vector<std::size_t> layers = model.config.sil_layers();
  ImageOutput out;
  out.trace = forward(bind, patches, model.config.grid(), model.encoder, model.config.backbone, layers, model.gcn);
  out.features = model.config.mfb ? mfb::multi_level_features(out.trace.cls) : out.trace.cls.back();
  return out;
}

Tensor predict(const Model& model, const Tensor& patches) {
  ad::Graph g;
  ad::ParameterBinder bind(g, false);
  const ImageOutput out = image_features(bind, model, patches);
  return mfb::classify(out.features, bind(model.head_w), bind(model.head_b)).pred.value();
}

}  // namespace simtrans
