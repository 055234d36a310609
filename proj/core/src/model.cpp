#include "semtx/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "semtx/error.hpp"

namespace semtx {

namespace {

std::string join(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

Tensor scaled_scores(const Tensor& q, const Tensor& k, int d_k) {
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_k)));
}

void check_square_mask(const Tensor& mask, int n, const char* who) {
  if (mask.rows() != n || mask.cols() != n)
    throw DimensionError(std::string(who) + ": mask is " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for sequence length " + std::to_string(n));
}

bool hyp_better(double score_a, const std::vector<int>& a, double score_b, const std::vector<int>& b) {
  if (score_a != score_b) return score_a > score_b;
  return a < b;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("need at least one encoder and decoder layer");
  if (d_ff < 1) throw ConfigError("d_ff must be positive");
  if (src_vocab < 1 || trg_vocab < 1) throw ConfigError("vocabulary sizes must be positive");
  if (max_len < 1) throw ConfigError("max_len must be positive");
}

std::string to_string(Site site) { return site == Site::EncoderSelf ? "encoder" : "cross"; }

std::string HeadSpec::describe() const {
  return to_string(site) + " layers=" + join(layers) + " heads=" + join(heads) + " family=" +
         to_string(mask.family) + (mask.c != 0.0 ? " C=" + std::to_string(mask.c) : "");
}

HeadSpec HeadSpec::sasa(MaskSpec mask) { return {Site::EncoderSelf, {4}, {1}, mask}; }
HeadSpec HeadSpec::sacra(MaskSpec mask) { return {Site::Cross, {2, 3}, {1}, mask}; }
HeadSpec HeadSpec::pascal() { return {Site::EncoderSelf, {1}, {1, 2, 3, 4, 5}, MaskSpec::pascal()}; }
HeadSpec HeadSpec::udiscal() { return {Site::EncoderSelf, {1}, {1}, MaskSpec::udiscal()}; }

void validate_head_specs(std::span<const HeadSpec> specs, const ModelConfig& cfg) {
  std::set<std::tuple<Site, int, int>> taken;
  for (const auto& spec : specs) {
    spec.mask.validate();
    if (spec.layers.empty() || spec.heads.empty())
      throw ConfigError("head spec needs at least one layer and one head: " + spec.describe());
    if (spec.site == Site::Cross && !is_scene_family(spec.mask.family))
      throw ConfigError("cross-attention heads take scene masks only: " + spec.describe());
    const int layer_count = spec.site == Site::EncoderSelf ? cfg.enc_layers : cfg.dec_layers;
    for (int layer : spec.layers) {
      if (layer < 1 || layer > layer_count)
        throw ConfigError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(layer_count) +
                          ": " + spec.describe());
      for (int head : spec.heads) {
        if (head < 1 || head > cfg.heads)
          throw ConfigError("head " + std::to_string(head) + " outside 1.." + std::to_string(cfg.heads) +
                            ": " + spec.describe());
        if (!taken.insert({spec.site, layer, head}).second)
          throw ConfigError("two mask families on " + to_string(spec.site) + " layer " +
                            std::to_string(layer) + " head " + std::to_string(head));
      }
    }
  }
}

void TrainConfig::validate() const {
  if (warmup < 1) throw ConfigError("warmup must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("label smoothing must lie in [0,1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (!(lr_scale > 0.0)) throw ConfigError("lr scale must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
}

void DecodeConfig::validate() const {
  if (beam < 1) throw ConfigError("beam must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (max_len < 1) throw ConfigError("max output length must be >= 1");
}

double lr_schedule(int step, const TrainConfig& cfg, int d_model) {
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  const double s = step;
  return cfg.lr_scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(cfg.warmup), -1.5));
}

Tensor mask_tensor(const Mask& mask) { return Tensor::from(mask.rows(), mask.cols(), mask.values()); }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  Tensor scores = scaled_scores(q, k, q.cols());
  Tensor weights = causal ? softmax_rows_causal(scores) : softmax_rows(scores);
  return matmul(weights, v);
}

Tensor sasa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  if (q.rows() != k.rows() || k.rows() != v.rows())
    throw DimensionError("sasa_attention: Q, K and V must have the same number of rows");
  check_square_mask(mask, q.rows(), "sasa_attention");
  Tensor weights = softmax_rows(scaled_scores(q, k, q.cols()));
  return matmul(mul(weights, mask), v);
}

Tensor sasa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask) {
  return sasa_attention(q, k, v, mask_tensor(mask));
}

Tensor sacra_keys(const Tensor& x_enc, const Tensor& mask) {
  check_square_mask(mask, x_enc.rows(), "sacra_attention");
  return scale(matmul(mask, x_enc), 1.0 / x_enc.rows());
}

Tensor sacra_weights(const Tensor& q_dec, const Tensor& x_enc, int d_k, const Tensor& mask) {
  if (q_dec.cols() != x_enc.cols())
    throw DimensionError("sacra_attention: queries must be d_model (" + std::to_string(x_enc.cols()) +
                         ") wide, got " + std::to_string(q_dec.cols()));
  return softmax_rows(scaled_scores(q_dec, sacra_keys(x_enc, mask), d_k));
}

Tensor sacra_attention(const Tensor& q_dec, const Tensor& x_enc, const Tensor& v, const Tensor& mask) {
  if (v.rows() != x_enc.rows())
    throw DimensionError("sacra_attention: V has " + std::to_string(v.rows()) + " rows for " +
                         std::to_string(x_enc.rows()) + " source tokens");
  return matmul(sacra_weights(q_dec, x_enc, v.cols(), mask), v);
}

Tensor sacra_attention(const Tensor& q_dec, const Tensor& x_enc, const Tensor& v, const Mask& mask) {
  return sacra_attention(q_dec, x_enc, v, mask_tensor(mask));
}

Tensor positional_encoding(int length, int d_model) {
  std::vector<double> pe(static_cast<std::size_t>(length) * d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe[static_cast<std::size_t>(pos) * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) pe[static_cast<std::size_t>(pos) * d_model + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from(length, d_model, std::move(pe));
}

// --- Transformer -------------------------------------------------------------------

Transformer::Transformer(ModelConfig cfg, std::vector<HeadSpec> specs, std::uint64_t seed)
    : cfg_(cfg), specs_(std::move(specs)), rng_(seed) {
  cfg_.validate();
  validate_head_specs(specs_, cfg_);
  enc_slots_.assign(cfg_.enc_layers, std::vector<int>(cfg_.heads, -1));
  cross_slots_.assign(cfg_.dec_layers, std::vector<int>(cfg_.heads, -1));
  for (std::size_t s = 0; s < specs_.size(); ++s) {
    auto& slots = specs_[s].site == Site::EncoderSelf ? enc_slots_ : cross_slots_;
    for (int layer : specs_[s].layers)
      for (int head : specs_[s].heads) slots[layer - 1][head - 1] = static_cast<int>(s);
  }

  const int d = cfg_.d_model, dk = cfg_.d_k(), ff = cfg_.d_ff;
  auto xavier = [](int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); };
  auto layer_norm = [&](const std::string& name) {
    return LayerNorm{make_param(name + ".gain", 1, d, -1.0), make_param(name + ".bias", 1, d, 0.0)};
  };
  auto feed_forward = [&](const std::string& name) {
    return FeedForward{make_param(name + ".w1", d, ff, xavier(d, ff)), make_param(name + ".b1", 1, ff, 0.0),
                       make_param(name + ".w2", ff, d, xavier(ff, d)), make_param(name + ".b2", 1, d, 0.0)};
  };
  auto head = [&](const std::string& name, bool scene_keys) {
    HeadWeights h;
    // Scene-aware cross heads have no key projection and d_model-wide queries.
    h.wq = scene_keys ? make_param(name + ".wq", d, d, xavier(d, d)) : make_param(name + ".wq", d, dk, xavier(d, dk));
    if (!scene_keys) h.wk = make_param(name + ".wk", d, dk, xavier(d, dk));
    h.wv = make_param(name + ".wv", d, dk, xavier(d, dk));
    h.wo = make_param(name + ".wo", dk, d, xavier(dk, d));
    return h;
  };

  const double embed_bound = std::sqrt(3.0 / d);
  src_embed_ = make_param("src_embed", cfg_.src_vocab, d, embed_bound);
  trg_embed_ = make_param("trg_embed", cfg_.trg_vocab, d, embed_bound);
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncoderLayer layer;
    layer.ln_attn = layer_norm(p + ".ln_attn");
    for (int h = 0; h < cfg_.heads; ++h) layer.heads.push_back(head(p + ".self.h" + std::to_string(h), false));
    layer.bo = make_param(p + ".self.bo", 1, d, 0.0);
    layer.ln_ff = layer_norm(p + ".ln_ff");
    layer.ff = feed_forward(p + ".ff");
    encoder_.push_back(std::move(layer));
  }
  enc_final_ = layer_norm("enc.ln_final");
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = layer_norm(p + ".ln_self");
    for (int h = 0; h < cfg_.heads; ++h) layer.self_heads.push_back(head(p + ".self.h" + std::to_string(h), false));
    layer.self_bo = make_param(p + ".self.bo", 1, d, 0.0);
    layer.ln_cross = layer_norm(p + ".ln_cross");
    for (int h = 0; h < cfg_.heads; ++h)
      layer.cross_heads.push_back(head(p + ".cross.h" + std::to_string(h), cross_slots_[l][h] >= 0));
    layer.cross_bo = make_param(p + ".cross.bo", 1, d, 0.0);
    layer.ln_ff = layer_norm(p + ".ln_ff");
    layer.ff = feed_forward(p + ".ff");
    decoder_.push_back(std::move(layer));
  }
  dec_final_ = layer_norm("dec.ln_final");
  // Small output weights keep the initial distribution close to uniform.
  out_w_ = make_param("out.w", d, cfg_.trg_vocab, 0.1 * xavier(d, cfg_.trg_vocab));
  out_b_ = make_param("out.b", 1, cfg_.trg_vocab, 0.0);
}

// bound > 0: uniform(-bound, bound); bound == 0: zeros; bound < 0: ones.
Tensor Transformer::make_param(const std::string& name, int rows, int cols, double bound) {
  std::vector<double> values(static_cast<std::size_t>(rows) * cols, bound < 0.0 ? 1.0 : 0.0);
  if (bound > 0.0) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : values) v = dist(rng_);
  }
  Tensor t = Tensor::from(rows, cols, std::move(values), true);
  params_.push_back({name, t});
  return t;
}

std::size_t Transformer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void Transformer::load(const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params_.size())
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = tensors[i];
    if (dst.name != src.name || dst.tensor.rows() != src.tensor.rows() || dst.tensor.cols() != src.tensor.cols())
      throw ConfigError("checkpoint tensor " + src.name + " does not match model parameter " + dst.name);
    std::copy(src.tensor.values().begin(), src.tensor.values().end(), dst.tensor.mutable_values().begin());
  }
}

int Transformer::slot_spec(Site site, int layer, int head) const {
  return (site == Site::EncoderSelf ? enc_slots_ : cross_slots_)[layer][head];
}

Tensor Transformer::embed(const Tensor& table, std::span<const int> ids) const {
  const int n = static_cast<int>(ids.size());
  if (n < 1 || n > cfg_.max_len)
    throw DimensionError("sequence length " + std::to_string(n) + " outside 1.." + std::to_string(cfg_.max_len));
  Tensor x = scale(embedding(table, ids), std::sqrt(static_cast<double>(cfg_.d_model)));
  return add(x, positional_encoding(n, cfg_.d_model));
}

Tensor Transformer::feed_forward(const FeedForward& ff, const Tensor& x) const {
  return add_row(matmul(relu(add_row(matmul(x, ff.w1), ff.b1)), ff.w2), ff.b2);
}

void Transformer::check_masks(std::span<const Mask> masks, int src_len) const {
  if (masks.size() != specs_.size())
    throw ConfigError(std::to_string(masks.size()) + " masks supplied for " + std::to_string(specs_.size()) +
                      " head specs");
  for (std::size_t s = 0; s < masks.size(); ++s)
    if (masks[s].rows() != src_len || masks[s].cols() != src_len)
      throw DimensionError("mask for " + specs_[s].describe() + " is " + std::to_string(masks[s].rows()) + "x" +
                           std::to_string(masks[s].cols()) + " but the source has " + std::to_string(src_len) +
                           " subwords");
}

Tensor Transformer::encode(std::span<const int> src, std::span<const Mask> masks) const {
  const int n = static_cast<int>(src.size());
  check_masks(masks, n);
  std::vector<Tensor> mask_tensors;
  for (const auto& m : masks) mask_tensors.push_back(mask_tensor(m));

  Tensor x = embed(src_embed_, src);
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const auto& layer = encoder_[l];
    Tensor h = layer_norm(x, layer.ln_attn.gain, layer.ln_attn.bias);
    Tensor mixed;
    for (int k = 0; k < cfg_.heads; ++k) {
      const auto& w = layer.heads[k];
      Tensor q = matmul(h, w.wq), key = matmul(h, w.wk), v = matmul(h, w.wv);
      const int spec = slot_spec(Site::EncoderSelf, l, k);
      Tensor o = spec >= 0 ? sasa_attention(q, key, v, mask_tensors[spec]) : attention(q, key, v);
      Tensor contrib = matmul(o, w.wo);
      mixed = mixed.defined() ? add(mixed, contrib) : contrib;
    }
    x = add(x, add_row(mixed, layer.bo));
    x = add(x, feed_forward(layer.ff, layer_norm(x, layer.ln_ff.gain, layer.ln_ff.bias)));
  }
  return layer_norm(x, enc_final_.gain, enc_final_.bias);
}

Tensor Transformer::decode(const Tensor& memory, std::span<const int> trg_in, std::span<const Mask> masks) const {
  check_masks(masks, memory.rows());
  std::vector<Tensor> mask_tensors;
  for (const auto& m : masks) mask_tensors.push_back(mask_tensor(m));

  Tensor y = embed(trg_embed_, trg_in);
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const auto& layer = decoder_[l];
    Tensor h = layer_norm(y, layer.ln_self.gain, layer.ln_self.bias);
    Tensor mixed;
    for (int k = 0; k < cfg_.heads; ++k) {
      const auto& w = layer.self_heads[k];
      Tensor o = attention(matmul(h, w.wq), matmul(h, w.wk), matmul(h, w.wv), true);
      Tensor contrib = matmul(o, w.wo);
      mixed = mixed.defined() ? add(mixed, contrib) : contrib;
    }
    y = add(y, add_row(mixed, layer.self_bo));

    h = layer_norm(y, layer.ln_cross.gain, layer.ln_cross.bias);
    mixed = Tensor();
    for (int k = 0; k < cfg_.heads; ++k) {
      const auto& w = layer.cross_heads[k];
      const int spec = slot_spec(Site::Cross, l, k);
      Tensor q = matmul(h, w.wq), v = matmul(memory, w.wv);
      Tensor o = spec >= 0 ? sacra_attention(q, memory, v, mask_tensors[spec])
                           : attention(q, matmul(memory, w.wk), v);
      Tensor contrib = matmul(o, w.wo);
      mixed = mixed.defined() ? add(mixed, contrib) : contrib;
    }
    y = add(y, add_row(mixed, layer.cross_bo));
    y = add(y, feed_forward(layer.ff, layer_norm(y, layer.ln_ff.gain, layer.ln_ff.bias)));
  }
  y = layer_norm(y, dec_final_.gain, dec_final_.bias);
  return add_row(matmul(y, out_w_), out_b_);
}

Tensor Transformer::forward(std::span<const int> src, std::span<const int> trg_in,
                            std::span<const Mask> masks) const {
  return decode(encode(src, masks), trg_in, masks);
}

std::vector<Mask> build_head_masks(std::span<const HeadSpec> specs, const SentenceStructure& structure,
                                   const Alignment& align) {
  std::vector<Mask> out;
  for (const auto& spec : specs) {
    if (is_scene_family(spec.mask.family)) {
      if (!structure.cover) throw ConfigError("no scene cover for head spec " + spec.describe());
      out.push_back(scene_mask(*structure.cover, spec.mask, align));
    } else {
      if (!structure.tree) throw ConfigError("no dependency tree for head spec " + spec.describe());
      out.push_back(spec.mask.family == MaskFamily::Pascal ? pascal_mask(*structure.tree, align)
                                                           : udiscal_mask(*structure.tree, align));
    }
  }
  return out;
}

// --- training --------------------------------------------------------------------

TrainResult train(Transformer& model, std::span<const TrainingExample> data, const TrainConfig& cfg, int bos,
                  int eos, const std::function<void(int, double)>& on_step) {
  cfg.validate();
  if (data.empty()) throw ConfigError("no training examples");
  const auto& specs = model.head_specs();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].masks.size() != specs.size())
      throw ConfigError("example " + std::to_string(i) + " has " + std::to_string(data[i].masks.size()) +
                        " masks but " + std::to_string(specs.size()) + " head specs are configured");
    for (std::size_t s = 0; s < specs.size(); ++s) {
      const auto n = static_cast<int>(data[i].src.size());
      if (data[i].masks[s].rows() != n || data[i].masks[s].cols() != n)
        throw ConfigError("example " + std::to_string(i) + ": mask for " + specs[s].describe() +
                          " does not match the source length");
    }
  }

  auto& params = model.parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    m1[p].assign(params[p].tensor.size(), 0.0);
    m2[p].assign(params[p].tensor.size(), 0.0);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainResult result;
  double beta1_t = 1.0, beta2_t = 1.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    while (static_cast<int>(batch.size()) < std::min<int>(cfg.batch_size, static_cast<int>(data.size()))) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::size_t tokens = 0;
    for (auto i : batch) tokens += data[i].trg.size() + 1;

    for (auto& p : params) p.tensor.zero_grad();
    double loss = 0.0;
    try {
      for (auto i : batch) {
        const auto& ex = data[i];
        std::vector<int> trg_in{bos}, target(ex.trg);
        trg_in.insert(trg_in.end(), ex.trg.begin(), ex.trg.end());
        target.push_back(eos);
        Tensor logits = model.forward(ex.src, trg_in, ex.masks);
        Tensor ce = scale(cross_entropy(logits, target, cfg.label_smoothing),
                          static_cast<double>(target.size()) / static_cast<double>(tokens));
        ce.backward();
        loss += ce.item();
      }
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);

    const double lr = lr_schedule(step, cfg, model.config().d_model);
    beta1_t *= cfg.beta1;
    beta2_t *= cfg.beta2;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto grad = params[p].tensor.grad();
      auto values = params[p].tensor.mutable_values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        m1[p][k] = cfg.beta1 * m1[p][k] + (1.0 - cfg.beta1) * grad[k];
        m2[p][k] = cfg.beta2 * m2[p][k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
        const double mhat = m1[p][k] / (1.0 - beta1_t);
        const double vhat = m2[p][k] / (1.0 - beta2_t);
        values[k] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  return result;
}

// --- decoding --------------------------------------------------------------------

TransformerScorer::TransformerScorer(const Transformer& model, std::span<const int> src, std::vector<Mask> masks,
                                     int bos, int eos)
    : model_(model), masks_(std::move(masks)), bos_(bos), eos_(eos) {
  NoGradGuard no_grad;
  memory_ = model_.encode(src, masks_);
}

std::vector<double> TransformerScorer::next_log_probs(std::span<const int> prefix) {
  NoGradGuard no_grad;
  std::vector<int> trg_in{bos_};
  trg_in.insert(trg_in.end(), prefix.begin(), prefix.end());
  Tensor logits = model_.decode(memory_, trg_in, masks_);
  const auto last = logits.values().subspan(static_cast<std::size_t>(logits.rows() - 1) * logits.cols());
  return log_softmax_row(last);
}

double length_penalty(int length, double alpha) { return std::pow((5.0 + length) / 6.0, alpha); }

DecodeResult greedy_search(StepScorer& scorer, int max_len) {
  if (max_len < 1) throw ConfigError("max output length must be >= 1");
  DecodeResult r;
  while (static_cast<int>(r.tokens.size()) < max_len) {
    const auto lp = scorer.next_log_probs(r.tokens);
    const auto best = std::max_element(lp.begin(), lp.end()) - lp.begin();
    r.tokens.push_back(static_cast<int>(best));
    r.log_prob += lp[best];
    if (best == scorer.eos()) {
      r.finished = true;
      break;
    }
  }
  r.score = r.log_prob;
  return r;
}

DecodeResult beam_search(StepScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  std::vector<Hyp> live{Hyp{}}, finished;
  const int eos = scorer.eos();

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Hyp> candidates;
    for (const auto& h : live) {
      const auto lp = scorer.next_log_probs(h.tokens);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (lp[tok] == -std::numeric_limits<double>::infinity()) continue;
        Hyp c{h.tokens, h.log_prob + lp[tok]};
        c.tokens.push_back(static_cast<int>(tok));
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Hyp& a, const Hyp& b) {
      return hyp_better(a.log_prob, a.tokens, b.log_prob, b.tokens);
    });
    const std::size_t slots = static_cast<std::size_t>(cfg.beam) - finished.size();
    live.clear();
    for (std::size_t i = 0; i < candidates.size() && i < slots; ++i) {
      if (candidates[i].tokens.back() == eos) {
        finished.push_back(std::move(candidates[i]));
      } else {
        live.push_back(std::move(candidates[i]));
      }
    }
    if (finished.size() >= static_cast<std::size_t>(cfg.beam)) break;
  }

  const bool any_finished = !finished.empty();
  const auto& pool = any_finished ? finished : live;
  if (pool.empty()) return DecodeResult{};
  const Hyp* best = nullptr;
  double best_score = 0.0;
  for (const auto& h : pool) {
    const double s = h.log_prob / length_penalty(static_cast<int>(h.tokens.size()), cfg.alpha);
    if (!best || hyp_better(s, h.tokens, best_score, best->tokens)) {
      best = &h;
      best_score = s;
    }
  }
  return DecodeResult{best->tokens, best->log_prob, best_score, any_finished};
}

}  // namespace semtx
