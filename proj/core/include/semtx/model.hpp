#pragma once

// Encoder-decoder transformer with scene-aware heads.
//
// Designated encoder self-attention heads multiply their post-softmax weights
// by a per-sentence mask (scene masks, or the dependency baselines). Designated
// cross-attention heads replace their keys with scene-aggregated encoder
// outputs, so source tokens that share the same set of scenes receive the
// same weight from every decoder query.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semtx/checkpoint.hpp"
#include "semtx/masks.hpp"
#include "semtx/tensor.hpp"

namespace semtx {

struct ModelConfig {
  int d_model = 256;
  int enc_layers = 4;
  int dec_layers = 4;
  int heads = 8;  // per layer, at every attention site
  int d_ff = 1024;
  int src_vocab = 0;
  int trg_vocab = 0;
  int max_len = 256;

  int d_k() const { return d_model / heads; }
  void validate() const;  // throws ConfigError
};

enum class Site { EncoderSelf, Cross };

std::string to_string(Site site);

// Places one mask family on a set of (layer, head) slots at one site.
// Layers and heads are 1-based.
struct HeadSpec {
  Site site = Site::EncoderSelf;
  std::vector<int> layers;
  std::vector<int> heads;
  MaskSpec mask;

  std::string describe() const;

  // Tuned placements: SASA one head in encoder layer 4; SACrA one head in
  // decoder layers 2 and 3; PASCAL five heads in encoder layer 1; UDISCAL one
  // head in encoder layer 1.
  static HeadSpec sasa(MaskSpec mask = MaskSpec::binary());
  static HeadSpec sacra(MaskSpec mask = MaskSpec::binary());
  static HeadSpec pascal();
  static HeadSpec udiscal();
};

// Throws ConfigError on out-of-range slots, two families on one slot, or a
// family that does not fit its site.
void validate_head_specs(std::span<const HeadSpec> specs, const ModelConfig& cfg);

struct TrainConfig {
  int warmup = 4000;
  double label_smoothing = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double lr_scale = 1.0;  // multiplies the inverse-square-root schedule
  int batch_size = 128;
  int steps = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DecodeConfig {
  int beam = 4;
  double alpha = 0.6;
  int max_len = 100;

  void validate() const;
};

double lr_schedule(int step, const TrainConfig& cfg, int d_model);

// Post-softmax masked self-attention: (softmax(Q K^T / sqrt(d_k)) .* M) V,
// without renormalising.
Tensor sasa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask);
Tensor sasa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask);

// Scene-aware keys (M X_enc) / L_src; queries must be d_model wide.
Tensor sacra_keys(const Tensor& x_enc, const Tensor& mask);
Tensor sacra_attention(const Tensor& q_dec, const Tensor& x_enc, const Tensor& v, const Mask& mask);
Tensor sacra_attention(const Tensor& q_dec, const Tensor& x_enc, const Tensor& v, const Tensor& mask);
// Attention weights of the cross head, softmax(q K~^T / sqrt(d_k)).
Tensor sacra_weights(const Tensor& q_dec, const Tensor& x_enc, int d_k, const Tensor& mask);

// Vanilla scaled dot-product attention; `causal` limits query i to keys <= i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal = false);

Tensor mask_tensor(const Mask& mask);

class Transformer {
 public:
  Transformer(ModelConfig cfg, std::vector<HeadSpec> specs, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<HeadSpec>& head_specs() const { return specs_; }

  // masks[i] belongs to head_specs()[i] and is L_src x L_src.
  Tensor encode(std::span<const int> src, std::span<const Mask> masks) const;
  // Logits over the target vocabulary for every decoder input position.
  Tensor decode(const Tensor& memory, std::span<const int> trg_in, std::span<const Mask> masks) const;
  Tensor forward(std::span<const int> src, std::span<const int> trg_in,
                 std::span<const Mask> masks) const;

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Copies values from a checkpoint; names and shapes must match exactly.
  void load(const std::vector<NamedTensor>& tensors);

 private:
  struct HeadWeights {
    Tensor wq, wk, wv, wo;  // wk undefined for scene-aware cross heads
  };
  struct LayerNorm {
    Tensor gain, bias;
  };
  struct FeedForward {
    Tensor w1, b1, w2, b2;
  };
  struct EncoderLayer {
    LayerNorm ln_attn, ln_ff;
    std::vector<HeadWeights> heads;
    Tensor bo;
    FeedForward ff;
  };
  struct DecoderLayer {
    LayerNorm ln_self, ln_cross, ln_ff;
    std::vector<HeadWeights> self_heads, cross_heads;
    Tensor self_bo, cross_bo;
    FeedForward ff;
  };

  // Spec index assigned to each slot, or -1.
  int slot_spec(Site site, int layer, int head) const;
  Tensor make_param(const std::string& name, int rows, int cols, double bound);
  Tensor embed(const Tensor& table, std::span<const int> ids) const;
  Tensor feed_forward(const FeedForward& ff, const Tensor& x) const;
  void check_masks(std::span<const Mask> masks, int src_len) const;

  ModelConfig cfg_;
  std::vector<HeadSpec> specs_;
  std::vector<std::vector<int>> enc_slots_, cross_slots_;  // [layer][head] -> spec
  std::vector<NamedTensor> params_;
  std::mt19937_64 rng_;

  Tensor src_embed_, trg_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm enc_final_, dec_final_;
  Tensor out_w_, out_b_;
};

// Sinusoidal position table.
Tensor positional_encoding(int length, int d_model);

// Per-sentence structure the mask families draw on; either may be absent.
struct SentenceStructure {
  const SceneCover* cover = nullptr;
  const UdGraph* tree = nullptr;
};

// One subword-level mask per head spec. Throws ConfigError when a spec needs
// structure the sentence lacks, DimensionError when the structure and the
// alignment disagree on the word count.
std::vector<Mask> build_head_masks(std::span<const HeadSpec> specs, const SentenceStructure& structure,
                                   const Alignment& align);

// --- training ------------------------------------------------------------------

struct TrainingExample {
  std::vector<int> src;
  std::vector<int> trg;  // without BOS/EOS
  std::vector<Mask> masks;  // one per head spec
};

struct TrainResult {
  std::vector<double> losses;  // per step, before the update
};

// Adam with the inverse-square-root schedule on label-smoothed cross entropy,
// a batch being the token-weighted mean over its sentences. Throws
// NumericError naming the step on a non-finite loss and ConfigError when an
// example lacks a mask for some head spec.
TrainResult train(Transformer& model, std::span<const TrainingExample> data, const TrainConfig& cfg,
                  int bos, int eos, const std::function<void(int, double)>& on_step = {});

// --- decoding --------------------------------------------------------------------

// Next-token log-probabilities given the tokens generated so far.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) = 0;
  virtual int eos() const = 0;
};

class TransformerScorer : public StepScorer {
 public:
  TransformerScorer(const Transformer& model, std::span<const int> src, std::vector<Mask> masks,
                    int bos, int eos);
  std::vector<double> next_log_probs(std::span<const int> prefix) override;
  int eos() const override { return eos_; }

 private:
  const Transformer& model_;
  std::vector<Mask> masks_;
  Tensor memory_;
  int bos_, eos_;
};

struct DecodeResult {
  std::vector<int> tokens;  // includes the final EOS when finished
  double log_prob = 0.0;
  double score = 0.0;  // length-normalised
  bool finished = false;
};

double length_penalty(int length, double alpha);  // ((5 + len) / 6)^alpha

DecodeResult greedy_search(StepScorer& scorer, int max_len);
DecodeResult beam_search(StepScorer& scorer, const DecodeConfig& cfg);

}  // namespace semtx
