#pragma once

// Toy autoregressive REMI decoder: one causal self-attention block with a
// residual, KV-cached nucleus sampling, and decoder tuning against a frozen
// alignment model through soft (expected) token embeddings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "textmidi/align.hpp"
#include "textmidi/optim.hpp"
#include "textmidi/random.hpp"
#include "textmidi/remi.hpp"

namespace textmidi {

inline constexpr int kBosToken = kVocabSize;  // decoder input only, never emitted

struct DecoderConfig {
  int embed_dim = 64;
  int max_length = 512;
  std::uint64_t seed = 0;

  void validate() const {
    if (embed_dim <= 0) throw std::invalid_argument("decoder embed_dim must be positive");
    if (max_length <= 0) throw std::invalid_argument("decoder max_length must be positive");
  }
};

struct GenerationConfig {
  double nucleus_p = 0.9;
  int max_tokens = 512;
  int tune_epochs = 100;
  double tune_lr = 1e-3;
  OptimizerKind tune_optimizer = OptimizerKind::Adam;
  int tune_context = 64;  // length of the sampled context the tuning loss is taken over
  bool early_stop = false;
  int patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  std::string prompt;

  void validate() const {
    if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw std::invalid_argument("nucleus_p must lie in (0, 1]");
    if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
    if (tune_epochs < 0) throw std::invalid_argument("tune_epochs must be non-negative");
    if (!(tune_lr > 0.0)) throw std::invalid_argument("tune_lr must be positive");
    if (tune_context <= 0) throw std::invalid_argument("tune_context must be positive");
    if (patience <= 0) throw std::invalid_argument("patience must be positive");
  }
};

inline nlohmann::ordered_json to_json(const GenerationConfig& c) {
  return {{"nucleus_p", c.nucleus_p},       {"max_tokens", c.max_tokens},
          {"tune_epochs", c.tune_epochs},   {"tune_lr", c.tune_lr},
          {"tune_optimizer", to_string(c.tune_optimizer)}, {"tune_context", c.tune_context},
          {"early_stop", c.early_stop},     {"patience", c.patience},
          {"min_delta", c.min_delta},       {"seed", c.seed},
          {"prompt", c.prompt}};
}

struct DecoderModel {
  DecoderConfig config;
  MatrixXd token_embed;  // 405 tokens + BOS
  MatrixXd pos_embed;    // max_length + 1 positions (BOS occupies position 0)
  MatrixXd wq, wk, wv, wo;
  MatrixXd out;  // d x 405

  std::vector<ParamRef> parameters() {
    return {param_ref("token_embed", token_embed), param_ref("pos_embed", pos_embed), param_ref("wq", wq),
            param_ref("wk", wk), param_ref("wv", wv), param_ref("wo", wo), param_ref("out", out)};
  }

  bool all_finite() const {
    for (const MatrixXd* m : {&token_embed, &pos_embed, &wq, &wk, &wv, &wo, &out}) {
      if (!m->allFinite()) return false;
    }
    return true;
  }
};

inline DecoderModel init_decoder(const DecoderConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const Index d = config.embed_dim;
  const double w = 1.0 / std::sqrt(static_cast<double>(d));
  DecoderModel m;
  m.config = config;
  m.token_embed = gaussian_matrix(kVocabSize + 1, d, 1.0, rng);
  m.pos_embed = gaussian_matrix(config.max_length + 1, d, 0.1, rng);
  m.wq = gaussian_matrix(d, d, w, rng);
  m.wk = gaussian_matrix(d, d, w, rng);
  m.wv = gaussian_matrix(d, d, w, rng);
  m.wo = gaussian_matrix(d, d, w, rng);
  m.out = gaussian_matrix(d, kVocabSize, w, rng);
  return m;
}

struct DecoderGrads {
  SparseRows token_embed;
  SparseRows pos_embed;
  MatrixXd wq, wk, wv, wo, out;

  static DecoderGrads zeros_like(const DecoderModel& m) {
    const Index d = m.config.embed_dim;
    DecoderGrads g;
    g.wq = MatrixXd::Zero(d, d);
    g.wk = MatrixXd::Zero(d, d);
    g.wv = MatrixXd::Zero(d, d);
    g.wo = MatrixXd::Zero(d, d);
    g.out = MatrixXd::Zero(d, kVocabSize);
    return g;
  }

  // Same order as DecoderModel::parameters().
  std::vector<GradRef> refs() const {
    return {{nullptr, &token_embed}, {nullptr, &pos_embed}, {wq.data()}, {wk.data()},
            {wv.data()},             {wo.data()},           {out.data()}};
  }
};

// Full teacher-forced pass over inputs (BOS first). Row i of `logits`
// scores the token following inputs[0..i].
struct DecoderPass {
  std::vector<int> inputs;
  MatrixXd x, q, k, v, a, c, h, logits;
};

inline DecoderPass forward_all(const DecoderModel& m, std::span<const int> inputs) {
  const Index n = static_cast<Index>(inputs.size());
  if (n == 0) throw std::invalid_argument("decoder: empty input");
  if (n > m.pos_embed.rows()) throw std::invalid_argument("decoder: prefix longer than max_length");
  DecoderPass p;
  p.inputs.assign(inputs.begin(), inputs.end());
  p.x.resize(n, m.config.embed_dim);
  for (Index i = 0; i < n; ++i) {
    const int t = inputs[static_cast<std::size_t>(i)];
    if (t < 0 || t > kBosToken) throw std::out_of_range("decoder input id " + std::to_string(t));
    p.x.row(i) = m.token_embed.row(t) + m.pos_embed.row(i);
  }
  p.q = p.x * m.wq;
  p.k = p.x * m.wk;
  p.v = p.x * m.wv;
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.config.embed_dim));
  MatrixXd s = p.q * p.k.transpose() * scale;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
  }
  p.a = softmax_rows(s);
  p.c = p.a * p.v;
  p.h = p.x + p.c * m.wo;
  p.logits = p.h * m.out;
  return p;
}

inline std::vector<int> decoder_inputs(std::span<const TokenId> prefix) {
  std::vector<int> in;
  in.reserve(prefix.size() + 1);
  in.push_back(kBosToken);
  in.insert(in.end(), prefix.begin(), prefix.end());
  return in;
}

inline VectorXd decoder_logits(std::span<const TokenId> prefix, const DecoderModel& m) {
  if (static_cast<int>(prefix.size()) > m.config.max_length) throw std::invalid_argument("decoder: prefix too long");
  for (TokenId t : prefix) {
    if (t < 0 || t >= kVocabSize) throw std::out_of_range("prefix token " + std::to_string(t));
  }
  const DecoderPass p = forward_all(m, decoder_inputs(prefix));
  return p.logits.row(p.logits.rows() - 1).transpose();
}

inline void decoder_backward(const DecoderModel& m, const DecoderPass& p, const MatrixXd& d_logits, DecoderGrads& g) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.config.embed_dim));
  g.out += p.h.transpose() * d_logits;
  const MatrixXd dh = d_logits * m.out.transpose();
  g.wo += p.c.transpose() * dh;
  const MatrixXd dc = dh * m.wo.transpose();
  const MatrixXd da = dc * p.v.transpose();
  const MatrixXd dv = p.a.transpose() * dc;
  const MatrixXd ds = softmax_rows_backward(p.a, da) * scale;
  const MatrixXd dq = ds * p.k;
  const MatrixXd dk = ds.transpose() * p.q;
  g.wq += p.x.transpose() * dq;
  g.wk += p.x.transpose() * dk;
  g.wv += p.x.transpose() * dv;
  const MatrixXd dx = dh + dq * m.wq.transpose() + dk * m.wk.transpose() + dv * m.wv.transpose();
  for (Index i = 0; i < dx.rows(); ++i) {
    g.token_embed.add(p.inputs[static_cast<std::size_t>(i)], dx.row(i));
    g.pos_embed.add(i, dx.row(i));
  }
}

// Incremental decoding with cached keys and values; produces the same logits
// as forward_all row by row.
class DecoderState {
 public:
  explicit DecoderState(const DecoderModel& m) : m_(m) {}

  std::size_t length() const { return static_cast<std::size_t>(n_); }

  VectorXd push(int token) {
    if (n_ >= m_.pos_embed.rows()) throw std::invalid_argument("decoder: sequence longer than max_length");
    const Index d = m_.config.embed_dim;
    if (k_.rows() == 0) {
      k_.resize(m_.pos_embed.rows(), d);
      v_.resize(m_.pos_embed.rows(), d);
    }
    const RowVectorXd x = m_.token_embed.row(token) + m_.pos_embed.row(n_);
    const RowVectorXd q = x * m_.wq;
    k_.row(n_) = x * m_.wk;
    v_.row(n_) = x * m_.wv;
    ++n_;
    RowVectorXd s = (k_.topRows(n_) * q.transpose()).transpose() / std::sqrt(static_cast<double>(d));
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    const RowVectorXd h = x + (s * v_.topRows(n_)) * m_.wo;
    return (h * m_.out).transpose();
  }

 private:
  const DecoderModel& m_;
  MatrixXd k_, v_;
  Index n_ = 0;
};

// ---------------------------------------------------------------------------
// Nucleus sampling

inline VectorXd softmax(const VectorXd& logits) {
  VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

struct Nucleus {
  std::vector<int> ids;       // descending probability, ties by lower id
  std::vector<double> probs;  // renormalized over the nucleus
};

// The smallest prefix of the sorted distribution whose mass reaches p. A
// 1e-12 slack absorbs rounding in the cumulative sum.
inline Nucleus nucleus(const VectorXd& probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("nucleus p must lie in (0, 1]");
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  Nucleus n;
  double mass = 0.0;
  for (int id : order) {
    n.ids.push_back(id);
    mass += probs[id];
    if (mass >= p - 1e-12) break;
  }
  for (int id : n.ids) n.probs.push_back(probs[id] / mass);
  return n;
}

inline int nucleus_sample_probs(const VectorXd& probs, double p, Rng& rng) {
  const Nucleus n = nucleus(probs, p);
  const double u = uniform_unit(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < n.ids.size(); ++i) {
    cum += n.probs[i];
    if (u < cum) return n.ids[i];
  }
  return n.ids.back();
}

inline int nucleus_sample(const VectorXd& logits, double p, Rng& rng) {
  return nucleus_sample_probs(softmax(logits), p, rng);
}

// Samples until Eos or max_tokens; the result is raw and usually needs repair.
inline RemiSequence generate_raw(const DecoderModel& m, const GenerationConfig& config) {
  config.validate();
  if (config.max_tokens > m.config.max_length) throw std::invalid_argument("max_tokens exceeds decoder max_length");
  Rng rng(config.seed);
  DecoderState state(m);
  std::vector<TokenId> out;
  VectorXd logits = state.push(kBosToken);
  while (static_cast<int>(out.size()) < config.max_tokens) {
    const int t = nucleus_sample(logits, config.nucleus_p, rng);
    out.push_back(t);
    if (t == kEosToken || static_cast<int>(out.size()) == config.max_tokens) break;
    logits = state.push(t);
  }
  return RemiSequence::from_tokens(std::move(out));
}

// ---------------------------------------------------------------------------
// Alignment-guided tuning

struct TuneLoss {
  double loss = 0.0;
  DecoderGrads grads;
};

// 1 - cos between the two cross-attended summaries, where the music side is
// the sequence of soft tokens softmax(logits_i) · E_music. The alignment
// model only supplies values; it receives no gradient.
inline double tune_loss(const DecoderModel& dec, const AlignModel& align, const MatrixXd& text,
                        std::span<const int> inputs, DecoderGrads* grads) {
  const DecoderPass pass = forward_all(dec, inputs);
  const MatrixXd probs = softmax_rows(pass.logits);
  const auto table = align.music_embed.topRows(kVocabSize);
  const MatrixXd soft = probs * table;
  const CrossPass cp = cross_attend(soft, text, align);
  const double loss = 1.0 - cp.music_embedding().dot(cp.text_embedding());
  if (grads) {
    MatrixXd d_soft;
    MatrixXd d_text;
    cross_attend_backward(cp, -cp.text_embedding(), -cp.music_embedding(), align, nullptr, d_soft, d_text);
    const MatrixXd d_probs = d_soft * table.transpose();
    decoder_backward(dec, pass, softmax_rows_backward(probs, d_probs), *grads);
  }
  return loss;
}

struct TuneResult {
  DecoderModel decoder;
  std::vector<double> loss_history;  // loss at the start of each epoch
  std::vector<TokenId> context;
  RemiSequence raw;
  RemiSequence repaired;
};

// Draws a context from the starting decoder, then takes one optimizer step
// per epoch on the tuning loss over that fixed context.
inline TuneResult clip_guided_tune(const DecoderModel& decoder, const AlignModel& align, const std::string& prompt,
                                   const GenerationConfig& config) {
  config.validate();
  if (prompt.empty()) throw std::invalid_argument("prompt must be non-empty");
  TuneResult r{decoder, {}, {}, {}, {}};
  const MatrixXd text = text_states(tokenize_text(prompt, align.config.text_hash_buckets), align);

  GenerationConfig ctx_cfg = config;
  ctx_cfg.max_tokens = std::min(config.tune_context, decoder.config.max_length);
  ctx_cfg.seed = config.seed ^ 0xc0c0c0c0c0c0c0c0ull;
  r.context = generate_raw(decoder, ctx_cfg).tokens;
  std::vector<int> inputs = decoder_inputs(r.context);
  inputs.pop_back();  // the distribution after the last sampled token is unused

  Optimizer opt(config.tune_optimizer);
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 1; epoch <= config.tune_epochs; ++epoch) {
    DecoderGrads g = DecoderGrads::zeros_like(r.decoder);
    const double loss = tune_loss(r.decoder, align, text, inputs, &g);
    const auto params = r.decoder.parameters();
    const auto grads = g.refs();
    const double gn = grad_norm(params, grads);
    if (!std::isfinite(loss) || !std::isfinite(gn)) {
      std::ostringstream msg;
      msg << "non-finite tuning loss at epoch " << epoch << " (lr " << config.tune_lr << ", grad-norm " << gn
          << ", loss " << loss << ")";
      throw TrainingError(msg.str());
    }
    r.loss_history.push_back(loss);
    if (config.early_stop) {
      if (loss < best - config.min_delta) {
        best = loss;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
    opt.step(params, grads, config.tune_lr);
  }
  r.raw = generate_raw(r.decoder, config);
  r.repaired = repair(r.raw);
  return r;
}

using DecoderGradientHook = std::function<void(DecoderGrads&)>;

inline GradCheckReport decoder_grad_check(const DecoderModel& decoder, const AlignModel& align,
                                          const std::string& prompt, std::span<const TokenId> context, double h,
                                          Rng& rng, std::size_t samples = 50, const DecoderGradientHook& hook = {}) {
  DecoderModel m = decoder;
  const MatrixXd text = text_states(tokenize_text(prompt, align.config.text_hash_buckets), align);
  const std::vector<int> inputs = decoder_inputs(context);
  DecoderGrads g = DecoderGrads::zeros_like(m);
  tune_loss(m, align, text, inputs, &g);
  if (hook) hook(g);
  return finite_difference_check(m.parameters(), g.refs(), [&] { return tune_loss(m, align, text, inputs, nullptr); },
                                 h, samples, rng);
}

}  // namespace textmidi
