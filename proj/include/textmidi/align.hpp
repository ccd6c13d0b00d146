#pragma once

// Toy text-music alignment: embedding-table encoders, one cross-modal
// attention block per direction, projection heads, symmetric InfoNCE with a
// learnable temperature, and a hand-written backward pass.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "textmidi/dataset.hpp"
#include "textmidi/optim.hpp"
#include "textmidi/random.hpp"
#include "textmidi/remi.hpp"

namespace textmidi {

inline constexpr int kMusicPadToken = kVocabSize;  // row 405 of the music table
inline constexpr double kMinTemperature = 0.01;
inline constexpr double kMaxTemperature = 100.0;

enum class AlignLoss { InBatch, Pairwise };

inline std::string to_string(AlignLoss l) { return l == AlignLoss::Pairwise ? "pairwise" : "in-batch"; }
inline AlignLoss parse_align_loss(const std::string& s) {
  if (s == "in-batch") return AlignLoss::InBatch;
  if (s == "pairwise") return AlignLoss::Pairwise;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

struct AlignConfig {
  int embed_dim = 64;
  int heads = 1;
  int batch_size = 8;
  double lr_max = 1e-4;
  double lr_min = 5e-6;
  Scheduler scheduler = Scheduler::Cosine;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  AlignLoss loss = AlignLoss::InBatch;
  int epochs = 10;
  std::uint64_t seed = 0;
  double temperature_init = 0.07;
  int text_hash_buckets = 32768;

  void validate() const {
    if (embed_dim <= 0) throw std::invalid_argument("embed_dim must be positive");
    if (heads <= 0 || embed_dim % heads != 0) throw std::invalid_argument("heads must divide embed_dim");
    if (!(lr_min > 0.0 && lr_min <= lr_max)) throw std::invalid_argument("need 0 < lr_min <= lr_max");
    if (loss == AlignLoss::InBatch && batch_size < 2) throw std::invalid_argument("in-batch loss needs batch_size >= 2");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (!(temperature_init >= kMinTemperature && temperature_init <= kMaxTemperature))
      throw std::invalid_argument("temperature_init must lie in [0.01, 100]");
    if (text_hash_buckets <= 0) throw std::invalid_argument("text_hash_buckets must be positive");
  }
};

inline nlohmann::ordered_json to_json(const AlignConfig& c) {
  return {{"embed_dim", c.embed_dim},         {"heads", c.heads},
          {"batch_size", c.batch_size},       {"lr_max", c.lr_max},
          {"lr_min", c.lr_min},               {"scheduler", to_string(c.scheduler)},
          {"optimizer", to_string(c.optimizer)}, {"loss", to_string(c.loss)},
          {"epochs", c.epochs},               {"seed", c.seed},
          {"temperature_init", c.temperature_init}, {"text_hash_buckets", c.text_hash_buckets}};
}

inline AlignConfig align_config_from_json(const nlohmann::json& j) {
  AlignConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.scheduler = parse_scheduler(j.value("scheduler", to_string(c.scheduler)));
  c.optimizer = parse_optimizer(j.value("optimizer", to_string(c.optimizer)));
  c.loss = parse_align_loss(j.value("loss", to_string(c.loss)));
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.temperature_init = j.value("temperature_init", c.temperature_init);
  c.text_hash_buckets = j.value("text_hash_buckets", c.text_hash_buckets);
  return c;
}

// ---------------------------------------------------------------------------
// Text tokenization

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Lowercased words split on runs of non-alphanumeric ASCII, hashed into
// [0, buckets). An empty caption maps to the pad id `buckets`. Bytes >= 0x80
// count as word characters so UTF-8 words stay whole.
inline std::vector<int> tokenize_text(std::string_view caption, int buckets) {
  std::vector<int> ids;
  std::string word;
  auto emit = [&] {
    if (!word.empty()) ids.push_back(static_cast<int>(fnv1a(word) % static_cast<std::uint64_t>(buckets)));
    word.clear();
  };
  for (unsigned char c : caption) {
    if (std::isalnum(c) || c >= 0x80) {
      word.push_back(static_cast<char>(c >= 0x80 ? c : std::tolower(c)));
    } else {
      emit();
    }
  }
  emit();
  if (ids.empty()) ids.push_back(buckets);
  return ids;
}

// ---------------------------------------------------------------------------
// Model

struct AttentionWeights {
  MatrixXd wq, wk, wv, wo;
};

struct AlignModel {
  AlignConfig config;
  MatrixXd music_embed;  // (405 + pad) x d
  MatrixXd text_embed;   // (buckets + pad) x d
  AttentionWeights m2t;  // music queries over text
  AttentionWeights t2m;  // text queries over music
  MatrixXd music_head;
  MatrixXd text_head;
  double log_temperature = 0.0;

  double temperature() const { return std::clamp(std::exp(log_temperature), kMinTemperature, kMaxTemperature); }
  bool temperature_clamped() const {
    const double t = std::exp(log_temperature);
    return t < kMinTemperature || t > kMaxTemperature;
  }

  std::vector<ParamRef> parameters() {
    return {param_ref("music_embed", music_embed), param_ref("text_embed", text_embed),
            param_ref("m2t.wq", m2t.wq),           param_ref("m2t.wk", m2t.wk),
            param_ref("m2t.wv", m2t.wv),           param_ref("m2t.wo", m2t.wo),
            param_ref("t2m.wq", t2m.wq),           param_ref("t2m.wk", t2m.wk),
            param_ref("t2m.wv", t2m.wv),           param_ref("t2m.wo", t2m.wo),
            param_ref("music_head", music_head),   param_ref("text_head", text_head),
            param_ref("log_temperature", log_temperature)};
  }

  bool all_finite() const {
    for (const MatrixXd* m : {&music_embed, &text_embed, &m2t.wq, &m2t.wk, &m2t.wv, &m2t.wo, &t2m.wq, &t2m.wk,
                              &t2m.wv, &t2m.wo, &music_head, &text_head}) {
      if (!m->allFinite()) return false;
    }
    return std::isfinite(log_temperature);
  }

  friend bool operator==(const AlignModel& a, const AlignModel& b) {
    auto same = [](const MatrixXd& x, const MatrixXd& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() &&
             std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
    };
    return same(a.music_embed, b.music_embed) && same(a.text_embed, b.text_embed) && same(a.m2t.wq, b.m2t.wq) &&
           same(a.m2t.wk, b.m2t.wk) && same(a.m2t.wv, b.m2t.wv) && same(a.m2t.wo, b.m2t.wo) &&
           same(a.t2m.wq, b.t2m.wq) && same(a.t2m.wk, b.t2m.wk) && same(a.t2m.wv, b.t2m.wv) &&
           same(a.t2m.wo, b.t2m.wo) && same(a.music_head, b.music_head) && same(a.text_head, b.text_head) &&
           std::memcmp(&a.log_temperature, &b.log_temperature, sizeof(double)) == 0;
  }
};

inline MatrixXd gaussian_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) m(r, c) = stddev * standard_normal(rng);
  }
  return m;
}

inline AlignModel init_align_model(const AlignConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const Index d = config.embed_dim;
  const double w = 1.0 / std::sqrt(static_cast<double>(d));
  AlignModel m;
  m.config = config;
  m.music_embed = gaussian_matrix(kVocabSize + 1, d, 1.0, rng);
  m.text_embed = gaussian_matrix(config.text_hash_buckets + 1, d, 1.0, rng);
  for (AttentionWeights* a : {&m.m2t, &m.t2m}) {
    a->wq = gaussian_matrix(d, d, w, rng);
    a->wk = gaussian_matrix(d, d, w, rng);
    a->wv = gaussian_matrix(d, d, w, rng);
    a->wo = gaussian_matrix(d, d, w, rng);
  }
  m.music_head = gaussian_matrix(d, d, w, rng);
  m.text_head = gaussian_matrix(d, d, w, rng);
  m.log_temperature = std::log(config.temperature_init);
  return m;
}

struct AttentionGrads {
  MatrixXd wq, wk, wv, wo;
};

struct AlignGrads {
  SparseRows music_embed;
  SparseRows text_embed;
  AttentionGrads m2t;
  AttentionGrads t2m;
  MatrixXd music_head;
  MatrixXd text_head;
  double log_temperature = 0.0;

  static AlignGrads zeros_like(const AlignModel& m) {
    const Index d = m.config.embed_dim;
    AlignGrads g;
    for (AttentionGrads* a : {&g.m2t, &g.t2m}) {
      a->wq = MatrixXd::Zero(d, d);
      a->wk = MatrixXd::Zero(d, d);
      a->wv = MatrixXd::Zero(d, d);
      a->wo = MatrixXd::Zero(d, d);
    }
    g.music_head = MatrixXd::Zero(d, d);
    g.text_head = MatrixXd::Zero(d, d);
    return g;
  }

  // Same order as AlignModel::parameters().
  std::vector<GradRef> refs() const {
    return {{nullptr, &music_embed}, {nullptr, &text_embed}, {m2t.wq.data()}, {m2t.wk.data()}, {m2t.wv.data()},
            {m2t.wo.data()},         {t2m.wq.data()},        {t2m.wk.data()}, {t2m.wv.data()}, {t2m.wo.data()},
            {music_head.data()},     {text_head.data()},     {&log_temperature}};
  }
};

// ---------------------------------------------------------------------------
// Forward pieces

inline MatrixXd gather_rows(const MatrixXd& table, std::span<const int> ids) {
  MatrixXd out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("embedding id " + std::to_string(ids[i]));
    out.row(static_cast<Index>(i)) = table.row(ids[i]);
  }
  return out;
}

inline MatrixXd music_states(std::span<const TokenId> tokens, const AlignModel& m) {
  if (tokens.empty()) throw std::invalid_argument("empty music sequence");
  return gather_rows(m.music_embed, tokens);
}

inline MatrixXd text_states(std::span<const int> ids, const AlignModel& m) {
  if (ids.empty()) throw std::invalid_argument("empty text sequence");
  return gather_rows(m.text_embed, ids);
}

inline MatrixXd softmax_rows(const MatrixXd& x) {
  MatrixXd out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// d/dx of softmax rows: a ∘ (da - rowsum(da ∘ a)).
inline MatrixXd softmax_rows_backward(const MatrixXd& a, const MatrixXd& da) {
  const VectorXd dot = (a.array() * da.array()).rowwise().sum();
  return (a.array() * (da.colwise() - dot).array()).matrix();
}

// Queries x attend over context y; the output is mean-pooled, projected and
// L2-normalized.
struct AttentionPass {
  MatrixXd x, y, q, k, v, c, o;
  std::vector<MatrixXd> weights;  // one Lq x Lk matrix per head
  RowVectorXd pooled, z, e;
};

inline AttentionPass attend(const AttentionWeights& w, const MatrixXd& head, const MatrixXd& x, const MatrixXd& y,
                            int heads) {
  AttentionPass p;
  p.x = x;
  p.y = y;
  p.q = x * w.wq;
  p.k = y * w.wk;
  p.v = y * w.wv;
  const Index d = w.wq.cols();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  p.c.resize(x.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Index c0 = h * dh;
    MatrixXd a = softmax_rows(p.q.middleCols(c0, dh) * p.k.middleCols(c0, dh).transpose() * scale);
    p.c.middleCols(c0, dh) = a * p.v.middleCols(c0, dh);
    p.weights.push_back(std::move(a));
  }
  p.o = p.c * w.wo;
  p.pooled = p.o.colwise().mean();
  p.z = p.pooled * head;
  const double n = p.z.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("attention output has zero or non-finite norm");
  p.e = p.z / n;
  return p;
}

// Accumulates into dx, dy; parameter gradients only when gw/ghead are given.
inline void attend_backward(const AttentionWeights& w, const MatrixXd& head, const AttentionPass& p,
                            const RowVectorXd& de, int heads, AttentionGrads* gw, MatrixXd* ghead, MatrixXd& dx,
                            MatrixXd& dy) {
  const double n = p.z.norm();
  const RowVectorXd dz = (de - p.e * p.e.dot(de)) / n;
  if (ghead) *ghead += p.pooled.transpose() * dz;
  const RowVectorXd dpooled = dz * head.transpose();
  const MatrixXd d_o = MatrixXd::Ones(p.o.rows(), 1) * dpooled / static_cast<double>(p.o.rows());
  if (gw) gw->wo += p.c.transpose() * d_o;
  const MatrixXd dc = d_o * w.wo.transpose();
  const Index d = w.wq.cols();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatrixXd dq(p.q.rows(), d);
  MatrixXd dk(p.k.rows(), d);
  MatrixXd dv(p.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Index c0 = h * dh;
    const MatrixXd& a = p.weights[static_cast<std::size_t>(h)];
    const MatrixXd dch = dc.middleCols(c0, dh);
    const MatrixXd da = dch * p.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh) = a.transpose() * dch;
    const MatrixXd dl = softmax_rows_backward(a, da) * scale;
    dq.middleCols(c0, dh) = dl * p.k.middleCols(c0, dh);
    dk.middleCols(c0, dh) = dl.transpose() * p.q.middleCols(c0, dh);
  }
  if (gw) {
    gw->wq += p.x.transpose() * dq;
    gw->wk += p.y.transpose() * dk;
    gw->wv += p.y.transpose() * dv;
  }
  dx += dq * w.wq.transpose();
  dy += dk * w.wk.transpose() + dv * w.wv.transpose();
}

struct CrossPass {
  AttentionPass music;  // music queries over text keys/values
  AttentionPass text;   // text queries over music keys/values

  const RowVectorXd& music_embedding() const { return music.e; }
  const RowVectorXd& text_embedding() const { return text.e; }
};

inline CrossPass cross_attend(const MatrixXd& music, const MatrixXd& text, const AlignModel& m) {
  if (music.rows() == 0 || text.rows() == 0) throw std::invalid_argument("cross_attend: empty state list");
  return {attend(m.m2t, m.music_head, music, text, m.config.heads),
          attend(m.t2m, m.text_head, text, music, m.config.heads)};
}

// Gradients of the two summaries flow back into both state lists; model
// gradients are accumulated only when `grads` is given.
inline void cross_attend_backward(const CrossPass& p, const RowVectorXd& d_music, const RowVectorXd& d_text,
                                  const AlignModel& m, AlignGrads* grads, MatrixXd& d_music_states,
                                  MatrixXd& d_text_states) {
  d_music_states = MatrixXd::Zero(p.music.x.rows(), p.music.x.cols());
  d_text_states = MatrixXd::Zero(p.text.x.rows(), p.text.x.cols());
  attend_backward(m.m2t, m.music_head, p.music, d_music, m.config.heads, grads ? &grads->m2t : nullptr,
                  grads ? &grads->music_head : nullptr, d_music_states, d_text_states);
  attend_backward(m.t2m, m.text_head, p.text, d_text, m.config.heads, grads ? &grads->t2m : nullptr,
                  grads ? &grads->text_head : nullptr, d_text_states, d_music_states);
}

inline RowVectorXd normalized_projection(const MatrixXd& states, const MatrixXd& head) {
  const RowVectorXd z = states.colwise().mean() * head;
  const double n = z.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("embedding has zero or non-finite norm");
  return z / n;
}

// Self-only paths, used when no paired modality is at hand.
inline RowVectorXd encode_music(std::span<const TokenId> tokens, const AlignModel& m) {
  return normalized_projection(music_states(tokens, m), m.music_head);
}
inline RowVectorXd encode_music(const RemiSequence& seq, const AlignModel& m) { return encode_music(seq.tokens, m); }

inline RowVectorXd encode_text(std::span<const int> ids, const AlignModel& m) {
  return normalized_projection(text_states(ids, m), m.text_head);
}
inline RowVectorXd encode_text(std::string_view caption, const AlignModel& m) {
  return encode_text(tokenize_text(caption, m.config.text_hash_buckets), m);
}

// ---------------------------------------------------------------------------
// Losses

// -log softmax(x)[target], split as (max - x[target]) + log1p(tail) so that a
// tiny tail is not rounded away against a large maximum.
inline double softmax_cross_entropy(const VectorXd& x, Index target) {
  Index top = 0;
  const double mx = x.maxCoeff(&top);
  double rest = 0.0;
  for (Index j = 0; j < x.size(); ++j) {
    if (j != top) rest += std::exp(x[j] - mx);
  }
  return (mx - x[target]) + std::log1p(rest);
}

struct InfoNceResult {
  double loss = 0.0;
  MatrixXd d_music;
  MatrixXd d_text;
  double d_similarity_scale = 0.0;  // dL/dlog(tau), before clamping
};

// Symmetric InfoNCE on rows of unit vectors with S = music textᵀ / tau.
inline InfoNceResult info_nce_with_grad(const MatrixXd& music, const MatrixXd& text, double tau) {
  const Index n = music.rows();
  if (n < 2 || text.rows() != n) throw std::invalid_argument("info_nce needs N >= 2 matching rows");
  const MatrixXd s = music * text.transpose() / tau;
  if (!s.allFinite()) throw std::domain_error("info_nce: non-finite similarity");
  const MatrixXd pr = softmax_rows(s);
  const MatrixXd pc = softmax_rows(s.transpose()).transpose();
  double row_ce = 0.0;
  double col_ce = 0.0;
  for (Index i = 0; i < n; ++i) {
    row_ce += softmax_cross_entropy(s.row(i).transpose(), i);
    col_ce += softmax_cross_entropy(s.col(i), i);
  }
  InfoNceResult r;
  r.loss = 0.5 * (row_ce + col_ce) / static_cast<double>(n);
  const MatrixXd eye = MatrixXd::Identity(n, n);
  const MatrixXd ds = 0.5 * ((pr - eye) + (pc - eye)) / static_cast<double>(n);
  r.d_music = ds * text / tau;
  r.d_text = ds.transpose() * music / tau;
  r.d_similarity_scale = -(ds.array() * s.array()).sum();
  return r;
}

inline double info_nce(const MatrixXd& music, const MatrixXd& text, double tau) {
  return info_nce_with_grad(music, text, tau).loss;
}

// Softmax cross-entropy of the positive against explicit negatives, on
// similarities already divided by tau.
inline double pairwise_loss(double sim_positive, std::span<const double> sim_negatives) {
  if (sim_negatives.empty()) throw std::invalid_argument("pairwise_loss: no negative provided");
  VectorXd all(static_cast<Index>(sim_negatives.size()) + 1);
  all[0] = sim_positive;
  for (std::size_t k = 0; k < sim_negatives.size(); ++k) all[static_cast<Index>(k) + 1] = sim_negatives[k];
  return softmax_cross_entropy(all, 0);
}

// ---------------------------------------------------------------------------
// Batches

struct AlignExample {
  std::vector<TokenId> music;
  std::vector<int> text;
  std::vector<std::vector<int>> negatives;  // explicit negatives, pairwise mode
};

struct BatchResult {
  double loss = 0.0;
  AlignGrads grads;
};

namespace detail {

inline void scatter(SparseRows& g, std::span<const int> ids, const MatrixXd& d_states) {
  for (std::size_t i = 0; i < ids.size(); ++i) g.add(ids[i], d_states.row(static_cast<Index>(i)));
}

inline double in_batch(const AlignModel& m, std::span<const AlignExample> batch, AlignGrads* grads) {
  const Index n = static_cast<Index>(batch.size());
  const Index d = m.config.embed_dim;
  std::vector<CrossPass> passes;
  passes.reserve(batch.size());
  MatrixXd mu(n, d);
  MatrixXd tx(n, d);
  for (Index i = 0; i < n; ++i) {
    const AlignExample& ex = batch[static_cast<std::size_t>(i)];
    passes.push_back(cross_attend(music_states(ex.music, m), text_states(ex.text, m), m));
    mu.row(i) = passes.back().music_embedding();
    tx.row(i) = passes.back().text_embedding();
  }
  const InfoNceResult r = info_nce_with_grad(mu, tx, m.temperature());
  if (!grads) return r.loss;
  if (!m.temperature_clamped()) grads->log_temperature += r.d_similarity_scale;
  for (Index i = 0; i < n; ++i) {
    const AlignExample& ex = batch[static_cast<std::size_t>(i)];
    MatrixXd dms;
    MatrixXd dts;
    cross_attend_backward(passes[static_cast<std::size_t>(i)], r.d_music.row(i), r.d_text.row(i), m, grads, dms,
                          dts);
    scatter(grads->music_embed, ex.music, dms);
    scatter(grads->text_embed, ex.text, dts);
  }
  return r.loss;
}

// Mean over the batch of the cross-entropy of each music segment against its
// own caption and its explicit negatives; each pair runs its own cross pass.
inline double pairwise(const AlignModel& m, std::span<const AlignExample> batch, AlignGrads* grads) {
  const double tau = m.temperature();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const AlignExample& ex : batch) {
    if (ex.negatives.empty()) throw std::invalid_argument("pairwise_loss: no negative provided");
    const MatrixXd ms = music_states(ex.music, m);
    std::vector<const std::vector<int>*> captions = {&ex.text};
    for (const auto& neg : ex.negatives) captions.push_back(&neg);
    std::vector<CrossPass> passes;
    VectorXd s(static_cast<Index>(captions.size()));
    for (std::size_t k = 0; k < captions.size(); ++k) {
      passes.push_back(cross_attend(ms, text_states(*captions[k], m), m));
      s[static_cast<Index>(k)] = passes.back().music_embedding().dot(passes.back().text_embedding()) / tau;
    }
    if (!s.allFinite()) throw std::domain_error("pairwise_loss: non-finite similarity");
    const std::vector<double> negs(s.data() + 1, s.data() + s.size());
    total += pairwise_loss(s[0], negs) * inv_n;
    if (!grads) continue;
    VectorXd p = (s.array() - s.maxCoeff()).exp();
    p /= p.sum();
    VectorXd ds = p * inv_n;
    ds[0] -= inv_n;
    if (!m.temperature_clamped()) grads->log_temperature += -ds.dot(s);
    for (std::size_t k = 0; k < captions.size(); ++k) {
      const CrossPass& cp = passes[k];
      const double g = ds[static_cast<Index>(k)] / tau;
      MatrixXd dms;
      MatrixXd dts;
      cross_attend_backward(cp, g * cp.text_embedding(), g * cp.music_embedding(), m, grads, dms, dts);
      scatter(grads->music_embed, ex.music, dms);
      scatter(grads->text_embed, *captions[k], dts);
    }
  }
  return total;
}

}  // namespace detail

inline double batch_loss(const AlignModel& m, std::span<const AlignExample> batch) {
  return m.config.loss == AlignLoss::Pairwise ? detail::pairwise(m, batch, nullptr)
                                              : detail::in_batch(m, batch, nullptr);
}

inline BatchResult batch_loss_and_grad(const AlignModel& m, std::span<const AlignExample> batch) {
  BatchResult r;
  r.grads = AlignGrads::zeros_like(m);
  r.loss = m.config.loss == AlignLoss::Pairwise ? detail::pairwise(m, batch, &r.grads)
                                                : detail::in_batch(m, batch, &r.grads);
  return r;
}

// Positives become examples; in pairwise mode each carries the captions of the
// negatives built for the same segment.
inline std::vector<AlignExample> align_examples(std::span<const PairExample> pairs, int buckets) {
  std::map<std::string, std::vector<std::vector<int>>> negatives;
  for (const PairExample& p : pairs) {
    if (p.polarity == Polarity::Negative) negatives[p.segment_id].push_back(tokenize_text(p.caption, buckets));
  }
  std::vector<AlignExample> out;
  for (const PairExample& p : pairs) {
    if (p.polarity != Polarity::Positive) continue;
    AlignExample ex;
    ex.music = from_text(p.music).tokens;
    ex.text = tokenize_text(p.caption, buckets);
    if (auto it = negatives.find(p.segment_id); it != negatives.end()) ex.negatives = it->second;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct LossRecord {
  int epoch;
  std::string split;
  double loss;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainResult {
  AlignModel model;
  std::vector<LossRecord> history;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::vector<AlignExample>> fixed_batches(std::span<const AlignExample> examples, int batch_size,
                                                            std::size_t min_size) {
  std::vector<std::vector<AlignExample>> out;
  for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(examples.size(), i + static_cast<std::size_t>(batch_size));
    if (end - i >= min_size) out.emplace_back(examples.begin() + static_cast<std::ptrdiff_t>(i),
                                              examples.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Mean batch loss over fixed, unshuffled batches.
inline std::optional<double> evaluate_loss(const AlignModel& m, std::span<const AlignExample> examples) {
  const std::size_t min_size = m.config.loss == AlignLoss::InBatch ? 2 : 1;
  const auto batches = fixed_batches(examples, m.config.batch_size, min_size);
  if (batches.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& b : batches) total += batch_loss(m, b);
  return total / static_cast<double>(batches.size());
}

// Seeded shuffling per epoch, one optimizer step per batch. A trailing batch
// too small for the loss is skipped. History holds the mean train loss of the
// epoch's steps and the validation loss after the epoch.
inline TrainResult train(std::span<const AlignExample> train_set, std::span<const AlignExample> validation,
                         const AlignConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train split is empty");
  const std::size_t min_size = config.loss == AlignLoss::InBatch ? 2 : 1;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t full = train_set.size() / bs;
  const std::size_t batches_per_epoch = full + (train_set.size() % bs >= min_size ? 1 : 0);
  if (batches_per_epoch == 0) throw std::invalid_argument("train split too small for one batch");

  TrainResult result{init_align_model(config), {}};
  AlignModel& model = result.model;
  Optimizer opt(config.optimizer);
  Rng rng(config.seed ^ 0x5eed5eed5eed5eedull);
  std::vector<std::size_t> order(train_set.size());
  const long total_steps = static_cast<long>(config.epochs) * static_cast<long>(batches_per_epoch);
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(std::span<std::size_t>(order), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<AlignExample> batch;
      for (std::size_t i = b * bs; i < std::min(order.size(), (b + 1) * bs); ++i) batch.push_back(train_set[order[i]]);
      const double lr = scheduled_lr(config.scheduler, config.lr_max, config.lr_min, step, total_steps);
      BatchResult r = batch_loss_and_grad(model, batch);
      const auto params = model.parameters();
      const auto grads = r.grads.refs();
      const double gn = grad_norm(params, grads);
      if (!std::isfinite(r.loss) || !std::isfinite(gn)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << ", lr " << lr << ", grad-norm " << gn
            << ", loss " << r.loss << ")";
        throw TrainingError(msg.str());
      }
      opt.step(params, grads, lr);
      epoch_loss += r.loss;
      ++step;
    }
    result.history.push_back({epoch, "train", epoch_loss / static_cast<double>(batches_per_epoch)});
    if (auto v = evaluate_loss(model, validation)) result.history.push_back({epoch, "validation", *v});
  }
  return result;
}

inline TrainResult train(const SplitSet& split, const AlignConfig& config) {
  const auto tr = align_examples(split.train, config.text_hash_buckets);
  const auto va = align_examples(split.validation, config.text_hash_buckets);
  return train(tr, va, config);
}

inline void write_loss_csv(std::ostream& out, std::span<const LossRecord> history) {
  out << "epoch,split,loss\n";
  out.precision(17);
  for (const LossRecord& r : history) out << r.epoch << ',' << r.split << ',' << r.loss << '\n';
}

// ---------------------------------------------------------------------------
// Gradient check

// Optional hook applied to the analytic gradients before comparison.
using GradientHook = std::function<void(AlignGrads&)>;

inline GradCheckReport grad_check(const AlignModel& model, std::span<const AlignExample> batch, double h, Rng& rng,
                                  std::size_t samples = 50, const GradientHook& hook = {}) {
  AlignModel m = model;
  BatchResult r = batch_loss_and_grad(m, batch);
  if (hook) hook(r.grads);
  return finite_difference_check(m.parameters(), r.grads.refs(), [&] { return batch_loss(m, batch); }, h, samples,
                                 rng);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, config JSON, then named column-major tensors.

inline constexpr char kAlignMagic[8] = {'T', 'M', 'A', 'L', 'I', 'G', 'N', '\0'};
inline constexpr std::uint32_t kAlignCheckpointVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}
inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1u << 26)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

inline void write_tensors(std::ostream& out, const std::vector<ParamRef>& params) {
  put<std::uint64_t>(out, params.size());
  for (const ParamRef& p : params) {
    put_string(out, p.name);
    put<std::int64_t>(out, p.rows);
    put<std::int64_t>(out, p.cols);
    out.write(reinterpret_cast<const char*>(p.data), static_cast<std::streamsize>(sizeof(double) * p.size()));
  }
}

inline void read_tensors(std::istream& in, const std::vector<ParamRef>& params) {
  const auto count = get<std::uint64_t>(in);
  if (count != params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (const ParamRef& p : params) {
    const std::string name = get_string(in);
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (name != p.name || rows != p.rows || cols != p.cols)
      throw std::runtime_error("checkpoint tensor '" + name + "' does not match '" + p.name + "'");
    in.read(reinterpret_cast<char*>(p.data), static_cast<std::streamsize>(sizeof(double) * p.size()));
    if (!in) throw std::runtime_error("checkpoint truncated");
  }
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, AlignModel model) {
  out.write(kAlignMagic, sizeof kAlignMagic);
  detail::put(out, kAlignCheckpointVersion);
  detail::put_string(out, to_json(model.config).dump());
  detail::write_tensors(out, model.parameters());
}

inline AlignModel load_checkpoint(std::istream& in) {
  char magic[sizeof kAlignMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kAlignMagic, sizeof magic) != 0) throw std::runtime_error("not an alignment checkpoint");
  if (detail::get<std::uint32_t>(in) != kAlignCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const AlignConfig config = align_config_from_json(nlohmann::json::parse(detail::get_string(in)));
  AlignModel m = init_align_model(config);
  detail::read_tensors(in, m.parameters());
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const AlignModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save_checkpoint(out, model);
}

inline AlignModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return load_checkpoint(in);
}

}  // namespace textmidi
