#pragma once

// Contrastive training data: fixed-length segmentation, positive/negative
// caption pairing, grouped train/validation/test splits and JSONL files.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "textmidi/attributes.hpp"
#include "textmidi/random.hpp"
#include "textmidi/remi.hpp"

namespace textmidi {

inline constexpr int kSegmentBars = 16;

struct TokenizedPiece {
  std::string piece_id;
  std::string segment_id;  // empty for whole pieces
  RemiSequence seq;
  std::vector<int> a_rhym;
  std::vector<int> a_poly;
  std::vector<std::string> review_ids;
};

enum class Polarity { Positive, Negative };

inline std::string to_string(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

struct PairExample {
  std::string segment_id;
  std::string music;  // REMI text form
  std::string caption;
  Polarity polarity = Polarity::Positive;

  friend bool operator==(const PairExample&, const PairExample&) = default;
};

struct SplitSet {
  std::vector<PairExample> train;
  std::vector<PairExample> validation;
  std::vector<PairExample> test;
  std::uint64_t seed = 0;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline TokenizedPiece tokenize_piece(std::string piece_id, const QuantizedPiece& piece, const AttributeBins& bins,
                                     std::vector<std::string> review_ids) {
  const AttributeClasses classes = classify(bar_attributes(piece), bins);
  return {std::move(piece_id), {}, encode(piece, detect_chords(piece)), classes.rhythm, classes.polyphony,
          std::move(review_ids)};
}

// Consecutive non-overlapping windows of `bars` bars; a short tail is dropped.
inline std::vector<TokenizedPiece> segment(const TokenizedPiece& piece, int bars = kSegmentBars) {
  if (bars <= 0) throw std::invalid_argument("segment length must be positive");
  const auto& pos = piece.seq.bar_positions;
  const std::size_t seg_bars = static_cast<std::size_t>(bars);
  const std::size_t count = pos.size() / seg_bars;
  std::vector<TokenizedPiece> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t first_bar = k * seg_bars;
    const std::size_t begin = pos[first_bar];
    const std::size_t end = first_bar + seg_bars < pos.size() ? pos[first_bar + seg_bars] : piece.seq.tokens.size();
    std::vector<TokenId> tokens;
    tokens.reserve(end - begin + 1);
    for (std::size_t i = begin; i < end; ++i) {
      if (piece.seq.tokens[i] != kEosToken) tokens.push_back(piece.seq.tokens[i]);
    }
    tokens.push_back(kEosToken);

    TokenizedPiece seg;
    seg.piece_id = piece.piece_id;
    seg.segment_id = piece.piece_id + ":" + std::to_string(k);
    seg.seq = RemiSequence::from_tokens(std::move(tokens));
    auto slice = [&](const std::vector<int>& v) {
      if (v.size() != pos.size()) return std::vector<int>{};
      return std::vector<int>(v.begin() + static_cast<std::ptrdiff_t>(first_bar),
                              v.begin() + static_cast<std::ptrdiff_t>(first_bar + seg_bars));
    };
    seg.a_rhym = slice(piece.a_rhym);
    seg.a_poly = slice(piece.a_poly);
    seg.review_ids = piece.review_ids;
    out.push_back(std::move(seg));
  }
  return out;
}

// One positive per (segment, linked review) and one negative whose caption is
// drawn uniformly from reviews not linked to the segment's piece.
inline std::vector<PairExample> build_pairs(std::span<const TokenizedPiece> segments,
                                            const std::map<std::string, std::string>& reviews,
                                            std::uint64_t seed) {
  std::set<std::string> pieces;
  for (const auto& s : segments) pieces.insert(s.piece_id);
  if (pieces.size() < 2) throw DatasetError("no negative pool: need segments from at least 2 pieces");

  Rng rng(seed);
  std::map<std::string, std::vector<const std::string*>> pools;
  std::vector<PairExample> out;
  for (const TokenizedPiece& seg : segments) {
    if (seg.review_ids.empty()) throw DatasetError("segment " + seg.segment_id + " has no review ids");
    auto [pool_it, fresh] = pools.try_emplace(seg.piece_id);
    if (fresh) {
      const std::set<std::string> own(seg.review_ids.begin(), seg.review_ids.end());
      for (const auto& [id, text] : reviews) {
        if (!own.contains(id)) pool_it->second.push_back(&text);
      }
    }
    const auto& pool = pool_it->second;
    if (pool.empty()) throw DatasetError("no negative pool for piece " + seg.piece_id);

    const std::string music = to_text(seg.seq);
    for (const std::string& rid : seg.review_ids) {
      auto it = reviews.find(rid);
      if (it == reviews.end()) throw DatasetError("review " + rid + " of " + seg.segment_id + " not found");
      out.push_back({seg.segment_id, music, it->second, Polarity::Positive});
      out.push_back({seg.segment_id, music, *pool[uniform_index(rng, pool.size())], Polarity::Negative});
    }
  }
  return out;
}

// Segments are shuffled and assigned whole to a split; a segment goes to the
// bucket containing the midpoint of its examples on the cumulative 80/10/10
// scale, so every bucket lands within half a group of its target.
inline SplitSet split(std::span<const PairExample> examples, std::uint64_t seed) {
  if (examples.size() < 10) throw DatasetError("need at least 10 examples to split, got " + std::to_string(examples.size()));
  std::map<std::string, std::size_t> group_size;
  for (const auto& e : examples) ++group_size[e.segment_id];
  std::vector<std::string> ids;
  ids.reserve(group_size.size());
  for (const auto& [id, n] : group_size) ids.push_back(id);
  Rng rng(seed);
  shuffle(std::span<std::string>(ids), rng);

  // Proportions are taken over segments so that every segment stays whole.
  const double n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::floor(0.8 * n + 0.5));
  const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::floor(0.1 * n + 0.5)));
  std::map<std::string, int> bucket;
  for (std::size_t i = 0; i < ids.size(); ++i) bucket[ids[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);

  SplitSet out;
  out.seed = seed;
  for (const auto& e : examples) {
    switch (bucket[e.segment_id]) {
      case 0: out.train.push_back(e); break;
      case 1: out.validation.push_back(e); break;
      default: out.test.push_back(e); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

inline std::string to_jsonl_line(const PairExample& e) {
  nlohmann::ordered_json j;
  j["segment_id"] = e.segment_id;
  j["music"] = e.music;
  j["caption"] = e.caption;
  j["polarity"] = to_string(e.polarity);
  return j.dump();
}

inline PairExample parse_jsonl_line(const std::string& line, std::size_t line_no) {
  auto fail = [&](const std::string& why) {
    return DatasetError("line " + std::to_string(line_no) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(e.what());
  }
  if (!j.is_object()) throw fail("expected a JSON object");
  for (const char* key : {"segment_id", "music", "caption", "polarity"}) {
    if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string field '") + key + "'");
  }
  PairExample e;
  e.segment_id = j["segment_id"].get<std::string>();
  e.music = j["music"].get<std::string>();
  e.caption = j["caption"].get<std::string>();
  const std::string polarity = j["polarity"].get<std::string>();
  if (polarity == "positive") {
    e.polarity = Polarity::Positive;
  } else if (polarity == "negative") {
    e.polarity = Polarity::Negative;
  } else {
    throw fail("polarity must be 'positive' or 'negative'");
  }
  if (e.music.empty()) throw fail("empty music field");
  return e;
}

inline void write_jsonl(std::ostream& out, std::span<const PairExample> examples) {
  for (const auto& e : examples) out << to_jsonl_line(e) << '\n';
}

inline std::vector<PairExample> read_jsonl(std::istream& in) {
  std::vector<PairExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(parse_jsonl_line(line, line_no));
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, std::span<const PairExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  write_jsonl(out, examples);
}

inline std::vector<PairExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return read_jsonl(in);
}

}  // namespace textmidi
