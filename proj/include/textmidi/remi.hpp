#pragma once

// REMI vocabulary, encoder/decoder, half-bar chord detection and the repair
// pass that turns raw generated token streams into decodable ones.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "textmidi/midi_io.hpp"

namespace textmidi {

using TokenId = std::int32_t;

enum class Family : std::uint8_t { Bar, Subbeat, Tempo, Pitch, Velocity, Duration, Chord, Eos };

inline constexpr std::array<Family, 8> kFamilies = {Family::Bar,      Family::Subbeat, Family::Tempo,
                                                    Family::Pitch,    Family::Velocity, Family::Duration,
                                                    Family::Chord,    Family::Eos};

struct FamilyLayout {
  Family family;
  std::string_view name;  // event name used by the text and JSON forms
  int first_id;
  int size;
};

// Row order of the vocabulary table; ids are contiguous per family.
inline constexpr std::array<FamilyLayout, 8> kLayout = {{
    {Family::Bar, "Bar", 0, 1},
    {Family::Subbeat, "Beat", 1, 16},
    {Family::Tempo, "Tempo", 17, 65},
    {Family::Pitch, "Note_Pitch", 82, 128},
    {Family::Velocity, "Note_Velocity", 210, 44},
    {Family::Duration, "Note_Duration", 254, 17},
    {Family::Chord, "Chord", 271, 133},
    {Family::Eos, "EOS", 404, 1},
}};

inline constexpr int kVocabSize = 405;
inline constexpr TokenId kBarToken = 0;
inline constexpr TokenId kEosToken = 404;

inline constexpr int kTempoMin = 32;
inline constexpr int kTempoStep = 3;
inline constexpr int kVelocityMin = 40;
inline constexpr int kVelocityMax = 126;
inline constexpr int kVelocityStep = 2;

inline constexpr int kRepairTempo = 110;
inline constexpr int kRepairVelocity = 76;
inline constexpr int kRepairDuration = 4;

constexpr const FamilyLayout& layout(Family f) { return kLayout[static_cast<std::size_t>(f)]; }

// ---------------------------------------------------------------------------
// Chords

inline constexpr std::array<std::string_view, 12> kPitchClassNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                                       "F#", "G",  "G#", "A",  "A#", "B"};
inline constexpr std::array<std::string_view, 11> kQualityNames = {"M",  "m",  "7", "M7",   "m7",  "m7b5",
                                                                    "o",  "o7", "+", "sus2", "sus4"};

// Intervals above the root for each quality, same order as kQualityNames.
inline const std::array<std::vector<int>, 11>& chord_templates() {
  static const std::array<std::vector<int>, 11> templates = {{
      {0, 4, 7},
      {0, 3, 7},
      {0, 4, 7, 10},
      {0, 4, 7, 11},
      {0, 3, 7, 10},
      {0, 3, 6, 10},
      {0, 3, 6},
      {0, 3, 6, 9},
      {0, 4, 8},
      {0, 2, 7},
      {0, 5, 7},
  }};
  return templates;
}

struct ChordLabel {
  static constexpr int kNone = -1;
  int root = kNone;     // pitch class 0..11
  int quality = kNone;  // index into kQualityNames

  static ChordLabel none() { return {}; }
  static ChordLabel of(int root, int quality) { return {root, quality}; }

  bool is_none() const { return root == kNone; }

  // 0..131 for rooted chords (root-major), 132 for N_N.
  int index() const { return is_none() ? 132 : root * 11 + quality; }

  static ChordLabel from_index(int index) {
    if (index < 0 || index > 132) throw std::out_of_range("chord index " + std::to_string(index));
    if (index == 132) return none();
    return {index / 11, index % 11};
  }

  std::string name() const {
    if (is_none()) return "N_N";
    return std::string(kPitchClassNames[root]) + "_" + std::string(kQualityNames[quality]);
  }

  static std::optional<ChordLabel> parse(std::string_view text) {
    if (text == "N_N") return none();
    const auto sep = text.find('_');
    if (sep == std::string_view::npos) return std::nullopt;
    const auto root_it = std::find(kPitchClassNames.begin(), kPitchClassNames.end(), text.substr(0, sep));
    const auto qual_it = std::find(kQualityNames.begin(), kQualityNames.end(), text.substr(sep + 1));
    if (root_it == kPitchClassNames.end() || qual_it == kQualityNames.end()) return std::nullopt;
    return ChordLabel{static_cast<int>(root_it - kPitchClassNames.begin()),
                      static_cast<int>(qual_it - kQualityNames.begin())};
  }

  friend bool operator==(const ChordLabel&, const ChordLabel&) = default;
};

// ---------------------------------------------------------------------------
// Vocabulary

struct TokenInfo {
  Family family;
  int value;  // family-specific; chords use ChordLabel::index()

  friend bool operator==(const TokenInfo&, const TokenInfo&) = default;
};

class RemiVocab {
 public:
  RemiVocab() {
    entries_.reserve(kVocabSize);
    for (const FamilyLayout& f : kLayout) {
      for (int i = 0; i < f.size; ++i) entries_.push_back({f.family, value_at(f.family, i)});
    }
  }

  std::size_t size() const { return entries_.size(); }
  const TokenInfo& info(TokenId id) const { return entries_.at(static_cast<std::size_t>(id)); }
  std::span<const TokenInfo> entries() const { return entries_; }

  static int family_size(Family f) { return layout(f).size; }

  // Value of the i-th token of a family.
  static int value_at(Family f, int i) {
    switch (f) {
      case Family::Tempo: return kTempoMin + kTempoStep * i;
      case Family::Velocity: return kVelocityMin + kVelocityStep * i;
      case Family::Bar:
      case Family::Eos: return 0;
      default: return i;
    }
  }

  // Id of (family, value); nullopt when the value is off the family's grid.
  static std::optional<TokenId> find(Family f, int value) {
    const FamilyLayout& l = layout(f);
    int i = value;
    switch (f) {
      case Family::Tempo:
        if ((value - kTempoMin) % kTempoStep != 0) return std::nullopt;
        i = (value - kTempoMin) / kTempoStep;
        break;
      case Family::Velocity:
        if ((value - kVelocityMin) % kVelocityStep != 0) return std::nullopt;
        i = (value - kVelocityMin) / kVelocityStep;
        break;
      case Family::Bar:
      case Family::Eos: i = value == 0 ? 0 : -1; break;
      default: break;
    }
    if (i < 0 || i >= l.size) return std::nullopt;
    return l.first_id + i;
  }

  static TokenId id(Family f, int value) {
    if (auto t = find(f, value)) return *t;
    throw std::out_of_range(std::string(layout(f).name) + " value " + std::to_string(value) +
                            " is not in the vocabulary");
  }

 private:
  std::vector<TokenInfo> entries_;
};

inline const RemiVocab& build_vocab() {
  static const RemiVocab vocab;
  return vocab;
}

inline TokenInfo token_info(TokenId id) {
  if (id < 0 || id >= kVocabSize) throw std::out_of_range("token id " + std::to_string(id));
  for (const FamilyLayout& f : kLayout) {
    if (id < f.first_id + f.size) return {f.family, RemiVocab::value_at(f.family, id - f.first_id)};
  }
  return {Family::Eos, 0};
}

inline Family family_of(TokenId id) { return token_info(id).family; }

inline TokenId bar_token() { return kBarToken; }
inline TokenId eos_token() { return kEosToken; }
inline TokenId subbeat_token(int s) { return RemiVocab::id(Family::Subbeat, s); }
inline TokenId tempo_token(int bpm) { return RemiVocab::id(Family::Tempo, bpm); }
inline TokenId pitch_token(int p) { return RemiVocab::id(Family::Pitch, p); }
inline TokenId velocity_token(int v) { return RemiVocab::id(Family::Velocity, v); }
inline TokenId duration_token(int d) { return RemiVocab::id(Family::Duration, d); }
inline TokenId chord_token(const ChordLabel& c) { return RemiVocab::id(Family::Chord, c.index()); }

// Nearest tempo on the 32..224 grid, ties upward.
inline int snap_tempo(int bpm) {
  const int i = static_cast<int>(std::floor((bpm - kTempoMin) / static_cast<double>(kTempoStep) + 0.5));
  return kTempoMin + kTempoStep * std::clamp(i, 0, layout(Family::Tempo).size - 1);
}

// Down to the nearest even value, clamped to 40..126.
inline int snap_velocity(int velocity) {
  if (velocity < kVelocityMin) return kVelocityMin;
  return std::min(kVelocityMax, velocity - velocity % kVelocityStep);
}

// ---------------------------------------------------------------------------
// Sequences

struct RemiSequence {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> bar_positions;

  static RemiSequence from_tokens(std::vector<TokenId> tokens) {
    RemiSequence seq{std::move(tokens), {}};
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      if (seq.tokens[i] < 0 || seq.tokens[i] >= kVocabSize)
        throw std::out_of_range("token id " + std::to_string(seq.tokens[i]) + " at index " + std::to_string(i));
      if (seq.tokens[i] == kBarToken) seq.bar_positions.push_back(i);
    }
    return seq;
  }

  friend bool operator==(const RemiSequence&, const RemiSequence&) = default;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t index)
      : std::runtime_error("token " + std::to_string(index) + ": " + what + " (run repair first)"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Expands per-bar labels to per-half-bar labels; half-bar lists pass through.
inline std::vector<ChordLabel> half_bar_chords(std::span<const ChordLabel> chords, int bar_count) {
  const auto bars = static_cast<std::size_t>(bar_count);
  if (chords.size() == 2 * bars) return {chords.begin(), chords.end()};
  if (chords.size() == bars) {
    std::vector<ChordLabel> out;
    out.reserve(2 * bars);
    for (const ChordLabel& c : chords) out.insert(out.end(), 2, c);
    return out;
  }
  if (chords.empty()) return {};
  throw InvariantError("expected one chord label per bar or per half-bar, got " + std::to_string(chords.size()) +
                       " for " + std::to_string(bar_count) + " bars");
}

inline RemiSequence encode(const QuantizedPiece& piece, std::span<const ChordLabel> chords = {}) {
  validate(piece);
  const std::vector<ChordLabel> windows = half_bar_chords(chords, piece.bar_count);
  constexpr int kHalf = kSubbeatsPerBar / 2;

  std::vector<TokenId> out;
  std::optional<ChordLabel> last_chord;
  auto note_it = piece.notes.begin();
  for (int bar = 0; bar < piece.bar_count; ++bar) {
    out.push_back(kBarToken);

    std::array<bool, kSubbeatsPerBar> occupied{};
    std::array<std::optional<ChordLabel>, kSubbeatsPerBar> chord_at{};
    if (bar == 0) occupied[0] = true;
    for (auto it = note_it; it != piece.notes.end() && it->bar == bar; ++it) occupied[it->subbeat] = true;
    if (!windows.empty()) {
      for (int half = 0; half < 2; ++half) {
        const ChordLabel& label = windows[static_cast<std::size_t>(2 * bar + half)];
        if (!last_chord || *last_chord != label) {
          chord_at[half * kHalf] = label;
          occupied[half * kHalf] = true;
          last_chord = label;
        }
      }
    }

    for (int s = 0; s < kSubbeatsPerBar; ++s) {
      if (!occupied[s]) continue;
      out.push_back(subbeat_token(s));
      if (chord_at[s]) out.push_back(chord_token(*chord_at[s]));
      if (bar == 0 && s == 0) out.push_back(tempo_token(snap_tempo(piece.tempo_bpm)));
      for (; note_it != piece.notes.end() && note_it->bar == bar && note_it->subbeat == s; ++note_it) {
        out.push_back(pitch_token(note_it->pitch));
        out.push_back(velocity_token(snap_velocity(note_it->velocity)));
        out.push_back(duration_token(note_it->duration));
      }
    }
  }
  out.push_back(kEosToken);
  return RemiSequence::from_tokens(std::move(out));
}

namespace detail {

struct ChordEvent {
  int position;  // absolute sub-beat
  ChordLabel label;
};

struct Decoded {
  QuantizedPiece piece;
  std::vector<ChordEvent> chords;
};

inline Decoded decode_impl(std::span<const TokenId> tokens) {
  Decoded out;
  int bar = -1;
  int subbeat = -1;
  bool have_tempo = false;
  bool saw_eos = false;

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenInfo t = token_info(tokens[i]);
    if (saw_eos) throw DecodeError("token after Eos", i);
    if (bar < 0 && t.family != Family::Bar && t.family != Family::Eos)
      throw DecodeError("sequence must start with Bar", i);
    switch (t.family) {
      case Family::Bar:
        ++bar;
        subbeat = -1;
        break;
      case Family::Subbeat: subbeat = t.value; break;
      case Family::Tempo:
        if (have_tempo) throw DecodeError("second Tempo token", i);
        have_tempo = true;
        out.piece.tempo_bpm = t.value;
        break;
      case Family::Chord:
        out.chords.push_back({bar * kSubbeatsPerBar + std::max(subbeat, 0), ChordLabel::from_index(t.value)});
        break;
      case Family::Pitch: {
        if (i + 2 >= tokens.size() || family_of(tokens[i + 1]) != Family::Velocity ||
            family_of(tokens[i + 2]) != Family::Duration)
          throw DecodeError("Pitch not followed by Velocity and Duration", i);
        if (subbeat < 0) throw DecodeError("Pitch before any Sub-beat in its bar", i);
        Note n;
        n.bar = bar;
        n.subbeat = subbeat;
        n.pitch = t.value;
        n.velocity = token_info(tokens[i + 1]).value;
        const int d = token_info(tokens[i + 2]).value;
        n.duration = std::max(d, 1);
        if (d == 0) n.raw_duration = 0;
        out.piece.notes.push_back(n);
        i += 2;
        break;
      }
      case Family::Velocity: throw DecodeError("Velocity without a preceding Pitch", i);
      case Family::Duration: throw DecodeError("Duration without a preceding Pitch and Velocity", i);
      case Family::Eos: saw_eos = true; break;
    }
  }
  if (!saw_eos) throw DecodeError("missing trailing Eos", tokens.size());
  out.piece.bar_count = bar + 1;
  std::stable_sort(out.piece.notes.begin(), out.piece.notes.end(), note_order);
  return out;
}

}  // namespace detail

inline QuantizedPiece decode(const RemiSequence& seq) { return detail::decode_impl(seq.tokens).piece; }

// Chord in effect at the start of each half-bar window (N_N before the first
// chord token).
inline std::vector<ChordLabel> decode_chords(const RemiSequence& seq) {
  detail::Decoded d = detail::decode_impl(seq.tokens);
  std::stable_sort(d.chords.begin(), d.chords.end(),
                   [](const detail::ChordEvent& a, const detail::ChordEvent& b) { return a.position < b.position; });
  std::vector<ChordLabel> out;
  ChordLabel current = ChordLabel::none();
  auto it = d.chords.begin();
  for (int w = 0; w < 2 * d.piece.bar_count; ++w) {
    for (; it != d.chords.end() && it->position <= w * (kSubbeatsPerBar / 2); ++it) current = it->label;
    out.push_back(current);
  }
  return out;
}

// Chord tokens in stream order.
inline std::vector<ChordLabel> chord_tokens(const RemiSequence& seq) {
  std::vector<ChordLabel> out;
  for (TokenId t : seq.tokens) {
    const TokenInfo info = token_info(t);
    if (info.family == Family::Chord) out.push_back(ChordLabel::from_index(info.value));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chord detection

inline ChordLabel classify_chroma(const std::array<double, 12>& weights) {
  int distinct = 0;
  double norm2 = 0.0;
  for (double w : weights) {
    if (w > 0.0) ++distinct;
    norm2 += w * w;
  }
  if (distinct < 2) return ChordLabel::none();

  const auto& templates = chord_templates();
  ChordLabel best = ChordLabel::none();
  double best_score = -1.0;
  for (int root = 0; root < 12; ++root) {
    for (int q = 0; q < static_cast<int>(templates.size()); ++q) {
      double dot = 0.0;
      for (int interval : templates[q]) dot += weights[(root + interval) % 12];
      const double score = dot / std::sqrt(norm2 * static_cast<double>(templates[q].size()));
      if (score > best_score + 1e-12) {
        best_score = score;
        best = ChordLabel::of(root, q);
      }
    }
  }
  return best;
}

// Duration-weighted pitch-class profile of each half-bar, matched against the
// chord templates by cosine similarity.
inline std::vector<ChordLabel> detect_chords(const QuantizedPiece& piece) {
  validate(piece);
  constexpr int kHalf = kSubbeatsPerBar / 2;
  const int windows = 2 * piece.bar_count;
  std::vector<std::array<double, 12>> chroma(static_cast<std::size_t>(windows), std::array<double, 12>{});
  for (const Note& n : piece.notes) {
    const int on = n.onset();
    const int off = on + n.duration;
    for (int w = on / kHalf; w < windows && w * kHalf < off; ++w) {
      const int overlap = std::min(off, (w + 1) * kHalf) - std::max(on, w * kHalf);
      if (overlap > 0) chroma[static_cast<std::size_t>(w)][n.pitch % 12] += overlap;
    }
  }
  std::vector<ChordLabel> out;
  out.reserve(chroma.size());
  for (const auto& c : chroma) out.push_back(classify_chroma(c));
  return out;
}

// ---------------------------------------------------------------------------
// Repair

inline RemiSequence repair(const RemiSequence& raw) {
  std::vector<TokenId> out;
  out.reserve(raw.tokens.size() + 8);

  struct PendingNote {
    TokenId pitch;
    std::optional<TokenId> velocity;
    std::optional<TokenId> duration;
  };
  std::optional<PendingNote> pending;
  // Chord/Tempo tokens seen while a note is still collecting its Velocity and
  // Duration; they are emitted right after the note.
  std::vector<TokenId> deferred;
  bool have_tempo = false;
  bool span_has_chord = false;
  bool bar_has_subbeat = false;

  auto flush = [&] {
    if (pending) {
      out.push_back(pending->pitch);
      out.push_back(pending->velocity.value_or(velocity_token(kRepairVelocity)));
      out.push_back(pending->duration.value_or(duration_token(kRepairDuration)));
      pending.reset();
    }
    out.insert(out.end(), deferred.begin(), deferred.end());
    deferred.clear();
  };
  auto emit = [&](TokenId tok) {
    if (pending) {
      deferred.push_back(tok);
    } else {
      out.push_back(tok);
    }
  };

  if (raw.tokens.empty() || raw.tokens.front() != kBarToken) out.push_back(kBarToken);

  for (TokenId tok : raw.tokens) {
    const TokenInfo t = token_info(tok);
    if (t.family == Family::Eos) break;
    switch (t.family) {
      case Family::Bar:
        flush();
        out.push_back(tok);
        span_has_chord = false;
        bar_has_subbeat = false;
        break;
      case Family::Subbeat:
        flush();
        out.push_back(tok);
        span_has_chord = false;
        bar_has_subbeat = true;
        break;
      case Family::Chord:
        if (!span_has_chord) {
          emit(tok);
          span_has_chord = true;
        }
        break;
      case Family::Tempo:
        if (!have_tempo) {
          emit(tok);
          have_tempo = true;
        }
        break;
      case Family::Pitch:
        flush();
        if (!bar_has_subbeat) {
          out.push_back(subbeat_token(0));
          span_has_chord = false;
          bar_has_subbeat = true;
        }
        pending = PendingNote{tok, std::nullopt, std::nullopt};
        break;
      case Family::Velocity:
        if (pending && !pending->velocity) {
          pending->velocity = tok;
          if (pending->duration) flush();
        }
        break;
      case Family::Duration:
        if (pending && !pending->duration) {
          pending->duration = t.value == 0 ? duration_token(1) : tok;
          if (pending->velocity) flush();
        }
        break;
      case Family::Eos: break;
    }
  }
  flush();

  if (!have_tempo) {
    auto first_sub = std::find_if(out.begin(), out.end(), [](TokenId x) { return family_of(x) == Family::Subbeat; });
    if (first_sub == out.end()) {
      // Bar is always at index 0 here.
      out.insert(out.begin() + 1, {subbeat_token(0), tempo_token(kRepairTempo)});
    } else {
      out.insert(first_sub + 1, tempo_token(kRepairTempo));
    }
  }
  out.push_back(kEosToken);
  return RemiSequence::from_tokens(std::move(out));
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string token_name(TokenId id) {
  const TokenInfo t = token_info(id);
  const std::string family(layout(t.family).name);
  switch (t.family) {
    case Family::Bar:
    case Family::Eos: return family + "_None";
    case Family::Chord: return family + "_" + ChordLabel::from_index(t.value).name();
    default: return family + "_" + std::to_string(t.value);
  }
}

inline std::optional<TokenId> parse_token_name(std::string_view text) {
  for (const FamilyLayout& f : kLayout) {
    if (text.size() <= f.name.size() + 1 || text.substr(0, f.name.size()) != f.name || text[f.name.size()] != '_')
      continue;
    const std::string_view rest = text.substr(f.name.size() + 1);
    if (f.family == Family::Bar || f.family == Family::Eos) {
      if (rest == "None") return f.first_id;
      continue;
    }
    if (f.family == Family::Chord) {
      if (auto c = ChordLabel::parse(rest)) return chord_token(*c);
      continue;
    }
    // Family names share prefixes ("Note_..."), so a non-numeric rest means
    // "try the next family".
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string_view::npos) continue;
    if (rest.size() > 6) return std::nullopt;
    if (auto id = RemiVocab::find(f.family, std::stoi(std::string(rest)))) return id;
    return std::nullopt;
  }
  return std::nullopt;
}

// One NAME_VALUE token per line.
inline std::string to_text(const RemiSequence& seq) {
  std::string out;
  for (TokenId t : seq.tokens) {
    out += token_name(t);
    out += '\n';
  }
  return out;
}

inline RemiSequence from_text(std::string_view text) {
  std::vector<TokenId> tokens;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty()) continue;
    auto id = parse_token_name(line);
    if (!id) throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown token '" + std::string(line) + "'");
    tokens.push_back(*id);
  }
  return RemiSequence::from_tokens(std::move(tokens));
}

inline nlohmann::json token_to_json(TokenId id) {
  const TokenInfo t = token_info(id);
  nlohmann::ordered_json j;
  j["name"] = layout(t.family).name;
  switch (t.family) {
    case Family::Bar:
    case Family::Eos: j["value"] = nullptr; break;
    case Family::Chord: j["value"] = ChordLabel::from_index(t.value).name(); break;
    default: j["value"] = t.value; break;
  }
  return j;
}

inline nlohmann::json to_json(const RemiSequence& seq) {
  nlohmann::json arr = nlohmann::json::array();
  for (TokenId t : seq.tokens) arr.push_back(token_to_json(t));
  return arr;
}

inline RemiSequence from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw std::invalid_argument("REMI JSON must be an array");
  std::vector<TokenId> tokens;
  tokens.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& item = arr[i];
    auto bad = [&](const std::string& why) {
      return std::invalid_argument("event " + std::to_string(i) + ": " + why);
    };
    if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) throw bad("missing name");
    const std::string name = item["name"].get<std::string>();
    const auto& value = item.contains("value") ? item["value"] : nlohmann::json();
    std::string text;
    if (value.is_null()) {
      text = name + "_None";
    } else if (value.is_string()) {
      text = name + "_" + value.get<std::string>();
    } else if (value.is_number_integer()) {
      text = name + "_" + std::to_string(value.get<long long>());
    } else {
      throw bad("unsupported value type");
    }
    auto id = parse_token_name(text);
    if (!id) throw bad("unknown token " + text);
    tokens.push_back(*id);
  }
  return RemiSequence::from_tokens(std::move(tokens));
}

}  // namespace textmidi
