#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "textmidi/attributes.hpp"
#include "textmidi/remi.hpp"

namespace textmidi {

struct MetricsReport {
  double qualified_notes_rate = 0.0;
  double empty_bar_rate = 0.0;
  std::optional<int> pitch_min;
  std::optional<int> pitch_max;
  int pitch_space = 0;
  double unique_pitches_per_bar = 0.0;
  double chord_repetition = 0.0;
  double polyphonicity = 0.0;
  double rhythmic_intensity = 0.0;
};

namespace detail {
inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}
}  // namespace detail

// Share of adjacent label pairs that repeat.
inline double chord_repetition(std::span<const ChordLabel> chords) {
  if (chords.size() < 2) return 0.0;
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < chords.size(); ++i) repeats += chords[i] == chords[i - 1];
  return static_cast<double>(repeats) / static_cast<double>(chords.size() - 1);
}

inline MetricsReport evaluate(const QuantizedPiece& piece, std::span<const ChordLabel> chords) {
  validate(piece);
  if (piece.bar_count == 0) throw std::invalid_argument("cannot evaluate a piece with no bars");

  MetricsReport r;
  const auto bars = static_cast<std::size_t>(piece.bar_count);
  std::vector<std::set<int>> pitches_in_bar(bars);
  std::size_t qualified = 0;
  for (const Note& n : piece.notes) {
    qualified += n.measured_duration() >= 1;
    pitches_in_bar[static_cast<std::size_t>(n.bar)].insert(n.pitch);
  }
  if (!piece.notes.empty()) {
    r.qualified_notes_rate = static_cast<double>(qualified) / static_cast<double>(piece.notes.size());
    const auto [lo, hi] = std::minmax_element(piece.notes.begin(), piece.notes.end(),
                                              [](const Note& a, const Note& b) { return a.pitch < b.pitch; });
    r.pitch_min = lo->pitch;
    r.pitch_max = hi->pitch;
    r.pitch_space = hi->pitch - lo->pitch;
  }

  std::size_t empty = 0;
  double unique = 0.0;
  for (const auto& p : pitches_in_bar) {
    empty += p.empty();
    unique += static_cast<double>(p.size());
  }
  r.empty_bar_rate = static_cast<double>(empty) / static_cast<double>(bars);
  r.unique_pitches_per_bar = unique / static_cast<double>(bars);
  r.chord_repetition = chord_repetition(chords);
  r.polyphonicity = detail::mean(polyphony(piece));
  r.rhythmic_intensity = detail::mean(textmidi::rhythmic_intensity(piece));
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["qualified_notes_rate"] = r.qualified_notes_rate;
  j["empty_bar_rate"] = r.empty_bar_rate;
  j["pitch_min"] = r.pitch_min ? nlohmann::ordered_json(*r.pitch_min) : nlohmann::ordered_json(nullptr);
  j["pitch_max"] = r.pitch_max ? nlohmann::ordered_json(*r.pitch_max) : nlohmann::ordered_json(nullptr);
  j["pitch_space"] = r.pitch_space;
  j["unique_pitches_per_bar"] = r.unique_pitches_per_bar;
  j["chord_repetition"] = r.chord_repetition;
  j["polyphonicity"] = r.polyphonicity;
  j["rhythmic_intensity"] = r.rhythmic_intensity;
  return j;
}

inline std::string to_table(const MetricsReport& r) {
  auto row = [](const char* name, const std::string& value) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-24s %s\n", name, value.c_str());
    return std::string(buf);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  auto pitch = [](const std::optional<int>& p) { return p ? std::to_string(*p) : std::string("-"); };
  std::string out;
  out += row("qualified_notes_rate", num(r.qualified_notes_rate));
  out += row("empty_bar_rate", num(r.empty_bar_rate));
  out += row("pitch_min", pitch(r.pitch_min));
  out += row("pitch_max", pitch(r.pitch_max));
  out += row("pitch_space", std::to_string(r.pitch_space));
  out += row("unique_pitches_per_bar", num(r.unique_pitches_per_bar));
  out += row("chord_repetition", num(r.chord_repetition));
  out += row("polyphonicity", num(r.polyphonicity));
  out += row("rhythmic_intensity", num(r.rhythmic_intensity));
  return out;
}

}  // namespace textmidi
