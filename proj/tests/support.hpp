#pragma once

// Shared fixtures, random generators and brute-force oracles for the test
// suites. Oracles here deliberately avoid calling the code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "textmidi/midi_io.hpp"
#include "textmidi/random.hpp"
#include "textmidi/remi.hpp"

namespace textmidi::testing {

inline std::vector<std::uint8_t> from_hex(const std::string& hex) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

// Format 0, 480 tpq, C4 vel 72 on at tick 0, off at tick 480. Cross-checked
// with an independent MIDI reader (mido).
inline std::vector<std::uint8_t> minimal_smf() {
  return from_hex("4d546864000000060000000101e04d54726b0000000d00903c488360803c4000ff2f00");
}

// Format 1, 480 tpq: tempo track (500000 us/quarter) plus a note track with a
// program change, a sustain controller and five off-grid notes:
//   p60 v80 [0, 470)  p64 v70 [245, 965)  p67 v90 [1790, 2400)
//   p72 v100 [1925, 1985)  p48 v64 [2880, 4380)
// Written and re-read with mido.
inline std::vector<std::uint8_t> two_bar_fixture_smf() {
  return from_hex(
      "4d546864000000060001000201e04d54726b0000000b00ff510307a12000ff2f004d54726b0000003800c00500903c5064b040"
      "7f81119040468161803c00836f4000863990435a810748643c804800831f430083609030408b5c80300000ff2f00");
}

struct RawNote {
  int pitch;
  int velocity;
  long on;
  long off;
};

inline std::vector<RawNote> two_bar_fixture_notes() {
  return {{60, 80, 0, 470}, {64, 70, 245, 965}, {67, 90, 1790, 2400}, {72, 100, 1925, 1985}, {48, 64, 2880, 4380}};
}

// Independent quantizer over raw ticks with floating arithmetic.
inline QuantizedPiece brute_force_quantize(const std::vector<RawNote>& raw, int tpq, long end_tick, int tempo) {
  const double sub = tpq / 4.0;
  QuantizedPiece p;
  p.tempo_bpm = tempo;
  int bars = static_cast<int>(std::floor(end_tick / sub + 0.5)) / 16;
  for (const RawNote& r : raw) {
    const long g = static_cast<long>(std::floor(r.on / sub + 0.5));
    const long d = static_cast<long>(std::floor((r.off - r.on) / sub + 0.5));
    Note n;
    n.bar = static_cast<int>(g / 16);
    n.subbeat = static_cast<int>(g % 16);
    n.pitch = r.pitch;
    n.velocity = r.velocity;
    n.duration = static_cast<int>(std::min(16L, std::max(1L, d)));
    p.notes.push_back(n);
    bars = std::max(bars, n.bar + 1);
  }
  std::sort(p.notes.begin(), p.notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.bar, a.subbeat, a.pitch, a.duration, a.velocity) <
           std::tie(b.bar, b.subbeat, b.pitch, b.duration, b.velocity);
  });
  p.bar_count = bars;
  return p;
}

struct PieceOptions {
  int max_bars = 32;
  int max_notes_per_bar = 6;
  bool grid_velocity = true;  // velocities on the 40..126 step-2 grid
  bool grid_tempo = true;
};

inline QuantizedPiece random_piece(Rng& rng, const PieceOptions& opt = {}) {
  QuantizedPiece p;
  p.bar_count = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(opt.max_bars)));
  p.tempo_bpm = opt.grid_tempo ? 32 + 3 * static_cast<int>(uniform_index(rng, 65))
                               : 30 + static_cast<int>(uniform_index(rng, 200));
  for (int bar = 0; bar < p.bar_count; ++bar) {
    const int n = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(opt.max_notes_per_bar + 1)));
    for (int i = 0; i < n; ++i) {
      Note note;
      note.bar = bar;
      note.subbeat = static_cast<int>(uniform_index(rng, 16));
      note.pitch = 21 + static_cast<int>(uniform_index(rng, 88));
      note.velocity = opt.grid_velocity ? 40 + 2 * static_cast<int>(uniform_index(rng, 44))
                                        : 1 + static_cast<int>(uniform_index(rng, 127));
      note.duration = 1 + static_cast<int>(uniform_index(rng, 16));
      p.notes.push_back(note);
    }
  }
  std::sort(p.notes.begin(), p.notes.end(), note_order);
  return p;
}

inline std::vector<ChordLabel> random_chords(Rng& rng, int windows) {
  std::vector<ChordLabel> out;
  ChordLabel last = ChordLabel::from_index(static_cast<int>(uniform_index(rng, 133)));
  for (int i = 0; i < windows; ++i) {
    if (uniform_index(rng, 3) == 0) last = ChordLabel::from_index(static_cast<int>(uniform_index(rng, 133)));
    out.push_back(last);
  }
  return out;
}

// Second encoder written against the text form: Bar, then per occupied
// sub-beat: Beat, Chord on change, Tempo at the head, Pitch/Velocity/Duration.
inline std::vector<std::string> reference_encode(const QuantizedPiece& p, const std::vector<ChordLabel>& half_bars) {
  std::vector<std::string> out;
  std::string prev_chord;
  for (int bar = 0; bar < p.bar_count; ++bar) {
    out.push_back("Bar_None");
    std::map<int, std::vector<std::string>> at;
    if (bar == 0) at[0];
    for (int half = 0; half < 2 && !half_bars.empty(); ++half) {
      const std::string name = half_bars[static_cast<std::size_t>(bar * 2 + half)].name();
      if (name != prev_chord) {
        at[half * 8].push_back("Chord_" + name);
        prev_chord = name;
      }
    }
    if (bar == 0) {
      const int tempo = std::clamp(32 + 3 * static_cast<int>(std::lround((p.tempo_bpm - 32) / 3.0 + 1e-9)), 32, 224);
      at[0].push_back("Tempo_" + std::to_string(tempo));
    }
    for (const Note& n : p.notes) {
      if (n.bar != bar) continue;
      const int v = n.velocity < 40 ? 40 : std::min(126, n.velocity / 2 * 2);
      auto& slot = at[n.subbeat];
      slot.push_back("Note_Pitch_" + std::to_string(n.pitch));
      slot.push_back("Note_Velocity_" + std::to_string(v));
      slot.push_back("Note_Duration_" + std::to_string(n.duration));
    }
    for (auto& [s, events] : at) {
      out.push_back("Beat_" + std::to_string(s));
      out.insert(out.end(), events.begin(), events.end());
    }
  }
  out.push_back("EOS_None");
  return out;
}

// Per-sub-beat brute force of both bar attributes.
inline void brute_force_attributes(const QuantizedPiece& p, std::vector<double>& rhythm, std::vector<double>& poly) {
  rhythm.assign(static_cast<std::size_t>(p.bar_count), 0.0);
  poly.assign(static_cast<std::size_t>(p.bar_count), 0.0);
  for (int bar = 0; bar < p.bar_count; ++bar) {
    int hits = 0;
    int sounding = 0;
    for (int s = 0; s < 16; ++s) {
      const int t = bar * 16 + s;
      bool onset = false;
      for (const Note& n : p.notes) {
        const int on = n.bar * 16 + n.subbeat;
        if (on == t) onset = true;
        if (on <= t && t < on + n.duration) ++sounding;
      }
      hits += onset;
    }
    rhythm[static_cast<std::size_t>(bar)] = hits / 16.0;
    poly[static_cast<std::size_t>(bar)] = sounding / 16.0;
  }
}

}  // namespace textmidi::testing
