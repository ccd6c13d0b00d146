#pragma once

// Bar-level rhythmic intensity and polyphony scores, and their octile
// classes over a corpus.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "textmidi/midi_io.hpp"

namespace textmidi {

inline constexpr int kAttributeClasses = 8;

struct BarAttributeScores {
  std::vector<double> rhythm;     // s_rhym per bar, in [0, 1]
  std::vector<double> polyphony;  // s_poly per bar, >= 0
};

// Fraction of each bar's 16 sub-beats that carry at least one onset.
inline std::vector<double> rhythmic_intensity(const QuantizedPiece& piece) {
  std::vector<std::array<bool, kSubbeatsPerBar>> hit(static_cast<std::size_t>(piece.bar_count));
  for (const Note& n : piece.notes) hit[static_cast<std::size_t>(n.bar)][n.subbeat] = true;
  std::vector<double> out;
  out.reserve(hit.size());
  for (const auto& bar : hit) {
    out.push_back(static_cast<double>(std::count(bar.begin(), bar.end(), true)) / kSubbeatsPerBar);
  }
  return out;
}

// Mean number of notes sounding (hit or held) per sub-beat. Notes held over
// a barline count towards the following bar.
inline std::vector<double> polyphony(const QuantizedPiece& piece) {
  const int total = piece.bar_count * kSubbeatsPerBar;
  std::vector<int> active(static_cast<std::size_t>(total), 0);
  for (const Note& n : piece.notes) {
    const int end = std::min(total, n.onset() + n.duration);
    for (int s = n.onset(); s < end; ++s) ++active[static_cast<std::size_t>(s)];
  }
  std::vector<double> out(static_cast<std::size_t>(piece.bar_count), 0.0);
  for (int s = 0; s < total; ++s) out[static_cast<std::size_t>(s / kSubbeatsPerBar)] += active[static_cast<std::size_t>(s)];
  for (double& v : out) v /= kSubbeatsPerBar;
  return out;
}

inline BarAttributeScores bar_attributes(const QuantizedPiece& piece) {
  return {rhythmic_intensity(piece), polyphony(piece)};
}

// Seven cut points splitting a score distribution into 8 ordinal classes.
struct OctileEdges {
  std::array<double, kAttributeClasses - 1> edges{};

  // Number of edges strictly below the score.
  int classify(double score) const {
    return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), score) - edges.begin());
  }
};

// Nearest-rank octiles (12.5% .. 87.5%) of the pooled scores.
inline OctileEdges fit_octiles(std::span<const double> pooled) {
  if (pooled.empty()) throw std::invalid_argument("cannot bin an empty corpus");
  std::vector<double> sorted(pooled.begin(), pooled.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  OctileEdges out;
  for (int k = 1; k < kAttributeClasses; ++k) {
    const auto rank = static_cast<std::size_t>(std::ceil(k * n / kAttributeClasses));
    out.edges[static_cast<std::size_t>(k - 1)] = sorted[std::max<std::size_t>(rank, 1) - 1];
  }
  return out;
}

struct AttributeBins {
  OctileEdges rhythm;
  OctileEdges polyphony;
};

struct AttributeClasses {
  std::vector<int> rhythm;     // a_rhym per bar, 0..7
  std::vector<int> polyphony;  // a_poly per bar, 0..7
};

inline AttributeBins bin_attributes(std::span<const BarAttributeScores> corpus) {
  std::vector<double> rhythm;
  std::vector<double> poly;
  for (const auto& piece : corpus) {
    rhythm.insert(rhythm.end(), piece.rhythm.begin(), piece.rhythm.end());
    poly.insert(poly.end(), piece.polyphony.begin(), piece.polyphony.end());
  }
  return {fit_octiles(rhythm), fit_octiles(poly)};
}

inline AttributeClasses classify(const BarAttributeScores& scores, const AttributeBins& bins) {
  AttributeClasses out;
  out.rhythm.reserve(scores.rhythm.size());
  out.polyphony.reserve(scores.polyphony.size());
  for (double s : scores.rhythm) out.rhythm.push_back(bins.rhythm.classify(s));
  for (double s : scores.polyphony) out.polyphony.push_back(bins.polyphony.classify(s));
  return out;
}

}  // namespace textmidi
