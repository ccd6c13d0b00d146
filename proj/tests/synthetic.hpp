#pragma once

// Synthetic caption/music pairs where each caption's words and its music's
// pitch tokens are drawn from a shared per-pair pool.

#include <string>
#include <vector>

#include "textmidi/align.hpp"

namespace textmidi::testing {

inline std::vector<AlignExample> synthetic_pairs(int n, std::uint64_t seed, int buckets, int music_len = 24) {
  Rng rng(seed);
  std::vector<AlignExample> out;
  for (int i = 0; i < n; ++i) {
    AlignExample ex;
    for (int k = 0; k < music_len; ++k) {
      ex.music.push_back(pitch_token((i * 3 + static_cast<int>(uniform_index(rng, 3))) % 128));
    }
    std::string caption;
    for (int k = 0; k < 4; ++k) caption += "word" + std::to_string(i) + "x" + std::to_string(uniform_index(rng, 2)) + " ";
    ex.text = tokenize_text(caption, buckets);
    ex.negatives.push_back(tokenize_text("word" + std::to_string((i + 1) % n) + "x0", buckets));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace textmidi::testing
