#include <gtest/gtest.h>

#include "support.hpp"
#include "textmidi/metrics.hpp"

using namespace textmidi;
using namespace textmidi::testing;

TEST(Metrics, SingleBarTriad) {
  QuantizedPiece p;
  p.bar_count = 1;
  p.notes = {{0, 0, 60, 80, 4}, {0, 0, 64, 80, 4}, {0, 0, 67, 80, 4}};
  const MetricsReport r = evaluate(p, detect_chords(p));
  EXPECT_EQ(r.qualified_notes_rate, 1.0);
  EXPECT_EQ(r.empty_bar_rate, 0.0);
  EXPECT_EQ(r.pitch_min, 60);
  EXPECT_EQ(r.pitch_max, 67);
  EXPECT_EQ(r.pitch_space, 7);
  EXPECT_EQ(r.unique_pitches_per_bar, 3.0);
  EXPECT_DOUBLE_EQ(r.polyphonicity, 12.0 / 16);
  EXPECT_DOUBLE_EQ(r.rhythmic_intensity, 1.0 / 16);
}

TEST(Metrics, HalfTheBarsEmpty) {
  QuantizedPiece p;
  p.bar_count = 4;
  p.notes = {{0, 0, 60, 80, 4}, {2, 0, 62, 80, 4}};
  EXPECT_EQ(evaluate(p, {}).empty_bar_rate, 0.5);
}

TEST(Metrics, ChordRepetition) {
  const std::vector<ChordLabel> chords = {*ChordLabel::parse("C_M"), *ChordLabel::parse("C_M"),
                                          *ChordLabel::parse("G_7")};
  EXPECT_EQ(chord_repetition(chords), 0.5);
  EXPECT_EQ(chord_repetition(std::vector<ChordLabel>{ChordLabel::none()}), 0.0);
  QuantizedPiece p;
  p.bar_count = 1;
  EXPECT_EQ(evaluate(p, chords).chord_repetition, 0.5);
}

TEST(Metrics, NoNotesHasNoPitchFields) {
  QuantizedPiece p;
  p.bar_count = 2;
  const MetricsReport r = evaluate(p, {});
  EXPECT_FALSE(r.pitch_min);
  EXPECT_FALSE(r.pitch_max);
  EXPECT_EQ(r.pitch_space, 0);
  EXPECT_EQ(r.empty_bar_rate, 1.0);
  EXPECT_EQ(r.qualified_notes_rate, 0.0);
}

TEST(Metrics, QualifiedUsesUnclampedDuration) {
  MidiPiece m;
  m.ticks_per_quarter = 480;
  m.events = {{0, EventKind::NoteOn, 0, 60, 80, 0},  {0, EventKind::NoteOn, 0, 64, 80, 0},
              {50, EventKind::NoteOff, 0, 60, 0, 0}, {480, EventKind::NoteOff, 0, 64, 0, 0},
              {960, EventKind::NoteOn, 0, 67, 80, 0}, {1020, EventKind::NoteOff, 0, 67, 0, 0}};
  const QuantizedPiece p = quantize(m);
  // 50 ticks rounds to 0 sub-beats; 60 ticks ties up to 1.
  EXPECT_DOUBLE_EQ(evaluate(p, {}).qualified_notes_rate, 2.0 / 3);
}

TEST(Metrics, ZeroBarsIsAnError) {
  EXPECT_THROW(evaluate(QuantizedPiece{}, {}), std::invalid_argument);
}

TEST(Metrics, TransposeInvariance) {
  Rng rng(41);
  for (int i = 0; i < 50; ++i) {
    const QuantizedPiece p = random_piece(rng, {.max_bars = 8});
    const int k = static_cast<int>(uniform_index(rng, 12)) - 6;
    QuantizedPiece t = p;
    for (Note& n : t.notes) n.pitch += k;
    std::sort(t.notes.begin(), t.notes.end(), note_order);
    const std::vector<ChordLabel> chords = detect_chords(p);
    std::vector<ChordLabel> moved = chords;
    for (ChordLabel& c : moved) {
      if (!c.is_none()) c.root = ((c.root + k) % 12 + 12) % 12;
    }
    const MetricsReport a = evaluate(p, chords);
    const MetricsReport b = evaluate(t, moved);
    if (a.pitch_min) {
      EXPECT_EQ(*b.pitch_min, *a.pitch_min + k);
      EXPECT_EQ(*b.pitch_max, *a.pitch_max + k);
    }
    EXPECT_EQ(b.pitch_space, a.pitch_space);
    EXPECT_EQ(b.unique_pitches_per_bar, a.unique_pitches_per_bar);
    EXPECT_EQ(b.qualified_notes_rate, a.qualified_notes_rate);
    EXPECT_EQ(b.empty_bar_rate, a.empty_bar_rate);
    EXPECT_EQ(b.polyphonicity, a.polyphonicity);
    EXPECT_EQ(b.rhythmic_intensity, a.rhythmic_intensity);
    EXPECT_EQ(b.chord_repetition, a.chord_repetition);
  }
}

TEST(Metrics, SelfConcatenationKeepsRates) {
  Rng rng(43);
  for (int i = 0; i < 30; ++i) {
    QuantizedPiece p = random_piece(rng, {.max_bars = 6});
    // Keep notes inside their bars so the copy does not bleed.
    for (Note& n : p.notes) n.duration = std::min(n.duration, 16 - n.subbeat);
    QuantizedPiece twice = p;
    twice.bar_count *= 2;
    for (Note n : p.notes) {
      n.bar += p.bar_count;
      twice.notes.push_back(n);
    }
    const MetricsReport a = evaluate(p, {});
    const MetricsReport b = evaluate(twice, {});
    EXPECT_NEAR(b.qualified_notes_rate, a.qualified_notes_rate, 1e-12);
    EXPECT_NEAR(b.empty_bar_rate, a.empty_bar_rate, 1e-12);
    EXPECT_NEAR(b.unique_pitches_per_bar, a.unique_pitches_per_bar, 1e-12);
    EXPECT_NEAR(b.polyphonicity, a.polyphonicity, 1e-12);
    EXPECT_NEAR(b.rhythmic_intensity, a.rhythmic_intensity, 1e-12);
    EXPECT_EQ(b.pitch_space, a.pitch_space);
  }
}

TEST(Metrics, JsonHasEveryField) {
  QuantizedPiece p;
  p.bar_count = 1;
  p.notes = {{0, 0, 60, 80, 4}};
  const auto j = to_json(evaluate(p, {}));
  for (const char* key : {"qualified_notes_rate", "empty_bar_rate", "pitch_min", "pitch_max", "pitch_space",
                          "unique_pitches_per_bar", "chord_repetition", "polyphonicity", "rhythmic_intensity"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_NE(to_table(evaluate(p, {})).find("pitch_space"), std::string::npos);
}
