#pragma once

// Standard MIDI File reading/writing and quantization onto the 16th-note
// grid used by the REMI codec.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace textmidi {

inline constexpr int kSubbeatsPerBar = 16;
inline constexpr int kMaxNoteSubbeats = 16;
inline constexpr int kOutputTicksPerQuarter = 480;
inline constexpr int kDefaultTempoBpm = 120;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error("offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EventKind : std::uint8_t { NoteOn, NoteOff, Tempo };

struct MidiEvent {
  std::int64_t tick = 0;
  EventKind kind = EventKind::NoteOn;
  std::uint8_t channel = 0;
  std::uint8_t pitch = 0;
  std::uint8_t velocity = 0;
  std::uint32_t usec_per_quarter = 0;  // Tempo events only

  friend bool operator==(const MidiEvent&, const MidiEvent&) = default;
};

struct MidiPiece {
  int ticks_per_quarter = kOutputTicksPerQuarter;
  std::vector<MidiEvent> events;  // sorted by tick, stable
  std::int64_t end_tick = 0;      // latest end-of-track tick over all tracks
};

struct Note {
  int bar = 0;
  int subbeat = 0;
  int pitch = 0;
  int velocity = 0;
  int duration = 1;  // in sub-beats, clamped to [1, 16]
  // Rounded length before clamping, when it was measured from ticks or
  // decoded from a zero-length token. Absent means "same as duration".
  std::optional<int> raw_duration;

  int onset() const { return bar * kSubbeatsPerBar + subbeat; }
  int measured_duration() const { return raw_duration.value_or(duration); }

  // Sort/equality key; raw_duration is bookkeeping and not part of identity.
  std::tuple<const int&, const int&, const int&, const int&, const int&> key() const {
    return std::tie(bar, subbeat, pitch, duration, velocity);
  }

  friend bool operator==(const Note& a, const Note& b) { return a.key() == b.key(); }
};

inline bool note_order(const Note& a, const Note& b) { return a.key() < b.key(); }

struct QuantizedPiece {
  std::vector<Note> notes;  // sorted by (bar, subbeat, pitch)
  int tempo_bpm = kDefaultTempoBpm;
  int bar_count = 0;
  bool closed_unpaired_notes = false;  // some note-on never saw its note-off

  friend bool operator==(const QuantizedPiece& a, const QuantizedPiece& b) {
    return a.notes == b.notes && a.tempo_bpm == b.tempo_bpm && a.bar_count == b.bar_count;
  }
};

inline void validate(const QuantizedPiece& piece) {
  auto fail = [](const std::string& what) { throw InvariantError("invalid piece: " + what); };
  if (piece.bar_count < 0) fail("negative bar_count");
  if (piece.tempo_bpm < 4 || piece.tempo_bpm > 1000) fail("tempo_bpm out of [4, 1000]");
  for (std::size_t i = 0; i < piece.notes.size(); ++i) {
    const Note& n = piece.notes[i];
    const std::string where = "note " + std::to_string(i) + ": ";
    if (n.bar < 0 || n.bar >= piece.bar_count) fail(where + "bar outside [0, bar_count)");
    if (n.subbeat < 0 || n.subbeat >= kSubbeatsPerBar) fail(where + "subbeat outside [0, 16)");
    if (n.pitch < 0 || n.pitch > 127) fail(where + "pitch outside [0, 127]");
    // Velocity 0 is a note-off in SMF, so it cannot be represented.
    if (n.velocity < 1 || n.velocity > 127) fail(where + "velocity outside [1, 127]");
    if (n.duration < 1 || n.duration > kMaxNoteSubbeats) fail(where + "duration outside [1, 16]");
    if (i > 0 && note_order(n, piece.notes[i - 1])) fail(where + "notes not sorted");
  }
}

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }
  bool has(std::size_t n, std::size_t limit) const { return pos_ + n <= limit; }

  std::uint8_t u8(std::size_t limit, const char* what) {
    if (!has(1, limit)) throw ParseError(std::string("truncated ") + what, pos_);
    return bytes_[pos_++];
  }

  std::uint8_t peek(std::size_t limit, const char* what) const {
    if (!has(1, limit)) throw ParseError(std::string("truncated ") + what, pos_);
    return bytes_[pos_];
  }

  std::uint32_t be(int width, std::size_t limit, const char* what) {
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 8) | u8(limit, what);
    return v;
  }

  std::uint32_t vlq(std::size_t limit, const char* what) {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8(limit, what);
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw ParseError(std::string("variable-length quantity longer than 4 bytes in ") + what, start);
  }

  std::uint8_t data_byte(std::size_t limit) {
    const std::size_t at = pos_;
    const std::uint8_t b = u8(limit, "channel event");
    if (b & 0x80) throw ParseError("status byte where a data byte was expected", at);
    return b;
  }

  void skip(std::size_t n, std::size_t limit, const char* what) {
    if (!has(n, limit)) throw ParseError(std::string("truncated ") + what, pos_);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::int64_t parse_track(ByteReader& in, std::size_t end, std::vector<MidiEvent>& out) {
  std::int64_t tick = 0;
  std::uint8_t running = 0;
  while (in.pos() < end) {
    tick += in.vlq(end, "delta time");
    const std::size_t status_at = in.pos();
    std::uint8_t status = in.peek(end, "event");
    if (status & 0x80) {
      in.u8(end, "event");
      running = status < 0xF0 ? status : 0;
    } else {
      if (running == 0) throw ParseError("data byte with no running status in effect", status_at);
      status = running;
    }

    if (status == 0xFF) {
      const std::uint8_t type = in.u8(end, "meta event");
      const std::uint32_t len = in.vlq(end, "meta length");
      if (type == 0x51 && len == 3) {
        MidiEvent ev;
        ev.tick = tick;
        ev.kind = EventKind::Tempo;
        ev.usec_per_quarter = in.be(3, end, "tempo meta");
        if (ev.usec_per_quarter > 0) out.push_back(ev);
      } else {
        in.skip(len, end, "meta event");
      }
      if (type == 0x2F) return tick;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      in.skip(in.vlq(end, "sysex length"), end, "sysex event");
      continue;
    }
    if (status > 0xF0) throw ParseError("system message inside a track", status_at);

    const std::uint8_t channel = status & 0x0F;
    switch (status & 0xF0) {
      case 0x80:
      case 0x90: {
        const std::uint8_t pitch = in.data_byte(end);
        const std::uint8_t velocity = in.data_byte(end);
        MidiEvent ev;
        ev.tick = tick;
        ev.channel = channel;
        ev.pitch = pitch;
        ev.velocity = velocity;
        ev.kind = ((status & 0xF0) == 0x90 && velocity > 0) ? EventKind::NoteOn : EventKind::NoteOff;
        out.push_back(ev);
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        in.data_byte(end);
        in.data_byte(end);
        break;
      default:  // 0xC0, 0xD0
        in.data_byte(end);
        break;
    }
  }
  return tick;
}

inline void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

// floor(ticks * 4 / tpq + 1/2): nearest sub-beat, ties round up.
inline std::int64_t ticks_to_subbeats(std::int64_t ticks, std::int64_t tpq) {
  return (8 * ticks + tpq) / (2 * tpq);
}

}  // namespace detail

inline MidiPiece parse_smf(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const std::size_t size = bytes.size();
  if (size < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "MThd"))
    throw ParseError("missing MThd header chunk", 0);
  in.seek(4);
  const std::uint32_t header_len = in.be(4, size, "header chunk");
  if (header_len < 6) throw ParseError("header chunk shorter than 6 bytes", 4);
  const std::size_t header_end = 8 + static_cast<std::size_t>(header_len);
  if (header_end > size) throw ParseError("truncated header chunk", 8);
  const std::uint32_t format = in.be(2, header_end, "header chunk");
  const std::uint32_t track_count = in.be(2, header_end, "header chunk");
  const std::uint32_t division = in.be(2, header_end, "header chunk");
  if (format == 2) throw ParseError("SMF format 2 is not supported", 8);
  if (format > 2) throw ParseError("unknown SMF format " + std::to_string(format), 8);
  if (division & 0x8000) throw ParseError("SMPTE time division is not supported", 12);
  if (division == 0) throw ParseError("ticks per quarter must be positive", 12);

  MidiPiece piece;
  piece.ticks_per_quarter = static_cast<int>(division);
  in.seek(header_end);

  std::uint32_t tracks_read = 0;
  while (tracks_read < track_count) {
    const std::size_t chunk_at = in.pos();
    if (!in.has(8, size)) throw ParseError("truncated chunk: expected " + std::to_string(track_count) +
                                               " tracks, found " + std::to_string(tracks_read),
                                           chunk_at);
    const bool is_track = std::equal(bytes.begin() + chunk_at, bytes.begin() + chunk_at + 4, "MTrk");
    in.seek(chunk_at + 4);
    const std::size_t len = in.be(4, size, "chunk length");
    const std::size_t chunk_end = in.pos() + len;
    if (chunk_end > size) throw ParseError("truncated chunk", chunk_at);
    if (is_track) {
      piece.end_tick = std::max(piece.end_tick, detail::parse_track(in, chunk_end, piece.events));
      ++tracks_read;
    }
    in.seek(chunk_end);
  }

  std::stable_sort(piece.events.begin(), piece.events.end(),
                   [](const MidiEvent& a, const MidiEvent& b) { return a.tick < b.tick; });
  return piece;
}

inline QuantizedPiece quantize(const MidiPiece& piece, int default_tempo_bpm = kDefaultTempoBpm) {
  if (piece.ticks_per_quarter <= 0) throw InvariantError("ticks_per_quarter must be positive");
  const std::int64_t tpq = piece.ticks_per_quarter;

  QuantizedPiece out;
  out.tempo_bpm = default_tempo_bpm;
  bool have_tempo = false;

  std::map<std::pair<int, int>, std::deque<std::pair<std::int64_t, int>>> open;
  std::int64_t last_tick = piece.end_tick;

  auto close = [&](std::int64_t on_tick, int velocity, int pitch, std::int64_t off_tick) {
    const std::int64_t onset = detail::ticks_to_subbeats(on_tick, tpq);
    const std::int64_t raw = detail::ticks_to_subbeats(off_tick - on_tick, tpq);
    Note n;
    n.bar = static_cast<int>(onset / kSubbeatsPerBar);
    n.subbeat = static_cast<int>(onset % kSubbeatsPerBar);
    n.pitch = pitch;
    n.velocity = velocity;
    n.duration = static_cast<int>(std::clamp<std::int64_t>(raw, 1, kMaxNoteSubbeats));
    n.raw_duration = static_cast<int>(std::min<std::int64_t>(raw, 1 << 20));
    out.notes.push_back(n);
  };

  for (const MidiEvent& ev : piece.events) {
    last_tick = std::max(last_tick, ev.tick);
    switch (ev.kind) {
      case EventKind::Tempo:
        if (!have_tempo) {
          const double bpm = std::floor(60'000'000.0 / ev.usec_per_quarter + 0.5);
          out.tempo_bpm = static_cast<int>(std::clamp(bpm, 4.0, 1000.0));
          have_tempo = true;
        }
        break;
      case EventKind::NoteOn:
        open[{ev.channel, ev.pitch}].emplace_back(ev.tick, ev.velocity);
        break;
      case EventKind::NoteOff: {
        auto it = open.find({ev.channel, ev.pitch});
        if (it == open.end() || it->second.empty()) break;  // stray note-off
        auto [on_tick, velocity] = it->second.front();
        it->second.pop_front();
        close(on_tick, velocity, ev.pitch, ev.tick);
        break;
      }
    }
  }
  for (auto& [key, pending] : open) {
    for (auto [on_tick, velocity] : pending) {
      close(on_tick, velocity, key.second, last_tick);
      out.closed_unpaired_notes = true;
    }
  }

  std::sort(out.notes.begin(), out.notes.end(), note_order);
  int bars = static_cast<int>(detail::ticks_to_subbeats(piece.end_tick, tpq) / kSubbeatsPerBar);
  for (const Note& n : out.notes) bars = std::max(bars, n.bar + 1);
  out.bar_count = bars;
  return out;
}

inline std::vector<std::uint8_t> write_smf(const QuantizedPiece& piece) {
  validate(piece);
  constexpr std::int64_t kSubbeatTicks = kOutputTicksPerQuarter / 4;

  struct Pending {
    std::int64_t tick;
    int order;  // note-offs before note-ons at the same tick
    std::array<std::uint8_t, 3> msg;
  };
  std::vector<Pending> events;
  events.reserve(piece.notes.size() * 2);

  // Overlapping notes of the same pitch go to different channels so that
  // note-on/note-off pairing is unambiguous on read.
  std::vector<std::array<std::int64_t, 128>> busy_until;
  std::int64_t end_tick = static_cast<std::int64_t>(piece.bar_count) * kSubbeatsPerBar * kSubbeatTicks;
  for (const Note& n : piece.notes) {
    const std::int64_t on = static_cast<std::int64_t>(n.onset()) * kSubbeatTicks;
    const std::int64_t off = on + static_cast<std::int64_t>(n.duration) * kSubbeatTicks;
    std::size_t slot = 0;
    while (slot < busy_until.size() && busy_until[slot][n.pitch] > on) ++slot;
    if (slot == busy_until.size()) {
      if (slot == 15) throw InvariantError("more than 15 overlapping notes of one pitch");
      busy_until.emplace_back();
      busy_until.back().fill(0);
    }
    busy_until[slot][n.pitch] = off;
    const auto channel = static_cast<std::uint8_t>(slot < 9 ? slot : slot + 1);  // skip drums
    const auto pitch = static_cast<std::uint8_t>(n.pitch);
    events.push_back({on, 1, {static_cast<std::uint8_t>(0x90 | channel), pitch, static_cast<std::uint8_t>(n.velocity)}});
    events.push_back({off, 0, {static_cast<std::uint8_t>(0x80 | channel), pitch, 0}});
    end_tick = std::max(end_tick, off);
  }
  std::stable_sort(events.begin(), events.end(), [](const Pending& a, const Pending& b) {
    return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
  });

  std::vector<std::uint8_t> track;
  const auto usec = static_cast<std::uint32_t>(std::floor(60'000'000.0 / piece.tempo_bpm + 0.5));
  track.insert(track.end(), {0x00, 0xFF, 0x51, 0x03});
  detail::put_be(track, usec, 3);
  std::int64_t now = 0;
  for (const Pending& ev : events) {
    detail::put_vlq(track, static_cast<std::uint32_t>(ev.tick - now));
    now = ev.tick;
    track.insert(track.end(), ev.msg.begin(), ev.msg.end());
  }
  detail::put_vlq(track, static_cast<std::uint32_t>(end_tick - now));
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  detail::put_be(out, 6, 4);
  detail::put_be(out, 0, 2);  // format 0
  detail::put_be(out, 1, 2);
  detail::put_be(out, kOutputTicksPerQuarter, 2);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  detail::put_be(out, static_cast<std::uint32_t>(track.size()), 4);
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace textmidi
