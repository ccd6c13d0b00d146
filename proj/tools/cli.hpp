#pragma once

// The textmidi command line. Kept in a header so tests can drive run()
// in-process with captured streams.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "textmidi/align.hpp"
#include "textmidi/attributes.hpp"
#include "textmidi/dataset.hpp"
#include "textmidi/generate.hpp"
#include "textmidi/metrics.hpp"
#include "textmidi/midi_io.hpp"
#include "textmidi/remi.hpp"

namespace textmidi::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON config files: top-level keys set global options, nested objects set
// the options of the subcommand they are named after.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return collect(app, default_also).dump();
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        flatten(value, next, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }

  static ojson collect(const CLI::App* app, bool default_also) {
    ojson j = ojson::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        j[name] = r.size() == 1 ? ojson(r.front()) : ojson(r);
      } else if (default_also) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = collect(sub, default_also);
    return j;
  }
};

// ---------------------------------------------------------------------------
// Helpers

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline QuantizedPiece load_midi(const fs::path& path) { return quantize(parse_smf(read_binary_file(path))); }

// Accepts the JSON event list, a tokenize document holding one, or the
// one-token-per-line text form.
inline RemiSequence load_remi(const fs::path& path) {
  const std::string text = read_text_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '[' || text[first] == '{')) {
    const json j = json::parse(text);
    return from_json(j.is_object() ? j.at("tokens") : j);
  }
  return from_text(text);
}

inline ojson classes_json(const AttributeClasses& c) { return {{"rhythm", c.rhythm}, {"polyphony", c.polyphony}}; }

inline ojson bins_json(const AttributeBins& b) {
  return {{"rhythm", b.rhythm.edges}, {"polyphony", b.polyphony.edges}};
}

template <class Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct AlignFlags {
  AlignConfig config;
  std::string scheduler = "cosine";
  std::string optimizer = "sgd";
  std::string loss = "in-batch";
};

// Each subcommand binds its own storage so a config section for one
// subcommand never leaks into another.
struct FilesOptions {
  std::vector<std::string> midi_files;
  bool json_output = false;
};

struct DetokenizeOptions {
  std::string remi_file;
  std::string out;
  bool repair = false;
};

struct BuildOptions {
  std::string manifest;
  int segment_bars = kSegmentBars;
  std::string out;
};

struct SplitOptions {
  std::string pairs_file;
  std::string out_dir;
};

struct TrainOptions {
  AlignFlags align;
  std::string train_file;
  std::string validation_file;
  std::string checkpoint;
  std::string loss_csv;
};

struct GradCheckOptions {
  AlignFlags align;
  DecoderConfig decoder;
  std::string checkpoint;
  std::string data_file;
  double h = 1e-5;
  std::size_t samples = 50;
  int batch = 4;
};

struct GenerateOptions {
  AlignFlags align;
  DecoderConfig decoder;
  GenerationConfig gen;
  std::string tune_optimizer = "adam";
  std::string checkpoint;
  std::string out_dir;
};

inline void cmd_tokenize(const FilesOptions& o, std::ostream& out) {
  std::vector<QuantizedPiece> pieces;
  std::vector<BarAttributeScores> scores;
  for (const auto& f : o.midi_files) {
    pieces.push_back(load_midi(f));
    scores.push_back(bar_attributes(pieces.back()));
  }
  const AttributeBins bins = bin_attributes(scores);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const RemiSequence seq = encode(pieces[i], detect_chords(pieces[i]));
    ojson j;
    j["piece_id"] = fs::path(o.midi_files[i]).stem().string();
    j["tokens"] = to_json(seq);
    j["bar_positions"] = seq.bar_positions;
    j["attribute_classes"] = classes_json(classify(scores[i], bins));
    out << j.dump() << '\n';
  }
}

inline void cmd_detokenize(const DetokenizeOptions& o, std::ostream& out) {
  RemiSequence seq = load_remi(o.remi_file);
  if (o.repair) seq = repair(seq);
  const QuantizedPiece piece = decode(seq);
  write_binary_file(o.out, write_smf(piece));
  out << ojson{{"out", o.out}, {"bars", piece.bar_count}, {"notes", piece.notes.size()}}.dump() << '\n';
}

inline void cmd_attrs(const FilesOptions& o, std::ostream& out) {
  std::vector<BarAttributeScores> scores;
  for (const auto& f : o.midi_files) scores.push_back(bar_attributes(load_midi(f)));
  const AttributeBins bins = bin_attributes(scores);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ojson j;
    j["piece_id"] = fs::path(o.midi_files[i]).stem().string();
    j["rhythmic_intensity"] = scores[i].rhythm;
    j["polyphony"] = scores[i].polyphony;
    j["classes"] = classes_json(classify(scores[i], bins));
    j["bins"] = bins_json(bins);
    out << j.dump() << '\n';
  }
}

inline void cmd_metrics(const FilesOptions& o, std::ostream& out) {
  for (const auto& f : o.midi_files) {
    const QuantizedPiece piece = load_midi(f);
    const MetricsReport r = evaluate(piece, detect_chords(piece));
    if (o.json_output) {
      ojson j = to_json(r);
      j["piece_id"] = fs::path(f).stem().string();
      out << j.dump() << '\n';
    } else {
      if (o.midi_files.size() > 1) out << fs::path(f).stem().string() << '\n';
      out << to_table(r);
    }
  }
}

// Manifest: {"reviews": {id: text}, "pieces": [{"id", "midi", "reviews": [ids]}]}
// with MIDI paths relative to the manifest.
inline void cmd_dataset_build(const BuildOptions& o, std::uint64_t seed, std::ostream& out) {
  const fs::path manifest_path(o.manifest);
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw DatasetError("manifest: " + std::string(e.what()));
  }
  std::map<std::string, std::string> reviews;
  std::vector<std::string> ids;
  std::vector<QuantizedPiece> pieces;
  std::vector<std::vector<std::string>> links;
  try {
    reviews = manifest.at("reviews").get<std::map<std::string, std::string>>();
    for (const auto& p : manifest.at("pieces")) {
      ids.push_back(p.at("id").get<std::string>());
      pieces.push_back(load_midi(manifest_path.parent_path() / p.at("midi").get<std::string>()));
      links.push_back(p.at("reviews").get<std::vector<std::string>>());
    }
  } catch (const json::exception& e) {
    throw DatasetError("manifest: " + std::string(e.what()));
  }
  std::vector<BarAttributeScores> scores;
  for (const auto& p : pieces) scores.push_back(bar_attributes(p));
  const AttributeBins bins = bin_attributes(scores);
  std::vector<TokenizedPiece> segments;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    for (auto& s : segment(tokenize_piece(ids[i], pieces[i], bins, links[i]), o.segment_bars)) {
      segments.push_back(std::move(s));
    }
  }
  const auto pairs = build_pairs(segments, reviews, seed);
  if (o.out.empty()) {
    write_jsonl(out, pairs);
  } else {
    write_jsonl(fs::path(o.out), pairs);
    out << ojson{{"out", o.out}, {"segments", segments.size()}, {"examples", pairs.size()}}.dump() << '\n';
  }
}

inline void cmd_dataset_split(const SplitOptions& o, std::uint64_t seed, std::ostream& out) {
  const auto examples = read_jsonl(fs::path(o.pairs_file));
  const SplitSet s = split(examples, seed);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_jsonl(dir / "train.jsonl", s.train);
  write_jsonl(dir / "validation.jsonl", s.validation);
  write_jsonl(dir / "test.jsonl", s.test);
  out << ojson{{"train", s.train.size()}, {"validation", s.validation.size()}, {"test", s.test.size()}}.dump()
      << '\n';
}

inline AlignConfig resolved_align(const AlignFlags& o, std::uint64_t seed) {
  AlignConfig c = o.config;
  validated([&] {
    c.scheduler = parse_scheduler(o.scheduler);
    c.optimizer = parse_optimizer(o.optimizer);
    c.loss = parse_align_loss(o.loss);
    c.seed = seed;
    c.validate();
  });
  return c;
}

inline void cmd_train_align(const TrainOptions& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const AlignConfig c = resolved_align(o.align, seed);
  SplitSet s;
  s.train = read_jsonl(fs::path(o.train_file));
  if (!o.validation_file.empty()) s.validation = read_jsonl(fs::path(o.validation_file));
  if (s.train.empty()) throw DatasetError("train split is empty");
  const TrainResult r = train(s, c);
  for (const LossRecord& rec : r.history) err << "epoch " << rec.epoch << ' ' << rec.split << " loss " << rec.loss << '\n';
  if (!o.checkpoint.empty()) save_checkpoint(fs::path(o.checkpoint), r.model);
  if (!o.loss_csv.empty()) {
    std::ostringstream csv;
    write_loss_csv(csv, r.history);
    write_text_file(o.loss_csv, csv.str());
  } else {
    write_loss_csv(out, r.history);
  }
}

inline ojson report_json(const GradCheckReport& r) {
  ojson tensors = ojson::array();
  for (const auto& t : r.tensors) {
    tensors.push_back({{"tensor", t.tensor}, {"checked", t.checked}, {"max_rel_error", t.max_rel_error}});
  }
  return {{"max_rel_error", r.max_rel_error}, {"passed", r.passed()}, {"tensors", tensors}};
}

// Checks the alignment model (from a checkpoint or freshly initialized) on a
// batch drawn from --data or from seeded random tokens, then the decoder's
// tuning gradients. Returns false when any tensor fails.
inline bool cmd_grad_check(const GradCheckOptions& o, std::uint64_t seed, std::ostream& out) {
  if (!(o.h >= 1e-6 && o.h <= 1e-3)) throw UsageError("--step must lie in [1e-6, 1e-3]");
  if (o.batch < 2) throw UsageError("--batch must be at least 2");
  const AlignConfig ac = resolved_align(o.align, seed);
  AlignModel model = o.checkpoint.empty() ? init_align_model(ac) : load_checkpoint(fs::path(o.checkpoint));
  Rng rng(seed);
  std::vector<AlignExample> batch;
  if (!o.data_file.empty()) {
    const auto pairs = read_jsonl(fs::path(o.data_file));
    for (auto& ex : align_examples(pairs, model.config.text_hash_buckets)) {
      if (static_cast<int>(batch.size()) == o.batch) break;
      batch.push_back(std::move(ex));
    }
    if (static_cast<int>(batch.size()) < 2) throw DatasetError("need at least 2 positive examples for a batch");
  } else {
    for (int i = 0; i < o.batch; ++i) {
      AlignExample ex;
      for (int k = 0; k < 8; ++k) ex.music.push_back(static_cast<TokenId>(uniform_index(rng, kVocabSize)));
      for (int k = 0; k < 4; ++k) ex.text.push_back(static_cast<int>(uniform_index(rng, model.config.text_hash_buckets)));
      ex.negatives.push_back({static_cast<int>(uniform_index(rng, model.config.text_hash_buckets))});
      batch.push_back(std::move(ex));
    }
  }
  const GradCheckReport align_report = grad_check(model, batch, o.h, rng, o.samples);

  DecoderConfig dc = o.decoder;
  dc.seed = seed;
  validated([&] { dc.validate(); });
  const DecoderModel decoder = init_decoder(dc);
  GenerationConfig gc;
  gc.seed = seed;
  gc.max_tokens = std::min(16, dc.max_length);
  const std::vector<TokenId> context = generate_raw(decoder, gc).tokens;
  const GradCheckReport decoder_report =
      decoder_grad_check(decoder, model, "A pop song about love", context, o.h, rng, o.samples);

  out << ojson{{"align", report_json(align_report)}, {"decoder", report_json(decoder_report)}}.dump(2) << '\n';
  return align_report.passed() && decoder_report.passed();
}

inline void cmd_generate(const GenerateOptions& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  GenerationConfig gc = o.gen;
  DecoderConfig dc = o.decoder;
  validated([&] {
    gc.tune_optimizer = parse_optimizer(o.tune_optimizer);
    gc.seed = seed;
    dc.seed = seed;
    gc.validate();
    dc.validate();
    if (gc.prompt.empty()) throw std::invalid_argument("--prompt must be non-empty");
    if (gc.max_tokens > dc.max_length) throw std::invalid_argument("--max-tokens exceeds --decoder-length");
  });
  AlignModel align;
  if (o.checkpoint.empty()) {
    err << "warning: no --align checkpoint given; using an untrained alignment model\n";
    align = init_align_model(resolved_align(o.align, seed));
  } else {
    align = load_checkpoint(fs::path(o.checkpoint));
  }
  const TuneResult r = clip_guided_tune(init_decoder(dc), align, gc.prompt, gc);
  const QuantizedPiece piece = decode(r.repaired);

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_text_file(dir / "raw.txt", to_text(r.raw));
  write_text_file(dir / "repaired.txt", to_text(r.repaired));
  write_binary_file(dir / "generated.mid", write_smf(piece));
  std::ostringstream csv;
  csv << "epoch,loss\n";
  csv.precision(17);
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) csv << i + 1 << ',' << r.loss_history[i] << '\n';
  write_text_file(dir / "tune_loss.csv", csv.str());

  ojson summary;
  summary["raw"] = (dir / "raw.txt").string();
  summary["repaired"] = (dir / "repaired.txt").string();
  summary["midi"] = (dir / "generated.mid").string();
  summary["tune_loss"] = (dir / "tune_loss.csv").string();
  summary["epochs"] = r.loss_history.size();
  summary["initial_loss"] = r.loss_history.empty() ? 0.0 : r.loss_history.front();
  summary["final_loss"] = r.loss_history.empty() ? 0.0 : r.loss_history.back();
  summary["raw_tokens"] = r.raw.tokens.size();
  summary["repaired_tokens"] = r.repaired.tokens.size();
  out << summary.dump() << '\n';
}

// ---------------------------------------------------------------------------

inline void add_align_options(CLI::App* sub, AlignFlags& o) {
  sub->add_option("--embed-dim", o.config.embed_dim, "Embedding width d")->capture_default_str();
  sub->add_option("--heads", o.config.heads, "Attention heads (must divide d)")->capture_default_str();
  sub->add_option("--batch-size", o.config.batch_size, "Examples per step")->capture_default_str();
  sub->add_option("--lr-max", o.config.lr_max, "Peak learning rate")->capture_default_str();
  sub->add_option("--lr-min", o.config.lr_min, "Final learning rate of the cosine schedule")->capture_default_str();
  sub->add_option("--scheduler", o.scheduler, "constant or cosine")->capture_default_str();
  sub->add_option("--optimizer", o.optimizer, "sgd or adam")->capture_default_str();
  sub->add_option("--loss", o.loss, "in-batch or pairwise")->capture_default_str();
  sub->add_option("--epochs", o.config.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--temperature-init", o.config.temperature_init, "Initial softmax temperature")->capture_default_str();
  sub->add_option("--text-hash-buckets", o.config.text_hash_buckets, "Hash buckets for caption words")
      ->capture_default_str();
}

inline void add_decoder_options(CLI::App* sub, DecoderConfig& o) {
  sub->add_option("--decoder-dim", o.embed_dim, "Decoder embedding width")->capture_default_str();
  sub->add_option("--decoder-length", o.max_length, "Decoder maximum sequence length")->capture_default_str();
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::uint64_t seed = 0;
  FilesOptions tok_o;
  DetokenizeOptions detok_o;
  FilesOptions attrs_o;
  FilesOptions metrics_o;
  BuildOptions build_o;
  SplitOptions split_o;
  TrainOptions train_o;
  GradCheckOptions grad_o;
  GenerateOptions gen_o;

  CLI::App app{"textmidi: MIDI/REMI tokenization, attributes, metrics, datasets, alignment and generation"};
  app.name("textmidi");
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", seed, "Seed for every randomized step")->capture_default_str();

  auto* tokenize = app.add_subcommand("tokenize", "MIDI to REMI JSON (one line per file) with attribute classes");
  tokenize->add_option("midi", tok_o.midi_files, "MIDI files; attribute bins are fitted over all of them")
      ->required()
      ->check(CLI::ExistingFile);

  auto* detokenize = app.add_subcommand("detokenize", "REMI (JSON or text) to a MIDI file");
  detokenize->add_option("remi", detok_o.remi_file, "REMI file")->required()->check(CLI::ExistingFile);
  detokenize->add_option("-o,--out", detok_o.out, "Output MIDI path")->required();
  detokenize->add_flag("--repair", detok_o.repair, "Repair the stream before decoding");

  auto* attrs = app.add_subcommand("attrs", "Per-bar rhythmic intensity and polyphony with octile classes");
  attrs->add_option("midi", attrs_o.midi_files, "MIDI files")->required()->check(CLI::ExistingFile);

  auto* metrics = app.add_subcommand("metrics", "Objective metrics of MIDI files");
  metrics->add_option("midi", metrics_o.midi_files, "MIDI files")->required()->check(CLI::ExistingFile);
  metrics->add_flag("--json", metrics_o.json_output, "Print JSON lines instead of a table");

  auto* dataset = app.add_subcommand("dataset", "Contrastive dataset construction");
  dataset->require_subcommand(1);
  dataset->fallthrough();
  auto* build = dataset->add_subcommand("build", "Segment pieces and pair them with reviews (JSONL)");
  build->add_option("--manifest", build_o.manifest, "Manifest JSON with pieces and reviews")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--segment-bars", build_o.segment_bars, "Bars per segment")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  build->add_option("--out", build_o.out, "Output JSONL (stdout when omitted)");
  auto* split_cmd = dataset->add_subcommand("split", "Split pairs 0.8/0.1/0.1 by segment");
  split_cmd->add_option("pairs", split_o.pairs_file, "Pairs JSONL")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--out", split_o.out_dir, "Output directory for train/validation/test JSONL")->required();

  auto* train_cmd = app.add_subcommand("train-align", "Train the text-music alignment model");
  train_cmd->add_option("--train", train_o.train_file, "Training pairs JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--validation", train_o.validation_file, "Validation pairs JSONL")->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint", train_o.checkpoint, "Where to save the trained model");
  train_cmd->add_option("--loss-csv", train_o.loss_csv, "Loss history CSV (stdout when omitted)");
  add_align_options(train_cmd, train_o.align);

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every gradient tensor");
  grad_cmd->add_option("--checkpoint", grad_o.checkpoint, "Alignment checkpoint (fresh model when omitted)")
      ->check(CLI::ExistingFile);
  grad_cmd->add_option("--data", grad_o.data_file, "Pairs JSONL for the batch (random tokens when omitted)")
      ->check(CLI::ExistingFile);
  grad_cmd->add_option("--step", grad_o.h, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--samples", grad_o.samples, "Entries sampled per tensor")->capture_default_str();
  grad_cmd->add_option("--batch", grad_o.batch, "Batch size")->capture_default_str();
  add_align_options(grad_cmd, grad_o.align);
  add_decoder_options(grad_cmd, grad_o.decoder);

  auto* gen_cmd = app.add_subcommand("generate", "Alignment-guided generation: raw REMI, repaired REMI and MIDI");
  GenerationConfig& g = gen_o.gen;
  gen_cmd->add_option("--prompt", g.prompt, "Text prompt")->required();
  gen_cmd->add_option("--align", gen_o.checkpoint, "Alignment checkpoint")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen_o.out_dir, "Output directory")->required();
  gen_cmd->add_option("--nucleus-p", g.nucleus_p, "Nucleus mass p")->capture_default_str();
  gen_cmd->add_option("--max-tokens", g.max_tokens, "Token budget of the emitted piece")->capture_default_str();
  gen_cmd->add_option("--tune-epochs", g.tune_epochs, "Tuning epochs")->capture_default_str();
  gen_cmd->add_option("--tune-lr", g.tune_lr, "Tuning learning rate")->capture_default_str();
  gen_cmd->add_option("--tune-optimizer", gen_o.tune_optimizer, "sgd or adam")->capture_default_str();
  gen_cmd->add_option("--tune-context", g.tune_context, "Context length for the tuning loss")->capture_default_str();
  gen_cmd->add_flag("--early-stop", g.early_stop, "Stop tuning on a loss plateau");
  gen_cmd->add_option("--patience", g.patience, "Plateau patience in epochs")->capture_default_str();
  gen_cmd->add_option("--min-delta", g.min_delta, "Minimum loss improvement")->capture_default_str();
  add_decoder_options(gen_cmd, gen_o.decoder);
  add_align_options(gen_cmd, gen_o.align);

  std::vector<std::string> storage = {"textmidi"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  err << "config: " << app.config_to_str(true, false) << '\n';

  try {
    if (tokenize->parsed()) cmd_tokenize(tok_o, out);
    if (detokenize->parsed()) cmd_detokenize(detok_o, out);
    if (attrs->parsed()) cmd_attrs(attrs_o, out);
    if (metrics->parsed()) cmd_metrics(metrics_o, out);
    if (build->parsed()) cmd_dataset_build(build_o, seed, out);
    if (split_cmd->parsed()) cmd_dataset_split(split_o, seed, out);
    if (train_cmd->parsed()) cmd_train_align(train_o, seed, out, err);
    if (grad_cmd->parsed() && !cmd_grad_check(grad_o, seed, out)) {
      err << "error: gradient check failed\n";
      return kData;
    }
    if (gen_cmd->parsed()) cmd_generate(gen_o, seed, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}

}  // namespace textmidi::cli
