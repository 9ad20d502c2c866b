// wamd: wavelet-attention morph detector command line.
//
// Subcommands: generate, decompose, train, eval, attmaps, ablate.
// Configuration precedence: flags > config file > defaults. The config file
// is flat `key = value` text with '#' comments; keys follow the flag names
// and are validated against a closed schema. A seed is mandatory.

#include "CLI11.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wamd/attention.hpp"
#include "wamd/checkpoint.hpp"
#include "wamd/data.hpp"
#include "wamd/dataset_io.hpp"
#include "wamd/metrics.hpp"
#include "wamd/model.hpp"
#include "wamd/pnm.hpp"
#include "wamd/rng.hpp"
#include "wamd/wavelet.hpp"

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

const std::map<std::string, std::string>& schema_defaults() {
  static const std::map<std::string, std::string> defaults{
      {"out", "out"},          {"data", "data"},
      {"subjects", "100"},     {"size", "32"},
      {"wavelet", "haar"},     {"widths", "16,32,64"},
      {"blocks", "1,1,1"},     {"dim", "64"},
      {"taps", "L1+L2+L3"},    {"epochs", "20"},
      {"batch", "8"},          {"lr", "0.001"},
      {"alpha", "0.5"},        {"morph-rounds", "1"},
      {"checkpoint", ""},      {"image", ""},
      {"sample", ""},          {"seed", ""},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::map<std::string, std::string> parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error(wamd::msg("cannot open config file ",
                                       path.string()));
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(wamd::msg(path.string(), ":", line_no,
                                         ": expected key = value"));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (schema_defaults().find(key) == schema_defaults().end())
      throw std::runtime_error(wamd::msg(path.string(), ":", line_no,
                                         ": unknown key '", key, "'"));
    values[key] = value;
  }
  return values;
}

/// One subcommand's option set: every key is a string option whose final
/// value resolves as flag > config file > default.
class CommandConfig {
 public:
  explicit CommandConfig(CLI::App* cmd) : cmd_(cmd) {
    config_opt_ = cmd_->add_option("--config", config_path_,
                                   "flat key = value configuration file");
  }

  void add(const std::string& key, const std::string& help) {
    auto& slot = slots_[key];
    slot.option = cmd_->add_option("--" + key, slot.value, help);
  }

  void add_flag(const std::string& key, const std::string& help) {
    auto& slot = flag_slots_[key];
    slot.option = cmd_->add_flag("--" + key, slot.value, help);
  }

  void resolve() {
    resolved_ = schema_defaults();
    if (!config_path_.empty())
      for (const auto& [k, v] : parse_config_file(config_path_))
        resolved_[k] = v;
    for (const auto& [k, slot] : slots_)
      if (slot.option->count() > 0) resolved_[k] = slot.value;
  }

  std::string str(const std::string& key) const { return resolved_.at(key); }

  std::string required(const std::string& key) const {
    const auto v = str(key);
    if (v.empty())
      throw std::runtime_error(wamd::msg("missing required option --", key));
    return v;
  }

  std::int64_t integer(const std::string& key) const {
    try {
      return std::stoll(required(key));
    } catch (const std::exception&) {
      throw std::runtime_error(wamd::msg("option --", key,
                                         " expects an integer, got '",
                                         str(key), "'"));
    }
  }

  double real(const std::string& key) const {
    try {
      return std::stod(required(key));
    } catch (const std::exception&) {
      throw std::runtime_error(wamd::msg("option --", key,
                                         " expects a number, got '",
                                         str(key), "'"));
    }
  }

  std::uint64_t seed() const {
    const auto v = str("seed");
    if (v.empty())
      throw std::runtime_error("a seed is mandatory: pass --seed or set "
                               "'seed' in the config file");
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw std::runtime_error(wamd::msg("--seed expects an unsigned "
                                         "integer, got '", v, "'"));
    }
  }

  bool flag(const std::string& key) const {
    const auto it = flag_slots_.find(key);
    return it != flag_slots_.end() && it->second.value;
  }

 private:
  struct Slot {
    std::string value;
    CLI::Option* option = nullptr;
  };
  struct FlagSlot {
    bool value = false;
    CLI::Option* option = nullptr;
  };

  CLI::App* cmd_;
  std::string config_path_;
  CLI::Option* config_opt_ = nullptr;
  std::map<std::string, Slot> slots_;
  std::map<std::string, FlagSlot> flag_slots_;
  std::map<std::string, std::string> resolved_;
};

std::array<std::int64_t, 3> parse_triple(const std::string& text,
                                         const std::string& what) {
  std::array<std::int64_t, 3> out{};
  std::size_t at = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t end = (i == 2) ? text.size() : text.find(',', at);
    if (end == std::string::npos)
      throw std::runtime_error(wamd::msg(what, " expects three "
                                         "comma-separated integers, got '",
                                         text, "'"));
    out[i] = std::stoll(text.substr(at, end - at));
    at = end + 1;
  }
  return out;
}

std::vector<wamd::Tap> parse_taps(const std::string& text) {
  std::vector<wamd::Tap> taps;
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t end = text.find('+', at);
    if (end == std::string::npos) end = text.size();
    taps.push_back(wamd::tap_from_string(trim(text.substr(at, end - at))));
    at = end + 1;
  }
  if (taps.empty()) throw std::runtime_error("--taps must name at least one "
                                             "of L1, L2, L3");
  return taps;
}

std::string taps_to_string(const std::vector<wamd::Tap>& taps) {
  std::string s;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (i) s += "+";
    s += wamd::to_string(taps[i]);
  }
  return s;
}

wamd::BackboneConfig backbone_from(const CommandConfig& cfg) {
  wamd::BackboneConfig bc;
  bc.input_size = cfg.integer("size");
  bc.stage_widths = parse_triple(cfg.required("widths"), "--widths");
  bc.stage_blocks = parse_triple(cfg.required("blocks"), "--blocks");
  bc.feature_dim = cfg.integer("dim");
  bc.active_taps = parse_taps(cfg.required("taps"));
  return bc;
}

std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_threshold(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

struct SplitSamples {
  std::vector<wamd::TrainSample<float>> train, val, test;
  std::vector<std::string> test_ids;
};

SplitSamples load_split(const fs::path& root, const wamd::FilterPair& filters,
                        std::int64_t expected_size) {
  SplitSamples out;
  for (const auto& sample : wamd::load_dataset(root)) {
    if (sample.image.rows() != expected_size ||
        sample.image.cols() != expected_size)
      throw std::runtime_error(wamd::msg(
          "sample ", sample.id, " is ", sample.image.rows(), "x",
          sample.image.cols(), " but the run is configured for ",
          expected_size));
    auto ts = wamd::subband_sample<float>(
        sample.image, sample.label == wamd::Label::morph ? 1 : 0, filters);
    switch (sample.partition) {
      case wamd::Partition::train: out.train.push_back(std::move(ts)); break;
      case wamd::Partition::val: out.val.push_back(std::move(ts)); break;
      case wamd::Partition::test:
        out.test.push_back(std::move(ts));
        out.test_ids.push_back(sample.id);
        break;
    }
  }
  return out;
}

void write_training_log(const fs::path& path,
                        const std::vector<wamd::EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw std::runtime_error(wamd::msg("cannot write ", path.string()));
  out << "epoch,train_loss,val_deer\n";
  for (const auto& e : log)
    out << e.epoch << ',' << fmt_rate(e.train_loss) << ','
        << fmt_rate(e.val_deer) << '\n';
}

struct EvalSummary {
  double deer = 0.0, bpcer5 = 0.0, bpcer10 = 0.0;
};

EvalSummary summarize(const wamd::ScoreSet& scores) {
  EvalSummary s;
  s.deer = wamd::d_eer(scores);
  s.bpcer5 = wamd::bpcer_at_apcer(scores, 0.05);
  s.bpcer10 = wamd::bpcer_at_apcer(scores, 0.10);
  return s;
}

void write_metrics_csv(const fs::path& path, const EvalSummary& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw std::runtime_error(wamd::msg("cannot write ", path.string()));
  out << "deer,bpcer5,bpcer10\n"
      << fmt_rate(s.deer) << ',' << fmt_rate(s.bpcer5) << ','
      << fmt_rate(s.bpcer10) << '\n';
}

void write_det_csv(const fs::path& path, const wamd::DetCurve& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw std::runtime_error(wamd::msg("cannot write ", path.string()));
  out << "threshold,apcer,bpcer\n";
  for (const auto& p : curve.points)
    out << fmt_threshold(p.threshold) << ',' << fmt_rate(p.apcer) << ','
        << fmt_rate(p.bpcer) << '\n';
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_generate(const CommandConfig& cfg) {
  wamd::DataConfig dc;
  dc.n_subjects = cfg.integer("subjects");
  dc.image_size = cfg.integer("size");
  dc.alpha = cfg.real("alpha");
  dc.morph_rounds = static_cast<int>(cfg.integer("morph-rounds"));
  dc.seed = cfg.seed();

  const fs::path root = cfg.required("out");
  auto dataset = wamd::build_dataset(dc);
  wamd::write_dataset(dataset, root);

  std::size_t bf = 0, mo = 0;
  for (const auto& s : dataset.samples)
    (s.face.label == wamd::Label::bona_fide ? bf : mo) += 1;
  std::printf("dataset: %s\n", root.string().c_str());
  std::printf("subjects: train=%zu val=%zu test=%zu\n",
              dataset.split.train.size(), dataset.split.val.size(),
              dataset.split.test.size());
  std::printf("samples: bona_fide=%zu morph=%zu\n", bf, mo);

  if (cfg.flag("verify")) {
    std::set<std::uint64_t> train(dataset.split.train.begin(),
                                  dataset.split.train.end());
    std::set<std::uint64_t> val(dataset.split.val.begin(),
                                dataset.split.val.end());
    std::set<std::uint64_t> test(dataset.split.test.begin(),
                                 dataset.split.test.end());
    for (const auto& row : wamd::read_manifest(root)) {
      const auto* members = row.partition == wamd::Partition::train ? &train
                            : row.partition == wamd::Partition::val ? &val
                                                                    : &test;
      for (auto id : row.subject_ids)
        if (members->count(id) != 1)
          throw std::runtime_error(wamd::msg("verify failed: sample ",
                                             row.sample_id,
                                             " crosses partitions"));
    }
    std::printf("verify: partitions disjoint, no cross-partition morphs\n");
  }
  return 0;
}

int cmd_decompose(const CommandConfig& cfg) {
  const fs::path image_path = cfg.required("image");
  const fs::path out_dir = cfg.required("out");
  const auto filters = wamd::wavelet_by_name(cfg.required("wavelet"));

  const auto channels = wamd::read_raster(image_path);
  const auto gray = wamd::to_grayscale(channels);
  const auto stack = wamd::packet_decompose(gray, filters);

  fs::create_directories(out_dir);
  std::ofstream manifest(out_dir / "manifest.txt", std::ios::trunc);
  std::ofstream sidecar(out_dir / "minmax.txt", std::ios::trunc);
  if (!manifest || !sidecar)
    throw std::runtime_error(wamd::msg("cannot write band index under ",
                                       out_dir.string()));
  for (std::size_t i = 0; i < stack.bands.size(); ++i) {
    const auto& band = stack.bands[i];
    const double lo = band.minCoeff(), hi = band.maxCoeff();
    // flat bands (e.g. a constant input) map to mid-gray
    wamd::Raster<double> mapped =
        hi - lo < 1e-15
            ? wamd::Raster<double>::Constant(band.rows(), band.cols(), 0.5)
            : ((band - lo) / (hi - lo)).eval();
    char name[64];
    std::snprintf(name, sizeof(name), "band_%02zu_%s.pgm", i,
                  stack.labels[i].c_str());
    wamd::write_raster(mapped, out_dir / name, 65535);
    manifest << stack.labels[i] << '\n';
    char mm[128];
    std::snprintf(mm, sizeof(mm), "%s %.17g %.17g\n", stack.labels[i].c_str(),
                  lo, hi);
    sidecar << mm;
  }
  std::printf("wrote %zu bands to %s\n", stack.bands.size(),
              out_dir.string().c_str());
  return 0;
}

int cmd_train(const CommandConfig& cfg) {
  const auto seed = cfg.seed();
  const auto bc = backbone_from(cfg);
  const auto filters = wamd::wavelet_by_name(cfg.required("wavelet"));
  const fs::path out_dir = cfg.required("out");

  auto split = load_split(cfg.required("data"), filters, bc.input_size);
  auto model = wamd::MorphDetector<float>::build(bc, seed);

  wamd::TrainHyper hyper;
  hyper.epochs = static_cast<int>(cfg.integer("epochs"));
  hyper.batch_size = static_cast<int>(cfg.integer("batch"));
  hyper.lr = cfg.real("lr");
  hyper.seed = seed;

  auto result = wamd::train(model, split.train, split.val, hyper);

  fs::create_directories(out_dir);
  wamd::save_checkpoint(out_dir / "model.ckpt", result.best_checkpoint);
  write_training_log(out_dir / "training_log.csv", result.log);
  std::printf("trained %d epochs on %zu samples (val %zu)\n", hyper.epochs,
              split.train.size(), split.val.size());
  std::printf("best val D-EER %s at epoch %d\n",
              fmt_rate(result.best_val_deer).c_str(), result.best_epoch);
  std::printf("checkpoint: %s\n", (out_dir / "model.ckpt").string().c_str());
  return 0;
}

int cmd_eval(const CommandConfig& cfg) {
  const auto bc = backbone_from(cfg);
  const auto filters = wamd::wavelet_by_name(cfg.required("wavelet"));
  const fs::path out_dir = cfg.required("out");
  const fs::path ckpt = cfg.required("checkpoint");

  auto model = wamd::MorphDetector<float>::build(bc, cfg.seed());
  model.load_arrays(wamd::load_checkpoint(ckpt));

  auto split = load_split(cfg.required("data"), filters, bc.input_size);
  if (split.test.empty())
    throw std::runtime_error("eval: test partition is empty");
  const auto scores = wamd::score_samples(
      model, split.test, static_cast<int>(cfg.integer("batch")));

  const auto summary = summarize(scores);
  fs::create_directories(out_dir);
  write_metrics_csv(out_dir / "metrics.csv", summary);
  write_det_csv(out_dir / "det.csv", wamd::det_curve(scores));
  std::printf("test D-EER %s, BPCER5 %s, BPCER10 %s\n",
              fmt_rate(summary.deer).c_str(), fmt_rate(summary.bpcer5).c_str(),
              fmt_rate(summary.bpcer10).c_str());
  return 0;
}

int cmd_attmaps(const CommandConfig& cfg) {
  const auto bc = backbone_from(cfg);
  const auto filters = wamd::wavelet_by_name(cfg.required("wavelet"));
  const fs::path out_dir = cfg.required("out");
  const std::string sample_id = cfg.required("sample");
  const fs::path root = cfg.required("data");

  auto model = wamd::MorphDetector<float>::build(bc, cfg.seed());
  model.load_arrays(wamd::load_checkpoint(cfg.required("checkpoint")));

  std::optional<wamd::LoadedSample> found;
  for (auto& s : wamd::load_dataset(root))
    if (s.id == sample_id) {
      found = std::move(s);
      break;
    }
  if (!found)
    throw std::runtime_error(wamd::msg("sample '", sample_id,
                                       "' not found in ", root.string()));

  auto ts = wamd::subband_sample<float>(
      found->image, found->label == wamd::Label::morph ? 1 : 0, filters);
  auto batch = wamd::Tensor<float>::from(
      {1, bc.input_channels, bc.input_size, bc.input_size},
      std::move(ts.stack));
  const auto result = model.forward(batch);

  fs::create_directories(out_dir);
  for (std::size_t ti = 0; ti < result.taps.size(); ++ti) {
    const auto heat = wamd::export_heatmap(result.maps[ti][0], bc.input_size,
                                           bc.input_size);
    const auto name = sample_id + "." + wamd::to_string(result.taps[ti]) +
                      ".pgm";
    wamd::write_raster(heat, out_dir / name);
    std::printf("wrote %s\n", (out_dir / name).string().c_str());
  }
  return 0;
}

int cmd_ablate(const CommandConfig& cfg) {
  const auto seed = cfg.seed();
  const auto filters = wamd::wavelet_by_name(cfg.required("wavelet"));
  const fs::path out_dir = cfg.required("out");
  auto bc = backbone_from(cfg);

  auto split = load_split(cfg.required("data"), filters, bc.input_size);

  wamd::TrainHyper hyper;
  hyper.epochs = static_cast<int>(cfg.integer("epochs"));
  hyper.batch_size = static_cast<int>(cfg.integer("batch"));
  hyper.lr = cfg.real("lr");
  hyper.seed = seed;

  const std::vector<std::vector<wamd::Tap>> tap_sets{
      {wamd::Tap::L3},
      {wamd::Tap::L2, wamd::Tap::L3},
      {wamd::Tap::L1, wamd::Tap::L2, wamd::Tap::L3}};

  fs::create_directories(out_dir);
  std::ofstream summary_csv(out_dir / "ablation.csv", std::ios::trunc);
  if (!summary_csv)
    throw std::runtime_error(wamd::msg("cannot write ",
                                       (out_dir / "ablation.csv").string()));
  summary_csv << "taps,deer,bpcer5,bpcer10\n";

  for (const auto& taps : tap_sets) {
    bc.active_taps = taps;
    const std::string tag = taps_to_string(taps);
    auto model = wamd::MorphDetector<float>::build(bc, seed);
    auto result = wamd::train(model, split.train, split.val, hyper);
    model.load_arrays(result.best_checkpoint);
    const auto scores = wamd::score_samples(model, split.test,
                                            hyper.batch_size);
    const auto summary = summarize(scores);

    std::string run_tag = tag;
    for (auto& c : run_tag)
      if (c == '+') c = '_';
    const fs::path run_dir = out_dir / ("ablate_" + run_tag);
    fs::create_directories(run_dir);
    wamd::save_checkpoint(run_dir / "model.ckpt", result.best_checkpoint);
    write_training_log(run_dir / "training_log.csv", result.log);
    write_metrics_csv(run_dir / "metrics.csv", summary);

    summary_csv << tag << ',' << fmt_rate(summary.deer) << ','
                << fmt_rate(summary.bpcer5) << ','
                << fmt_rate(summary.bpcer10) << '\n';
    std::printf("%s: D-EER %s\n", tag.c_str(), fmt_rate(summary.deer).c_str());
  }
  std::printf("summary: %s\n", (out_dir / "ablation.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavelet-attention morph detector"};
  app.require_subcommand(1);

  auto* generate = app.add_subcommand(
      "generate", "render a synthetic morph dataset onto disk");
  CommandConfig gen_cfg(generate);
  gen_cfg.add("seed", "run seed (mandatory)");
  gen_cfg.add("out", "dataset root directory");
  gen_cfg.add("subjects", "number of synthetic subjects");
  gen_cfg.add("size", "square image size, multiple of 8");
  gen_cfg.add("alpha", "morph blend factor");
  gen_cfg.add("morph-rounds", "ring pairings per partition");
  gen_cfg.add_flag("verify", "re-check partition disjointness after writing");

  auto* decompose = app.add_subcommand(
      "decompose", "write the 48 wavelet sub-bands of one image");
  CommandConfig dec_cfg(decompose);
  dec_cfg.add("seed", "run seed (mandatory)");
  dec_cfg.add("out", "output directory");
  dec_cfg.add("image", "input PGM/PPM image");
  dec_cfg.add("wavelet", "haar or db2");

  auto* train = app.add_subcommand("train", "train the detector");
  CommandConfig train_cfg(train);
  for (const char* key : {"seed", "out", "data", "size", "wavelet", "widths",
                          "blocks", "dim", "taps", "epochs", "batch", "lr"})
    train_cfg.add(key, "");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test "
                                          "partition");
  CommandConfig eval_cfg(eval);
  for (const char* key : {"seed", "out", "data", "size", "wavelet", "widths",
                          "blocks", "dim", "taps", "batch", "checkpoint"})
    eval_cfg.add(key, "");

  auto* attmaps = app.add_subcommand(
      "attmaps", "export per-tap attention heatmaps for one sample");
  CommandConfig att_cfg(attmaps);
  for (const char* key : {"seed", "out", "data", "size", "wavelet", "widths",
                          "blocks", "dim", "taps", "checkpoint", "sample"})
    att_cfg.add(key, "");

  auto* ablate = app.add_subcommand(
      "ablate", "train and evaluate the three tap ablations");
  CommandConfig abl_cfg(ablate);
  for (const char* key : {"seed", "out", "data", "size", "wavelet", "widths",
                          "blocks", "dim", "taps", "epochs", "batch", "lr"})
    abl_cfg.add(key, "");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      gen_cfg.resolve();
      return cmd_generate(gen_cfg);
    }
    if (decompose->parsed()) {
      dec_cfg.resolve();
      return cmd_decompose(dec_cfg);
    }
    if (train->parsed()) {
      train_cfg.resolve();
      return cmd_train(train_cfg);
    }
    if (eval->parsed()) {
      eval_cfg.resolve();
      return cmd_eval(eval_cfg);
    }
    if (attmaps->parsed()) {
      att_cfg.resolve();
      return cmd_attmaps(att_cfg);
    }
    if (ablate->parsed()) {
      abl_cfg.resolve();
      return cmd_ablate(abl_cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
