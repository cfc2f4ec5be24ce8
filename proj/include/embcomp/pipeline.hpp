#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "embcomp/compression.hpp"
#include "embcomp/datagen.hpp"
#include "embcomp/trainer.hpp"

namespace embcomp {

using PipelineReal = double;

enum class FrequencyMode { PerSegment, Cumulative };

/// Settings for the train -> compress -> retrain loop.
struct PipelineConfig {
  CompressionConfig compression{};
  double learning_rate = 0.05;
  std::size_t retrain_batch_size = 256;
  double embedding_init_scale = 0.05;
  double dense_init_scale = 0.3;
  std::uint64_t seed = 7;
  bool compress = true;
  std::uint32_t compress_every = 1;
  FrequencyMode frequency_mode = FrequencyMode::PerSegment;
  CentroidAccumulatorInit centroid_accumulators = CentroidAccumulatorInit::MemberSum;
  /// When false wall_ms is logged as 0 so metric logs are byte-comparable.
  bool record_timing = true;
  /// Stop after this many segments (0 = all in the manifest).
  std::uint32_t max_segments = 0;

  void validate() const {
    compression.validate();
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (retrain_batch_size < 1) throw ConfigError("retrain_batch_size must be >= 1");
    if (!(embedding_init_scale >= 0) || !(dense_init_scale >= 0)) throw ConfigError("init scales must be >= 0");
    if (compress_every < 1) throw ConfigError("compress_every must be >= 1");
  }
};

enum class Phase { Train, Retrain };

inline std::string_view to_string(Phase p) { return p == Phase::Train ? "train" : "retrain"; }

/// One line of the metrics log. log_loss and auc are measured on the held-out slice.
struct MetricsRow {
  std::uint32_t segment_id = 0;
  Phase phase = Phase::Train;
  double log_loss = 0;
  double auc = 0;
  double wall_ms = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader = "segment_id\tphase\tlog_loss\tauc\twall_ms";

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%u\t%s\t%.9f\t%.9f\t%.3f\n", r.segment_id, std::string(to_string(r.phase)).c_str(),
                r.log_loss, r.auc, r.wall_ms);
  os << buf;
}

inline std::vector<MetricsRow> read_metrics_log(std::istream& is) {
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == kMetricsHeader) continue;
    std::istringstream ls(line);
    MetricsRow r;
    std::string phase;
    if (!(ls >> r.segment_id >> phase >> r.log_loss >> r.auc >> r.wall_ms))
      throw FormatError("metrics log line " + std::to_string(lineno) + " is malformed");
    if (phase == "train")
      r.phase = Phase::Train;
    else if (phase == "retrain")
      r.phase = Phase::Retrain;
    else
      throw FormatError("metrics log line " + std::to_string(lineno) + ": unknown phase '" + phase + "'");
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<MetricsRow> load_metrics_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open metrics log '" + path.string() + "'");
  return read_metrics_log(is);
}

// ---------------------------------------------------------------------------
// Pipeline state

inline BaselinePredictor<PipelineReal> initial_predictor(const Manifest& m, const PipelineConfig& c) {
  EmbeddingModel<PipelineReal> model;
  for (const auto& f : m.fields) model.add(Field<PipelineReal>(f.id, Matrix<PipelineReal>(0, f.vector_len)));
  return make_predictor(std::move(model), c.learning_rate, c.seed, c.dense_init_scale);
}

/// Grows every field to the segment's vocabulary; optionally clears per-segment counts.
inline void prepare_for_segment(BaselinePredictor<PipelineReal>& p, const Segment& seg, const PipelineConfig& c) {
  std::size_t i = 0;
  for (auto& [id, field] : p.embeddings.fields) {
    if (i >= seg.vocabulary.size()) throw FormatError("segment vocabulary lists fewer fields than the model");
    grow_field(p, id, seg.vocabulary[i++], c.seed, c.embedding_init_scale);
    if (c.frequency_mode == FrequencyMode::PerSegment) std::fill(field.frequencies.begin(), field.frequencies.end(), 0);
  }
}

inline TrainOptions train_options(const PipelineConfig& c, std::uint32_t segment_id) {
  TrainOptions o;
  o.batch_size = c.retrain_batch_size;
  o.shuffle = true;
  o.shuffle_seed = derive_seed(c.seed, 0x5348, segment_id);
  return o;
}

inline CompressionConfig compression_for(const PipelineConfig& c) {
  CompressionConfig cc = c.compression;
  cc.cluster_config.seed = derive_seed(c.seed, 0x434C, cc.cluster_config.seed);
  return cc;
}

struct SegmentOutcome {
  MetricsRow before;
  std::optional<MetricsRow> after;
  std::optional<CompressionReport> report;
};

struct PipelineResult {
  std::vector<SegmentOutcome> segments;
  BaselinePredictor<PipelineReal> baseline;
  std::optional<CompressedPredictor<PipelineReal>> compressed;
};

struct PipelineObserver {
  virtual ~PipelineObserver() = default;
  virtual void on_segment(const SegmentOutcome&) {}
};

/// Per segment: one train epoch on the uncompressed model, then (when scheduled)
/// compress it and retrain the compressed copy on the same samples. The baseline
/// keeps training uncompressed across segments.
inline PipelineResult run_pipeline(const std::filesystem::path& data_dir, const PipelineConfig& config,
                                   PipelineObserver* observer = nullptr) {
  config.validate();
  const auto manifest = load_manifest(data_dir);
  PipelineResult result;
  result.baseline = initial_predictor(manifest, config);

  std::size_t count = manifest.segments.size();
  if (config.max_segments > 0) count = std::min<std::size_t>(count, config.max_segments);
  for (std::size_t i = 0; i < count; ++i) {
    const auto seg = load_segment(data_dir, manifest.segments[i]);
    prepare_for_segment(result.baseline, seg, config);
    const auto train = train_slice(seg, manifest.heldout_fraction);
    const auto held = heldout_slice(seg, manifest.heldout_fraction);
    const auto opts = train_options(config, seg.segment_id);

    SegmentOutcome out;
    const auto ts = train_epoch(result.baseline, train, opts, held);
    out.before = MetricsRow{seg.segment_id, Phase::Train, ts.heldout_log_loss, ts.auc,
                            config.record_timing ? ts.wall_ms : 0.0};

    const bool scheduled = (i + 1) % config.compress_every == 0 || i + 1 == count;
    if (config.compress && scheduled) {
      auto mc = compress_model(result.baseline.embeddings, compression_for(config));
      auto cp = make_compressed_predictor(result.baseline, std::move(mc.model), config.centroid_accumulators);
      const auto rs = retrain_epoch(cp, train, opts, held);
      out.after = MetricsRow{seg.segment_id, Phase::Retrain, rs.heldout_log_loss, rs.auc,
                             config.record_timing ? rs.wall_ms : 0.0};
      if (!config.record_timing)
        for (auto& f : mc.report.fields) f.wall_ms = 0;
      out.report = std::move(mc.report);
      result.compressed = std::move(cp);
    }
    if (observer) observer->on_segment(out);
    result.segments.push_back(std::move(out));
  }
  return result;
}

inline std::string report_stem(std::uint32_t segment_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "segment_%04u", segment_id);
  return buf;
}

/// Streams metrics rows and compression reports into an output directory:
///   metrics.log, reports/segment_NNNN.{txt,kv}
class DirectoryWriter : public PipelineObserver {
 public:
  explicit DirectoryWriter(std::filesystem::path out) : out_(std::move(out)) {
    std::filesystem::create_directories(out_ / "reports");
    log_.open(out_ / "metrics.log", std::ios::trunc);
    if (!log_) throw Error("cannot write metrics log in '" + out_.string() + "'");
    log_ << kMetricsHeader << '\n';
  }

  void on_segment(const SegmentOutcome& s) override {
    write_metrics_row(log_, s.before);
    if (s.after) write_metrics_row(log_, *s.after);
    log_.flush();
    if (s.report) {
      const auto stem = report_stem(s.before.segment_id);
      std::ofstream txt(out_ / "reports" / (stem + ".txt"));
      write_report_table(txt, *s.report);
      std::ofstream kv(out_ / "reports" / (stem + ".kv"));
      write_report_records(kv, *s.report);
    }
  }

 private:
  std::filesystem::path out_;
  std::ofstream log_;
};

/// Runs the pipeline and writes metrics, reports and final checkpoints under `out_dir`.
inline PipelineResult run_pipeline_to_dir(const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                                          const PipelineConfig& config) {
  DirectoryWriter writer(out_dir);
  auto result = run_pipeline(data_dir, config, &writer);
  std::filesystem::create_directories(out_dir / "checkpoints");
  save_checkpoint((out_dir / "checkpoints" / "baseline.ckpt").string(), result.baseline);
  if (result.compressed) save_checkpoint((out_dir / "checkpoints" / "compressed.ckpt").string(), *result.compressed);
  return result;
}

// ---------------------------------------------------------------------------
// Report rendering

struct RunSummary {
  std::string name;
  std::vector<MetricsRow> rows;
  std::map<std::uint32_t, CompressionReport> reports;
};

inline RunSummary load_run(const std::filesystem::path& dir) {
  RunSummary r;
  r.name = dir.filename().string();
  if (r.name.empty()) r.name = dir.parent_path().filename().string();
  r.rows = load_metrics_log(dir / "metrics.log");
  const auto reports = dir / "reports";
  if (std::filesystem::exists(reports)) {
    for (const auto& e : std::filesystem::directory_iterator(reports)) {
      if (e.path().extension() != ".kv") continue;
      const auto stem = e.path().stem().string();
      if (stem.rfind("segment_", 0) != 0) continue;
      std::ifstream is(e.path());
      r.reports[static_cast<std::uint32_t>(std::stoul(stem.substr(8)))] = read_report_records(is);
    }
  }
  return r;
}

/// Per-segment Before/After table for one run.
inline void render_run_table(std::ostream& os, const RunSummary& run) {
  std::map<std::uint32_t, std::pair<std::optional<MetricsRow>, std::optional<MetricsRow>>> by_segment;
  for (const auto& r : run.rows) (r.phase == Phase::Train ? by_segment[r.segment_id].first : by_segment[r.segment_id].second) = r;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %16s %16s %12s %12s %16s %16s %8s\n", "segment", "vectors_before",
                "vectors_after", "auc_before", "auc_after", "logloss_before", "logloss_after", "ratio");
  os << "run: " << run.name << '\n' << line;
  auto num = [](std::optional<double> v, const char* f) {
    char b[32];
    if (!v) return std::string("-");
    std::snprintf(b, sizeof b, f, *v);
    return std::string(b);
  };
  for (const auto& [seg, pair] : by_segment) {
    const auto& [before, after] = pair;
    const auto rep = run.reports.find(seg);
    const bool has_rep = rep != run.reports.end();
    std::snprintf(line, sizeof line, "%-8u %16s %16s %12s %12s %16s %16s %8s\n", seg,
                  has_rep ? std::to_string(rep->second.vectors_before).c_str() : "-",
                  has_rep ? std::to_string(rep->second.vectors_after).c_str() : "-",
                  num(before ? std::optional(before->auc) : std::nullopt, "%.6f").c_str(),
                  num(after ? std::optional(after->auc) : std::nullopt, "%.6f").c_str(),
                  num(before ? std::optional(before->log_loss) : std::nullopt, "%.6f").c_str(),
                  num(after ? std::optional(after->log_loss) : std::nullopt, "%.6f").c_str(),
                  num(has_rep ? std::optional(rep->second.ratio) : std::nullopt, "%.2f").c_str());
    os << line;
  }
}

inline double total_clustering_ms(const RunSummary& run) {
  double t = 0;
  for (const auto& [_, r] : run.reports) t += r.clustering_wall_ms();
  return t;
}

/// Side-by-side summary of several runs; time_ratio is clustering time relative to the first run.
inline void render_ablation(std::ostream& os, const std::vector<RunSummary>& runs) {
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %8s %14s %14s %16s %14s %10s\n", "run", "segments", "mean_auc_after",
                "final_auc_after", "final_logloss", "clustering_ms", "time_ratio");
  os << line;
  const double base_ms = runs.empty() ? 0 : total_clustering_ms(runs.front());
  for (const auto& run : runs) {
    double auc_sum = 0;
    std::size_t n_after = 0;
    std::optional<MetricsRow> last_after;
    std::set<std::uint32_t> segs;
    for (const auto& r : run.rows) {
      segs.insert(r.segment_id);
      if (r.phase == Phase::Retrain) {
        auc_sum += r.auc;
        ++n_after;
        last_after = r;
      }
    }
    const double ms = total_clustering_ms(run);
    char ratio[32] = "-";
    if (base_ms > 0) std::snprintf(ratio, sizeof ratio, "%.3f", ms / base_ms);
    std::snprintf(line, sizeof line, "%-24s %8zu %14s %14s %16s %14.1f %10s\n", run.name.c_str(), segs.size(),
                  n_after ? std::to_string(auc_sum / n_after).c_str() : "-",
                  last_after ? std::to_string(last_after->auc).c_str() : "-",
                  last_after ? std::to_string(last_after->log_loss).c_str() : "-", ms, ratio);
    os << line;
  }
}

}  // namespace embcomp
