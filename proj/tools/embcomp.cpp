// embcomp: generate a synthetic stream, train, compress, retrain, evaluate and report.
//
// Every option lives on the top-level app and subcommands fall through to it, so a
// config file is a flat list of `key=value` lines whose keys are the long flag names.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "embcomp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace embcomp;
using Real = PipelineReal;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2 };

int fail(const char* kind, const std::string& msg, int code) {
  std::string one_line = msg;
  for (auto& c : one_line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "embcomp: error[%s]: %s\n", kind, one_line.c_str());
  return code;
}

struct Options {
  StreamConfig stream;
  PipelineConfig pipeline;
  std::uint64_t seed = 7;
  std::uint32_t segments = 24;
  std::string init = "kmeanspp";
  std::string frequency_mode = "per-segment";
  std::string centroid_accumulators = "member-sum";
  unsigned threads = 1;
  std::string out = "out";
  std::string data = "data";
  std::string checkpoint;
  std::uint32_t segment = 0;
  bool segments_given = false;
  std::vector<std::string> runs;
};

PipelineConfig resolve_pipeline(const Options& o) {
  PipelineConfig c = o.pipeline;
  c.seed = o.seed;
  auto init = parse_init_method(o.init);
  if (!init) throw ConfigError("unknown init method '" + o.init + "'");
  c.compression.cluster_config.init_method = *init;
  c.compression.cluster_config.threads = o.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : o.threads;
  if (o.frequency_mode == "per-segment")
    c.frequency_mode = FrequencyMode::PerSegment;
  else if (o.frequency_mode == "cumulative")
    c.frequency_mode = FrequencyMode::Cumulative;
  else
    throw ConfigError("unknown frequency mode '" + o.frequency_mode + "'");
  if (o.centroid_accumulators == "member-sum")
    c.centroid_accumulators = CentroidAccumulatorInit::MemberSum;
  else if (o.centroid_accumulators == "fresh")
    c.centroid_accumulators = CentroidAccumulatorInit::Fresh;
  else
    throw ConfigError("unknown centroid accumulator mode '" + o.centroid_accumulators + "'");
  if (o.segments_given) c.max_segments = o.segments;
  c.validate();
  return c;
}

const ManifestSegment& find_segment(const Manifest& m, std::uint32_t id) {
  for (const auto& s : m.segments)
    if (s.segment_id == id) return s;
  throw Error("segment " + std::to_string(id) + " not listed in manifest");
}

void append_metrics(const fs::path& out, const MetricsRow& row) {
  const auto path = out / "metrics.log";
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  if (fresh) os << kMetricsHeader << '\n';
  write_metrics_row(os, row);
}

void print_row(const MetricsRow& r) {
  std::printf("segment=%u phase=%s log_loss=%.6f auc=%.6f wall_ms=%.1f\n", r.segment_id,
              std::string(to_string(r.phase)).c_str(), r.log_loss, r.auc, r.wall_ms);
}

int cmd_gen(const Options& o) {
  StreamConfig c = o.stream;
  c.seed = o.seed;
  c.segments = o.segments;
  c.validate();
  const auto m = write_stream(c, o.out);
  std::printf("wrote %zu segments and manifest.txt to %s\n", m.segments.size(), o.out.c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  const auto c = resolve_pipeline(o);
  const auto manifest = load_manifest(o.data);
  const auto seg = load_segment(o.data, find_segment(manifest, o.segment));
  auto p = o.checkpoint.empty() ? initial_predictor(manifest, c)
                                : load_checkpoint<Real, EmbeddingModel<Real>>(o.checkpoint);
  prepare_for_segment(p, seg, c);
  const auto ts = train_epoch(p, train_slice(seg, manifest.heldout_fraction), train_options(c, seg.segment_id),
                              heldout_slice(seg, manifest.heldout_fraction));
  fs::create_directories(o.out);
  save_checkpoint((fs::path(o.out) / "baseline.ckpt").string(), p);
  const MetricsRow row{seg.segment_id, Phase::Train, ts.heldout_log_loss, ts.auc, c.record_timing ? ts.wall_ms : 0.0};
  append_metrics(o.out, row);
  print_row(row);
  return kOk;
}

int cmd_compress(const Options& o) {
  const auto c = resolve_pipeline(o);
  if (o.checkpoint.empty()) throw ConfigError("compress needs --checkpoint <baseline.ckpt>");
  const auto baseline = load_checkpoint<Real, EmbeddingModel<Real>>(o.checkpoint);
  auto mc = compress_model(baseline.embeddings, compression_for(c));
  const auto cp = make_compressed_predictor(baseline, std::move(mc.model), c.centroid_accumulators);
  if (!c.record_timing)
    for (auto& f : mc.report.fields) f.wall_ms = 0;
  const fs::path out(o.out);
  fs::create_directories(out);
  save_checkpoint((out / "compressed.ckpt").string(), cp);
  std::ofstream txt(out / "report.txt");
  write_report_table(txt, mc.report);
  std::ofstream kv(out / "report.kv");
  write_report_records(kv, mc.report);
  write_report_table(std::cout, mc.report);
  return kOk;
}

int cmd_retrain(const Options& o) {
  const auto c = resolve_pipeline(o);
  if (o.checkpoint.empty()) throw ConfigError("retrain needs --checkpoint <compressed.ckpt>");
  auto cp = load_checkpoint<Real, CompressedModel<Real>>(o.checkpoint);
  const auto manifest = load_manifest(o.data);
  const auto seg = load_segment(o.data, find_segment(manifest, o.segment));
  const auto rs = retrain_epoch(cp, train_slice(seg, manifest.heldout_fraction), train_options(c, seg.segment_id),
                                heldout_slice(seg, manifest.heldout_fraction));
  fs::create_directories(o.out);
  save_checkpoint((fs::path(o.out) / "compressed.ckpt").string(), cp);
  const MetricsRow row{seg.segment_id, Phase::Retrain, rs.heldout_log_loss, rs.auc, c.record_timing ? rs.wall_ms : 0.0};
  append_metrics(o.out, row);
  print_row(row);
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint <file>");
  // Uncompressed fields load as passthrough, so one type covers both checkpoints.
  const auto p = load_checkpoint<Real, CompressedModel<Real>>(o.checkpoint);
  const auto manifest = load_manifest(o.data);
  const auto seg = load_segment(o.data, find_segment(manifest, o.segment));
  const auto e = evaluate(p, heldout_slice(seg, manifest.heldout_fraction));
  std::printf("segment=%u auc=%.6f log_loss=%.6f memory_bytes=%llu\n", seg.segment_id, e.auc, e.log_loss,
              static_cast<unsigned long long>(memory_footprint(p.embeddings)));
  return kOk;
}

int cmd_pipeline(const Options& o) {
  const auto c = resolve_pipeline(o);
  const auto result = run_pipeline_to_dir(o.data, o.out, c);
  for (const auto& s : result.segments) {
    std::printf("segment=%u auc_before=%.6f", s.before.segment_id, s.before.auc);
    if (s.after) std::printf(" auc_after=%.6f", s.after->auc);
    if (s.report) std::printf(" vectors=%llu->%llu ratio=%.2f", static_cast<unsigned long long>(s.report->vectors_before),
                              static_cast<unsigned long long>(s.report->vectors_after), s.report->ratio);
    std::printf("\n");
  }
  return kOk;
}

int cmd_report(const Options& o) {
  std::vector<RunSummary> runs;
  for (const auto& dir : o.runs) {
    auto run = load_run(dir);
    if (run.rows.empty()) return fail("runtime", "no data in metrics log of run '" + dir + "'", kRuntime);
    runs.push_back(std::move(run));
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i) std::cout << '\n';
    render_run_table(std::cout, runs[i]);
  }
  if (runs.size() > 1) {
    std::cout << '\n';
    render_ablation(std::cout, runs);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedding table compression by per-field clustering and retraining"};
  app.set_config("--config", "", "key=value file; keys are the long option names");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  Options o;
  auto& st = o.stream;
  auto& pc = o.pipeline;
  auto& cc = pc.compression;

  app.add_option("--seed", o.seed, "Seed for generation, initialization, shuffling and clustering");
  app.add_option("--k", cc.k, "Centroids per compressed field")->check(CLI::PositiveNumber);
  app.add_option("--init", o.init, "Centroid initialization")->check(CLI::IsMember({"random", "kmeanspp", "topk"}));
  app.add_flag("--fast,!--no-fast", cc.fast_enabled, "Cluster only the most frequent features");
  app.add_option("--fast-multiplier", cc.fast_multiplier, "Clustered head size is this times k")->check(CLI::PositiveNumber);
  app.add_option("--eligibility-multiplier", cc.eligibility_multiplier, "Compress fields with n >= this times k")
      ->check(CLI::PositiveNumber);
  app.add_option("--max-iters", cc.cluster_config.max_iters)->check(CLI::PositiveNumber);
  app.add_option("--tolerance", cc.cluster_config.rel_tolerance, "Relative objective improvement stop");
  auto* seg_opt = app.add_option("--segments", o.segments, "Segments to generate, or to process in a pipeline");
  app.add_option("--threads", o.threads, "Worker threads for clustering (0 = all cores)");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--data", o.data, "Stream directory written by gen");
  app.add_option("--segment", o.segment, "Segment id for train/retrain/eval");
  app.add_option("--checkpoint", o.checkpoint, "Input checkpoint");

  app.add_option("--learning-rate", pc.learning_rate);
  app.add_option("--batch-size", pc.retrain_batch_size, "Retraining minibatch size");
  app.add_option("--embedding-init-scale", pc.embedding_init_scale);
  app.add_option("--dense-init-scale", pc.dense_init_scale);
  app.add_flag("--compress,!--no-compress", pc.compress, "Compress and retrain after training");
  app.add_option("--compress-every", pc.compress_every, "Compress every N-th segment");
  app.add_option("--frequency-mode", o.frequency_mode)->check(CLI::IsMember({"per-segment", "cumulative"}));
  app.add_option("--centroid-accumulators", o.centroid_accumulators)->check(CLI::IsMember({"member-sum", "fresh"}));
  app.add_flag("--record-timing,!--no-record-timing", pc.record_timing, "Log wall times (off: byte-stable logs)");

  app.add_option("--num-fields", st.num_fields);
  app.add_option("--min-field-size", st.min_field_size);
  app.add_option("--max-field-size", st.max_field_size);
  app.add_option("--size-skew", st.size_skew);
  app.add_option("--zipf-exponent", st.zipf_exponent);
  app.add_option("--samples-per-segment", st.samples_per_segment);
  app.add_option("--new-feature-rate", st.new_feature_rate);
  app.add_option("--field-presence", st.field_presence);
  app.add_option("--label-noise", st.label_noise);
  app.add_option("--heldout-fraction", st.heldout_fraction);

  auto* gen = app.add_subcommand("gen", "Write a synthetic segment stream and manifest to --out");
  auto* train = app.add_subcommand("train", "One training epoch of the uncompressed model on --segment");
  auto* compress = app.add_subcommand("compress", "Compress a baseline checkpoint");
  auto* retrain = app.add_subcommand("retrain", "One retraining epoch of a compressed checkpoint on --segment");
  auto* eval = app.add_subcommand("eval", "Held-out AUC and log loss of a checkpoint on --segment");
  auto* pipeline = app.add_subcommand("pipeline", "Train, compress and retrain over every segment");
  auto* report = app.add_subcommand("report", "Render Before/After tables for one or more pipeline runs");
  report->add_option("runs", o.runs, "Pipeline output directories")->required();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what(), kConfig);
  }
  o.segments_given = seg_opt->count() > 0;

  try {
    if (*gen) return cmd_gen(o);
    if (*train) return cmd_train(o);
    if (*compress) return cmd_compress(o);
    if (*retrain) return cmd_retrain(o);
    if (*eval) return cmd_eval(o);
    if (*pipeline) return cmd_pipeline(o);
    if (*report) return cmd_report(o);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const FormatError& e) {
    return fail("format", e.what(), kRuntime);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), kRuntime);
  }
  return kOk;
}
