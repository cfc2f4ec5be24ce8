#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "embcomp/clustering.hpp"
#include "embcomp/model.hpp"

namespace embcomp {

struct CompressionConfig {
  std::size_t k = 100;
  std::size_t eligibility_multiplier = 100;
  std::size_t fast_multiplier = 100;
  bool fast_enabled = true;
  /// k and seed here are overridden per field: k from above, seed = seed ^ field id.
  ClusterConfig cluster_config{};

  std::size_t eligibility_threshold() const { return eligibility_multiplier * k; }
  std::size_t fast_cutoff() const { return fast_multiplier * k; }

  void validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (eligibility_multiplier < 1) throw ConfigError("eligibility_multiplier must be >= 1");
    if (fast_multiplier < 1) throw ConfigError("fast_multiplier must be >= 1");
    cluster_config.validate();
  }
};

/// One row of a compression report. Passthrough fields have k_after == n_before.
struct FieldReport {
  FieldId field_id;
  std::uint64_t n_before = 0;
  std::uint32_t vector_len = 0;
  bool compressed = false;
  std::uint64_t k_after = 0;
  std::uint64_t clustered_count = 0;
  /// Sum of squared distances of every feature to its representative (0 for passthrough).
  double objective = 0.0;
  double wall_ms = 0.0;
  std::uint32_t mask_bytes = 1;

  friend bool operator==(const FieldReport&, const FieldReport&) = default;
};

struct CompressionReport {
  std::vector<FieldReport> fields;
  std::uint64_t vectors_before = 0;
  std::uint64_t vectors_after = 0;
  double bytes_before = 0;
  double bytes_after = 0;
  double ratio = 1.0;
  std::uint32_t bytes_per_component = 4;

  /// Recomputes totals from the per-field entries.
  void finalize() {
    vectors_before = vectors_after = 0;
    bytes_before = bytes_after = 0;
    for (const auto& f : fields) {
      vectors_before += f.n_before;
      bytes_before += uncompressed_field_bytes(static_cast<double>(f.n_before), f.vector_len,
                                               bytes_per_component);
      if (f.compressed) {
        vectors_after += f.k_after;
        bytes_after += compressed_field_bytes(static_cast<double>(f.n_before),
                                              static_cast<double>(f.k_after), f.vector_len,
                                              bytes_per_component, f.mask_bytes);
      } else {
        vectors_after += f.n_before;
        bytes_after += uncompressed_field_bytes(static_cast<double>(f.n_before), f.vector_len,
                                                bytes_per_component);
      }
    }
    ratio = bytes_after > 0 ? bytes_before / bytes_after : 1.0;
  }

  double clustering_wall_ms() const {
    double t = 0;
    for (const auto& f : fields) t += f.wall_ms;
    return t;
  }

  friend bool operator==(const CompressionReport&, const CompressionReport&) = default;
};

inline double compression_ratio(const CompressionReport& report) {
  if (!(report.bytes_after > 0)) throw InvalidInputError("compression_ratio: empty report");
  return report.bytes_before / report.bytes_after;
}

template <std::floating_point Real>
std::set<FieldId> select_eligible_fields(const EmbeddingModel<Real>& model,
                                         const CompressionConfig& config) {
  std::set<FieldId> out;
  for (const auto& [id, f] : model.fields)
    if (f.size() >= config.eligibility_threshold()) out.insert(id);
  return out;
}

template <std::floating_point Real>
struct FieldCompression {
  CompressedField<Real> compressed;
  FieldReport report;
  /// Feature ids that went through k-means, ascending.
  std::vector<std::size_t> clustered_features;
  ClusteringResult<Real> clustering;
};

/// Clusters one field. With fast clustering only the fast_multiplier*k most
/// frequent features are clustered; the rest get their nearest centroid.
template <std::floating_point Real>
FieldCompression<Real> compress_field(const Field<Real>& field, const CompressionConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = field.size();

  ClusterConfig cc = config.cluster_config;
  cc.k = config.k;
  cc.seed = config.cluster_config.seed ^ field.id.value;

  FieldCompression<Real> out;
  std::vector<std::uint32_t> masks(n);

  if (config.fast_enabled && config.fast_cutoff() < n) {
    auto head = top_frequent(field.frequencies, config.fast_cutoff());
    std::sort(head.begin(), head.end());
    Matrix<Real> head_rows(0, field.vector_len());
    std::vector<std::uint64_t> head_freq;
    head_freq.reserve(head.size());
    for (auto f : head) {
      head_rows.push_row(field.vectors.row(f));
      head_freq.push_back(field.frequencies[f]);
    }
    out.clustering = kmeans(head_rows, std::span<const std::uint64_t>(head_freq), cc);

    std::vector<char> in_head(n, 0);
    for (std::size_t i = 0; i < head.size(); ++i) {
      in_head[head[i]] = 1;
      masks[head[i]] = out.clustering.assignments[i];
    }
    std::vector<std::size_t> tail;
    tail.reserve(n - head.size());
    Matrix<Real> tail_rows(0, field.vector_len());
    for (std::size_t f = 0; f < n; ++f) {
      if (in_head[f]) continue;
      tail.push_back(f);
      tail_rows.push_row(field.vectors.row(f));
    }
    const auto tail_masks = assign_nearest(tail_rows, out.clustering.centroids, cc.threads);
    for (std::size_t i = 0; i < tail.size(); ++i) masks[tail[i]] = tail_masks[i];
    out.clustered_features = std::move(head);
  } else {
    out.clustering = kmeans(field.vectors, std::span<const std::uint64_t>(field.frequencies), cc);
    masks = out.clustering.assignments;
    out.clustered_features.resize(n);
    std::iota(out.clustered_features.begin(), out.clustered_features.end(), std::size_t{0});
  }

  out.compressed.codebook = Codebook<Real>{field.id, out.clustering.centroids};
  out.compressed.masks = MaskTable{field.id, std::move(masks)};

  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  out.report = FieldReport{
      .field_id = field.id,
      .n_before = n,
      .vector_len = static_cast<std::uint32_t>(field.vector_len()),
      .compressed = true,
      .k_after = config.k,
      .clustered_count = out.clustered_features.size(),
      .objective = objective(field.vectors, out.compressed.codebook.centroids,
                             std::span<const std::uint32_t>(out.compressed.masks.masks)),
      .wall_ms = wall_ms,
      .mask_bytes = mask_width_bytes(config.k),
  };
  return out;
}

template <std::floating_point Real>
struct ModelCompression {
  CompressedModel<Real> model;
  CompressionReport report;
};

/// Compresses eligible fields in field-id order; copies the rest verbatim.
template <std::floating_point Real>
ModelCompression<Real> compress_model(const EmbeddingModel<Real>& model, const CompressionConfig& config) {
  config.validate();
  const auto eligible = select_eligible_fields(model, config);
  ModelCompression<Real> out;
  for (const auto& [id, field] : model.fields) {
    if (eligible.contains(id)) {
      auto fc = compress_field(field, config);
      out.model.compressed_fields.emplace(id, std::move(fc.compressed));
      out.report.fields.push_back(fc.report);
    } else {
      out.model.passthrough_fields.emplace(id, field);
      out.report.fields.push_back(FieldReport{
          .field_id = id,
          .n_before = field.size(),
          .vector_len = static_cast<std::uint32_t>(field.vector_len()),
          .compressed = false,
          .k_after = field.size(),
          .clustered_count = 0,
          .objective = 0.0,
          .wall_ms = 0.0,
          .mask_bytes = 0,
      });
    }
  }
  out.report.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace detail {
inline std::string fmt_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}
}  // namespace detail

/// Fixed-width table with columns field_id, n_before, k_after, clustered_count, objective, wall_ms.
inline void write_report_table(std::ostream& os, const CompressionReport& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %12s %12s %16s %18s %10s\n", "field_id", "n_before",
                "k_after", "clustered_count", "objective", "wall_ms");
  os << line;
  for (const auto& f : r.fields) {
    const std::string k = f.compressed ? std::to_string(f.k_after) : std::string("passthrough");
    std::snprintf(line, sizeof line, "%-9u %12llu %12s %16llu %18.6f %10.2f\n", f.field_id.value,
                  static_cast<unsigned long long>(f.n_before), k.c_str(),
                  static_cast<unsigned long long>(f.clustered_count), f.objective, f.wall_ms);
    os << line;
  }
  std::snprintf(line, sizeof line,
                "# vectors_before=%llu vectors_after=%llu bytes_before=%.0f bytes_after=%.0f ratio=%.4f\n",
                static_cast<unsigned long long>(r.vectors_before),
                static_cast<unsigned long long>(r.vectors_after), r.bytes_before, r.bytes_after, r.ratio);
  os << line;
}

/// One `key=value` record per field plus a totals record.
inline void write_report_records(std::ostream& os, const CompressionReport& r) {
  for (const auto& f : r.fields) {
    os << "record=field field_id=" << f.field_id.value << " n_before=" << f.n_before
       << " k_after=" << (f.compressed ? std::to_string(f.k_after) : std::string("passthrough"))
       << " clustered_count=" << f.clustered_count << " objective=" << detail::fmt_double(f.objective)
       << " wall_ms=" << detail::fmt_double(f.wall_ms) << " vector_len=" << f.vector_len
       << " mask_bytes=" << f.mask_bytes << '\n';
  }
  os << "record=totals vectors_before=" << r.vectors_before << " vectors_after=" << r.vectors_after
     << " bytes_before=" << detail::fmt_double(r.bytes_before)
     << " bytes_after=" << detail::fmt_double(r.bytes_after) << " ratio=" << detail::fmt_double(r.ratio)
     << " bytes_per_component=" << r.bytes_per_component << '\n';
}

inline std::map<std::string, std::string> parse_record(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("malformed record token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

/// Parses write_report_records output. Totals are taken verbatim from the file;
/// call finalize() on a copy to recompute them from the field entries.
inline CompressionReport read_report_records(std::istream& is) {
  CompressionReport r;
  std::string line;
  bool saw_totals = false;
  auto get = [](const std::map<std::string, std::string>& kv, const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("report record missing key '") + key + "'");
    return it->second;
  };
  try {
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto kv = parse_record(line);
      const auto& kind = get(kv, "record");
      if (kind == "field") {
        FieldReport f;
        f.field_id = FieldId{static_cast<std::uint32_t>(std::stoul(get(kv, "field_id")))};
        f.n_before = std::stoull(get(kv, "n_before"));
        const auto& k = get(kv, "k_after");
        f.compressed = k != "passthrough";
        f.k_after = f.compressed ? std::stoull(k) : f.n_before;
        f.clustered_count = std::stoull(get(kv, "clustered_count"));
        f.objective = std::stod(get(kv, "objective"));
        f.wall_ms = std::stod(get(kv, "wall_ms"));
        f.vector_len = static_cast<std::uint32_t>(std::stoul(get(kv, "vector_len")));
        f.mask_bytes = static_cast<std::uint32_t>(std::stoul(get(kv, "mask_bytes")));
        r.fields.push_back(f);
      } else if (kind == "totals") {
        r.vectors_before = std::stoull(get(kv, "vectors_before"));
        r.vectors_after = std::stoull(get(kv, "vectors_after"));
        r.bytes_before = std::stod(get(kv, "bytes_before"));
        r.bytes_after = std::stod(get(kv, "bytes_after"));
        r.ratio = std::stod(get(kv, "ratio"));
        r.bytes_per_component = static_cast<std::uint32_t>(std::stoul(get(kv, "bytes_per_component")));
        saw_totals = true;
      } else {
        throw FormatError("unknown record kind '" + kind + "'");
      }
    }
  } catch (const std::logic_error& e) {  // stoul & co.
    throw FormatError(std::string("malformed report value: ") + e.what());
  }
  if (!saw_totals) throw FormatError("report has no totals record");
  return r;
}

}  // namespace embcomp
