#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "embcomp/metrics.hpp"
#include "embcomp/random.hpp"
#include "embcomp/sample.hpp"
#include "embcomp/serialization.hpp"

namespace embcomp {

/// Shape of the synthetic hourly feature stream.
struct StreamConfig {
  std::uint32_t num_fields = 16;
  /// Initial per-field vocabulary sizes run log-uniformly from min to max with
  /// u^size_skew spacing, so only the last few fields are large.
  std::uint64_t min_field_size = 40;
  std::uint64_t max_field_size = 60000;
  double size_skew = 3.0;
  double zipf_exponent = 1.1;
  std::uint32_t segments = 24;
  std::uint64_t samples_per_segment = 100000;
  /// Fraction of the current vocabulary appended before each segment after the first.
  double new_feature_rate = 0.03;
  /// Vector length -> probability, drawn once per field.
  std::map<std::uint32_t, double> vector_length_mix{{9, 0.89}, {17, 0.11}};
  /// Probability that a field is present in a sample.
  double field_presence = 0.9;
  /// Planted logistic ground truth: logit = bias + sum of per-feature weights + noise.
  double planted_scale = 0.5;
  double planted_bias = -1.0;
  double label_noise = 0.5;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_fields < 1) throw ConfigError("num_fields must be >= 1");
    if (min_field_size < 1 || max_field_size < min_field_size)
      throw ConfigError("field sizes must satisfy 1 <= min_field_size <= max_field_size");
    if (!(size_skew > 0)) throw ConfigError("size_skew must be > 0");
    if (!(zipf_exponent > 1.0)) throw ConfigError("zipf_exponent must be > 1");
    if (segments < 1) throw ConfigError("segments must be >= 1");
    if (samples_per_segment < 1) throw ConfigError("samples_per_segment must be >= 1");
    if (!(new_feature_rate >= 0)) throw ConfigError("new_feature_rate must be >= 0");
    if (vector_length_mix.empty()) throw ConfigError("vector_length_mix is empty");
    double total = 0;
    for (auto [len, p] : vector_length_mix) {
      if (len == 0 || !(p >= 0)) throw ConfigError("vector_length_mix entries must be positive");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("vector_length_mix probabilities must sum to 1");
    if (!(field_presence > 0 && field_presence <= 1)) throw ConfigError("field_presence must be in (0, 1]");
    if (!(planted_scale >= 0) || !(label_noise >= 0)) throw ConfigError("planted_scale/label_noise must be >= 0");
    if (!(heldout_fraction >= 0 && heldout_fraction < 1)) throw ConfigError("heldout_fraction must be in [0, 1)");
  }
};

struct FieldSpec {
  FieldId id;
  std::uint32_t vector_len = 0;

  friend bool operator==(const FieldSpec&, const FieldSpec&) = default;
};

struct Segment {
  std::uint32_t segment_id = 0;
  SampleBatch samples;
  /// Vocabulary size of each field (field-spec order) while this segment was drawn.
  std::vector<std::uint64_t> vocabulary;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Training part: everything but the last heldout_fraction of the samples.
inline std::span<const Sample> train_slice(const Segment& s, double heldout_fraction) {
  const auto held = static_cast<std::size_t>(std::floor(heldout_fraction * static_cast<double>(s.samples.size())));
  return std::span<const Sample>(s.samples).first(s.samples.size() - held);
}

inline std::span<const Sample> heldout_slice(const Segment& s, double heldout_fraction) {
  const auto held = static_cast<std::size_t>(std::floor(heldout_fraction * static_cast<double>(s.samples.size())));
  return std::span<const Sample>(s.samples).last(held);
}

inline std::vector<FieldSpec> field_specs(const StreamConfig& c) {
  std::vector<FieldSpec> out;
  for (std::uint32_t f = 0; f < c.num_fields; ++f) {
    Rng rng(derive_seed(c.seed, 0x4C454E, f));
    const double u = rng.uniform01();
    double cum = 0;
    std::uint32_t len = c.vector_length_mix.rbegin()->first;
    for (auto [l, p] : c.vector_length_mix) {
      cum += p;
      if (u < cum) {
        len = l;
        break;
      }
    }
    out.push_back({FieldId{f}, len});
  }
  return out;
}

inline std::vector<std::uint64_t> initial_vocabulary(const StreamConfig& c) {
  std::vector<std::uint64_t> v(c.num_fields);
  const double lo = std::log(static_cast<double>(c.min_field_size));
  const double hi = std::log(static_cast<double>(c.max_field_size));
  for (std::uint32_t f = 0; f < c.num_fields; ++f) {
    const double u = c.num_fields == 1 ? 1.0 : static_cast<double>(f) / (c.num_fields - 1);
    v[f] = static_cast<std::uint64_t>(std::llround(std::exp(lo + (hi - lo) * std::pow(u, c.size_skew))));
  }
  return v;
}

/// Vocabulary sizes in force during `segment`; append-only growth.
inline std::vector<std::uint64_t> vocabulary_at(const StreamConfig& c, std::uint32_t segment) {
  auto v = initial_vocabulary(c);
  for (std::uint32_t s = 1; s <= segment; ++s)
    for (auto& n : v) n += static_cast<std::uint64_t>(std::ceil(c.new_feature_rate * static_cast<double>(n)));
  return v;
}

/// Inverse-CDF sampler of a truncated Zipf law over ranks 1..n; rank r maps to feature r-1.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double exponent) : cdf_(n) {
    double acc = 0;
    for (std::uint64_t r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -exponent);
      cdf_[r] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  std::uint64_t operator()(Rng& rng) const {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::uint64_t>(static_cast<std::uint64_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

  std::uint64_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

/// Hidden ground-truth weight of one feature; stable across vocabulary growth.
inline double planted_weight(const StreamConfig& c, FieldId f, FeatureId x) {
  Rng rng(derive_seed(c.seed ^ 0x504C414E54ULL, f.value, x.value));
  return c.planted_scale * rng.normal();
}

/// Noise-free planted logit; its logistic is the Bayes-optimal score.
inline double planted_logit(const StreamConfig& c, const Sample& s) {
  double z = c.planted_bias;
  for (auto [f, x] : s.features) z += planted_weight(c, f, x);
  return z;
}

inline Segment generate_segment(const StreamConfig& c, std::uint32_t segment_id) {
  c.validate();
  Segment seg;
  seg.segment_id = segment_id;
  seg.vocabulary = vocabulary_at(c, segment_id);
  std::vector<ZipfSampler> samplers;
  samplers.reserve(c.num_fields);
  for (auto n : seg.vocabulary) samplers.emplace_back(n, c.zipf_exponent);

  Rng rng(derive_seed(c.seed, 0x5345474D, segment_id));
  seg.samples.resize(c.samples_per_segment);
  for (auto& s : seg.samples) {
    s.features.reserve(c.num_fields);
    for (std::uint32_t f = 0; f < c.num_fields; ++f) {
      if (c.field_presence < 1.0 && !rng.bernoulli(c.field_presence)) continue;
      s.features.emplace_back(FieldId{f}, FeatureId{static_cast<std::uint32_t>(samplers[f](rng))});
    }
    const double z = planted_logit(c, s) + c.label_noise * rng.normal();
    s.label = rng.bernoulli(logistic(z)) ? 1 : 0;
  }
  return seg;
}

/// Whole stream in memory; for small configurations and tests.
inline std::vector<Segment> generate_stream(const StreamConfig& c) {
  c.validate();
  std::vector<Segment> out;
  for (std::uint32_t s = 0; s < c.segments; ++s) out.push_back(generate_segment(c, s));
  return out;
}

// ---------------------------------------------------------------------------
// Segment files
//
//   magic "EMBS" | u16 version | u32 segment_id | u64 sample_count
//   record: u32 byte_length | u8 label | u16 pair_count | pair_count x (u32 field, u32 feature)

inline constexpr std::array<char, 4> kSegmentMagic{'E', 'M', 'B', 'S'};

inline void write_segment(std::ostream& os, const Segment& seg) {
  io::put_magic(os, kSegmentMagic);
  io::put_le(os, std::uint16_t{1});
  io::put_le(os, seg.segment_id);
  io::put_le(os, static_cast<std::uint64_t>(seg.samples.size()));
  for (const auto& s : seg.samples) {
    io::put_le(os, static_cast<std::uint32_t>(1 + 2 + 8 * s.features.size()));
    io::put_le(os, s.label);
    io::put_le(os, static_cast<std::uint16_t>(s.features.size()));
    for (auto [f, x] : s.features) {
      io::put_le(os, f.value);
      io::put_le(os, x.value);
    }
  }
  if (!os) throw FormatError("write_segment: stream failure");
}

inline Segment read_segment(std::istream& is) {
  io::expect_magic(is, kSegmentMagic, "segment file");
  if (io::get_le<std::uint16_t>(is) != 1) throw FormatError("unsupported segment version");
  Segment seg;
  seg.segment_id = io::get_le<std::uint32_t>(is);
  const auto count = io::get_le<std::uint64_t>(is);
  seg.samples.resize(count);
  for (auto& s : seg.samples) {
    const auto len = io::get_le<std::uint32_t>(is);
    s.label = io::get_le<std::uint8_t>(is);
    const auto pairs = io::get_le<std::uint16_t>(is);
    if (len != 3u + 8u * pairs) throw FormatError("segment record length mismatch");
    if (s.label > 1) throw FormatError("segment label must be 0 or 1");
    s.features.resize(pairs);
    for (auto& [f, x] : s.features) {
      f = FieldId{io::get_le<std::uint32_t>(is)};
      x = FeatureId{io::get_le<std::uint32_t>(is)};
    }
  }
  return seg;
}

inline std::string segment_file_name(std::uint32_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "segment_%04u.bin", id);
  return buf;
}

struct ManifestSegment {
  std::uint32_t segment_id = 0;
  std::string file;
  std::uint64_t samples = 0;
  std::vector<std::uint64_t> vocabulary;

  friend bool operator==(const ManifestSegment&, const ManifestSegment&) = default;
};

struct Manifest {
  std::uint64_t seed = 0;
  double heldout_fraction = 0.1;
  std::vector<FieldSpec> fields;
  std::vector<ManifestSegment> segments;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline void write_manifest(std::ostream& os, const Manifest& m) {
  os << "# embcomp stream manifest v1\n";
  os << "seed=" << m.seed << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", m.heldout_fraction);
  os << "heldout_fraction=" << buf << "\n";
  for (const auto& f : m.fields) os << "field id=" << f.id.value << " vector_len=" << f.vector_len << "\n";
  for (const auto& s : m.segments) {
    os << "segment id=" << s.segment_id << " file=" << s.file << " samples=" << s.samples << " vocab=";
    for (std::size_t i = 0; i < s.vocabulary.size(); ++i) os << (i ? "," : "") << s.vocabulary[i];
    os << "\n";
  }
}

inline Manifest read_manifest(std::istream& is) {
  Manifest m;
  std::string line;
  auto kv_of = [](std::istringstream& ls) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("manifest: malformed token '" + tok + "'");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
  };
  try {
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string head;
      ls >> head;
      if (head == "field") {
        auto kv = kv_of(ls);
        m.fields.push_back({FieldId{static_cast<std::uint32_t>(std::stoul(kv.at("id")))},
                            static_cast<std::uint32_t>(std::stoul(kv.at("vector_len")))});
      } else if (head == "segment") {
        auto kv = kv_of(ls);
        ManifestSegment s;
        s.segment_id = static_cast<std::uint32_t>(std::stoul(kv.at("id")));
        s.file = kv.at("file");
        s.samples = std::stoull(kv.at("samples"));
        std::istringstream vs(kv.at("vocab"));
        std::string n;
        while (std::getline(vs, n, ',')) s.vocabulary.push_back(std::stoull(n));
        m.segments.push_back(std::move(s));
      } else if (head.rfind("seed=", 0) == 0) {
        m.seed = std::stoull(head.substr(5));
      } else if (head.rfind("heldout_fraction=", 0) == 0) {
        m.heldout_fraction = std::stod(head.substr(17));
      } else {
        throw FormatError("manifest: unknown line '" + line + "'");
      }
    }
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("manifest: malformed value (") + e.what() + ")");
  }
  if (m.fields.empty()) throw FormatError("manifest lists no fields");
  for (const auto& s : m.segments)
    if (s.vocabulary.size() != m.fields.size()) throw FormatError("manifest: vocabulary size count mismatch");
  return m;
}

/// Writes every segment file plus manifest.txt into `dir`.
inline Manifest write_stream(const StreamConfig& c, const std::filesystem::path& dir) {
  c.validate();
  std::filesystem::create_directories(dir);
  Manifest m;
  m.seed = c.seed;
  m.heldout_fraction = c.heldout_fraction;
  m.fields = field_specs(c);
  for (std::uint32_t s = 0; s < c.segments; ++s) {
    const auto seg = generate_segment(c, s);
    const auto name = segment_file_name(s);
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / name).string());
    write_segment(os, seg);
    m.segments.push_back({s, name, seg.samples.size(), seg.vocabulary});
  }
  std::ofstream ms(dir / "manifest.txt");
  if (!ms) throw Error("cannot write manifest in " + dir.string());
  write_manifest(ms, m);
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw Error("missing manifest.txt in '" + dir.string() + "'");
  return read_manifest(is);
}

inline Segment load_segment(const std::filesystem::path& dir, const ManifestSegment& ms) {
  std::ifstream is(dir / ms.file, std::ios::binary);
  if (!is) throw Error("missing segment file '" + (dir / ms.file).string() + "'");
  auto seg = read_segment(is);
  if (seg.segment_id != ms.segment_id || seg.samples.size() != ms.samples)
    throw FormatError("segment file '" + ms.file + "' disagrees with manifest");
  seg.vocabulary = ms.vocabulary;
  for (const auto& s : seg.samples)
    for (auto [f, x] : s.features)
      if (f.value >= seg.vocabulary.size() || x.value >= seg.vocabulary[f.value])
        throw FormatError("segment '" + ms.file + "' references a feature outside its vocabulary");
  return seg;
}

}  // namespace embcomp
