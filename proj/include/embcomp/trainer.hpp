#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "embcomp/metrics.hpp"
#include "embcomp/model.hpp"
#include "embcomp/random.hpp"
#include "embcomp/sample.hpp"
#include "embcomp/serialization.hpp"

namespace embcomp {

inline constexpr double kAdagradEpsilon = 1e-8;

/// acc += g*g; param -= lr * g / (sqrt(acc) + eps), elementwise.
template <std::floating_point Real>
void adagrad_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> accumulator,
                    double learning_rate, double epsilon = kAdagradEpsilon) {
  if (param.size() != grad.size() || param.size() != accumulator.size())
    throw ConsistencyError("adagrad_update: shape mismatch");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    accumulator[i] += static_cast<Real>(g * g);
    param[i] -= static_cast<Real>(learning_rate * g / (std::sqrt(static_cast<double>(accumulator[i])) + epsilon));
  }
}

struct SlotInfo {
  std::size_t offset = 0;
  std::size_t len = 0;
  std::size_t ordinal = 0;

  friend bool operator==(const SlotInfo&, const SlotInfo&) = default;
};

/// Logistic click model over the concatenation of one embedding slot per field.
/// `Embeddings` is EmbeddingModel<Real> for initial training or CompressedModel<Real>
/// for retraining; the latter reads compressed fields through their masks.
template <std::floating_point Real, typename Embeddings>
struct PredictorModel {
  Embeddings embeddings;
  std::vector<Real> dense_weights;
  Real bias = 0;
  std::vector<Real> dense_accumulators;
  Real bias_accumulator = 0;
  /// Shaped like the trainable matrix of each field: full table or codebook.
  std::map<FieldId, Matrix<Real>> embedding_accumulators;
  double learning_rate = 0.001;
  std::map<FieldId, SlotInfo> slots;

  friend bool operator==(const PredictorModel&, const PredictorModel&) = default;
};

template <std::floating_point Real>
using BaselinePredictor = PredictorModel<Real, EmbeddingModel<Real>>;
template <std::floating_point Real>
using CompressedPredictor = PredictorModel<Real, CompressedModel<Real>>;

namespace detail {

template <std::floating_point Real>
std::vector<std::pair<FieldId, std::size_t>> field_layout(const EmbeddingModel<Real>& m) {
  std::vector<std::pair<FieldId, std::size_t>> out;
  for (const auto& [id, f] : m.fields) out.emplace_back(id, f.vector_len());
  return out;
}

template <std::floating_point Real>
std::vector<std::pair<FieldId, std::size_t>> field_layout(const CompressedModel<Real>& m) {
  std::vector<std::pair<FieldId, std::size_t>> out;
  for (auto id : m.field_ids()) out.emplace_back(id, m.vector_len(id));
  return out;
}

template <std::floating_point Real>
Matrix<Real>& trainable_matrix(EmbeddingModel<Real>& m, FieldId f) {
  return m.field(f).vectors;
}

template <std::floating_point Real>
Matrix<Real>& trainable_matrix(CompressedModel<Real>& m, FieldId f) {
  if (auto it = m.compressed_fields.find(f); it != m.compressed_fields.end()) return it->second.codebook.centroids;
  if (auto it = m.passthrough_fields.find(f); it != m.passthrough_fields.end()) return it->second.vectors;
  throw RangeError("unknown field " + std::to_string(f.value));
}

template <std::floating_point Real>
const Matrix<Real>& trainable_matrix(const EmbeddingModel<Real>& m, FieldId f) {
  return m.field(f).vectors;
}

template <std::floating_point Real>
const Matrix<Real>& trainable_matrix(const CompressedModel<Real>& m, FieldId f) {
  return trainable_matrix(const_cast<CompressedModel<Real>&>(m), f);
}

/// Row of the trainable matrix that serves `feature`.
template <std::floating_point Real>
std::size_t trainable_row(const EmbeddingModel<Real>& m, FieldId f, FeatureId x) {
  const auto& field = m.field(f);
  if (x.value >= field.size())
    throw RangeError("feature " + std::to_string(x.value) + " out of range for field " + std::to_string(f.value));
  return x.value;
}

template <std::floating_point Real>
std::size_t trainable_row(const CompressedModel<Real>& m, FieldId f, FeatureId x) {
  if (auto it = m.compressed_fields.find(f); it != m.compressed_fields.end()) {
    const auto& masks = it->second.masks.masks;
    if (x.value >= masks.size())
      throw RangeError("feature " + std::to_string(x.value) + " out of range for field " + std::to_string(f.value));
    return masks[x.value];
  }
  if (auto it = m.passthrough_fields.find(f); it != m.passthrough_fields.end()) {
    if (x.value >= it->second.size())
      throw RangeError("feature " + std::to_string(x.value) + " out of range for field " + std::to_string(f.value));
    return x.value;
  }
  throw RangeError("unknown field " + std::to_string(f.value));
}

template <std::floating_point Real, typename Embeddings>
const SlotInfo& slot(const PredictorModel<Real, Embeddings>& model, FieldId f) {
  auto it = model.slots.find(f);
  if (it == model.slots.end()) throw RangeError("unknown field " + std::to_string(f.value));
  return it->second;
}

}  // namespace detail

/// Recomputes slot offsets from the embedding layout (field-id order).
template <std::floating_point Real, typename Embeddings>
std::size_t rebuild_slots(PredictorModel<Real, Embeddings>& model) {
  model.slots.clear();
  std::size_t offset = 0;
  std::size_t ordinal = 0;
  for (auto [id, len] : detail::field_layout(model.embeddings)) {
    model.slots[id] = SlotInfo{offset, len, ordinal++};
    offset += len;
  }
  return offset;
}

/// Deterministic N(0, scale^2) initial value of one embedding row.
template <std::floating_point Real>
void init_embedding_row(std::span<Real> row, std::uint64_t seed, FieldId f, std::size_t feature, double scale) {
  Rng rng(derive_seed(seed, f.value, feature));
  for (auto& v : row) v = static_cast<Real>(scale * rng.normal());
}

/// Fresh predictor around an embedding model; dense weights drawn N(0, dense_scale^2).
template <std::floating_point Real>
BaselinePredictor<Real> make_predictor(EmbeddingModel<Real> embeddings, double learning_rate,
                                       std::uint64_t seed = 0, double dense_scale = 0.1) {
  BaselinePredictor<Real> p;
  p.embeddings = std::move(embeddings);
  p.learning_rate = learning_rate;
  const std::size_t dims = rebuild_slots(p);
  p.dense_weights.resize(dims);
  Rng rng(derive_seed(seed, 0xD5E5E));
  for (auto& w : p.dense_weights) w = static_cast<Real>(dense_scale * rng.normal());
  p.dense_accumulators.assign(dims, 0);
  for (const auto& [id, f] : p.embeddings.fields)
    p.embedding_accumulators.emplace(id, Matrix<Real>(f.size(), f.vector_len()));
  return p;
}

/// Extends a field to `new_size` features. New rows are seeded per (field, feature)
/// so the values do not depend on when the row is created.
template <std::floating_point Real>
void grow_field(BaselinePredictor<Real>& p, FieldId f, std::size_t new_size, std::uint64_t seed, double scale) {
  auto& field = p.embeddings.field(f);
  const std::size_t old = field.size();
  if (new_size <= old) return;
  field.vectors.append_rows(new_size - old);
  field.frequencies.resize(new_size, 0);
  for (std::size_t x = old; x < new_size; ++x) init_embedding_row(field.vectors.row(x), seed, f, x, scale);
  p.embedding_accumulators.at(f).append_rows(new_size - old);
}

/// How codebook rows get their Adagrad accumulators when retraining starts.
enum class CentroidAccumulatorInit {
  Fresh,      ///< zeros: centroids treated as brand-new parameters
  MemberSum,  ///< sum of the accumulators of the cluster's member features
};

/// Retraining model over `compressed`. Dense state and passthrough accumulators
/// carry over from the baseline; codebook accumulators follow `init`.
template <std::floating_point Real>
CompressedPredictor<Real> make_compressed_predictor(const BaselinePredictor<Real>& baseline,
                                                    CompressedModel<Real> compressed,
                                                    CentroidAccumulatorInit init = CentroidAccumulatorInit::MemberSum) {
  compressed.validate();
  CompressedPredictor<Real> p;
  p.embeddings = std::move(compressed);
  p.dense_weights = baseline.dense_weights;
  p.bias = baseline.bias;
  p.dense_accumulators = baseline.dense_accumulators;
  p.bias_accumulator = baseline.bias_accumulator;
  p.learning_rate = baseline.learning_rate;
  if (rebuild_slots(p) != p.dense_weights.size() || p.slots != baseline.slots)
    throw ConsistencyError("compressed model layout differs from baseline");
  for (const auto& [id, cf] : p.embeddings.compressed_fields) {
    Matrix<Real> acc(cf.codebook.k(), cf.codebook.vector_len());
    if (init == CentroidAccumulatorInit::MemberSum) {
      const auto& member_acc = baseline.embedding_accumulators.at(id);
      if (member_acc.rows() != cf.masks.size())
        throw ConsistencyError("mask table size differs from baseline field " + std::to_string(id.value));
      for (std::size_t x = 0; x < cf.masks.size(); ++x) {
        auto dst = acc.row(cf.masks.masks[x]);
        const auto src = member_acc.row(x);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    p.embedding_accumulators.emplace(id, std::move(acc));
  }
  for (const auto& [id, f] : p.embeddings.passthrough_fields)
    p.embedding_accumulators.emplace(id, baseline.embedding_accumulators.at(id));
  return p;
}

template <std::floating_point Real, typename Embeddings>
double logit(const PredictorModel<Real, Embeddings>& model, const Sample& sample) {
  double z = model.bias;
  for (auto [f, x] : sample.features) {
    const auto& s = detail::slot(model, f);
    const auto row = detail::trainable_matrix(model.embeddings, f).row(detail::trainable_row(model.embeddings, f, x));
    for (std::size_t j = 0; j < s.len; ++j)
      z += static_cast<double>(model.dense_weights[s.offset + j]) * static_cast<double>(row[j]);
  }
  return z;
}

/// Click probability. Absent fields contribute a zero slot.
template <std::floating_point Real, typename Embeddings>
double forward(const PredictorModel<Real, Embeddings>& model, const Sample& sample) {
  return logistic(logit(model, sample));
}

enum class RowAggregation {
  Sum,   ///< gradient of the summed loss (one row per feature)
  Mean,  ///< mean of the per-occurrence gradients (rows shared by a cluster)
};

template <std::floating_point Real>
struct RowGradient {
  FieldId field;
  std::size_t row = 0;
  std::uint32_t occurrences = 0;
  std::vector<Real> grad;
};

template <std::floating_point Real>
struct StepGradients {
  /// Mean over the step's samples.
  std::vector<Real> dense;
  Real bias = 0;
  /// Sorted by (field order, row).
  std::vector<RowGradient<Real>> rows;
  std::vector<double> probabilities;
};

/// Gradients of the log loss for one optimization step, all taken at the current parameters.
template <std::floating_point Real, typename Embeddings>
StepGradients<Real> compute_gradients(const PredictorModel<Real, Embeddings>& model,
                                      std::span<const Sample* const> batch, RowAggregation aggregation) {
  StepGradients<Real> out;
  out.dense.assign(model.dense_weights.size(), 0);
  if (batch.empty()) return out;

  struct Occurrence {
    std::uint64_t key;
    FieldId field;
    std::size_t row;
    double dz;
  };
  std::vector<Occurrence> occ;
  std::vector<double> dense(model.dense_weights.size(), 0.0);
  double bias = 0.0;

  for (const Sample* sample : batch) {
    const double p = forward(model, *sample);
    const double dz = p - static_cast<double>(sample->label);
    out.probabilities.push_back(p);
    bias += dz;
    for (auto [f, x] : sample->features) {
      const auto& s = detail::slot(model, f);
      const std::size_t r = detail::trainable_row(model.embeddings, f, x);
      const auto row = detail::trainable_matrix(model.embeddings, f).row(r);
      for (std::size_t j = 0; j < s.len; ++j) dense[s.offset + j] += dz * static_cast<double>(row[j]);
      occ.push_back({(static_cast<std::uint64_t>(s.ordinal) << 40) | r, f, r, dz});
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < dense.size(); ++i) out.dense[i] = static_cast<Real>(dense[i] * inv_b);
  out.bias = static_cast<Real>(bias * inv_b);

  std::stable_sort(occ.begin(), occ.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  for (std::size_t i = 0; i < occ.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < occ.size() && occ[j].key == occ[i].key) sum += occ[j++].dz;
    const auto count = static_cast<std::uint32_t>(j - i);
    const double scale = aggregation == RowAggregation::Mean ? sum / count : sum;
    const auto& s = detail::slot(model, occ[i].field);
    RowGradient<Real> rg{occ[i].field, occ[i].row, count, std::vector<Real>(s.len)};
    for (std::size_t d = 0; d < s.len; ++d)
      rg.grad[d] = static_cast<Real>(scale * static_cast<double>(model.dense_weights[s.offset + d]));
    out.rows.push_back(std::move(rg));
    i = j;
  }
  return out;
}

template <std::floating_point Real, typename Embeddings>
void apply_gradients(PredictorModel<Real, Embeddings>& model, const StepGradients<Real>& g) {
  const double lr = model.learning_rate;
  adagrad_update(std::span<Real>(model.dense_weights), std::span<const Real>(g.dense),
                 std::span<Real>(model.dense_accumulators), lr);
  adagrad_update(std::span<Real>(&model.bias, 1), std::span<const Real>(&g.bias, 1),
                 std::span<Real>(&model.bias_accumulator, 1), lr);
  for (const auto& rg : g.rows) {
    auto& params = detail::trainable_matrix(model.embeddings, rg.field);
    auto& acc = model.embedding_accumulators.at(rg.field);
    adagrad_update(params.row(rg.row), std::span<const Real>(rg.grad), acc.row(rg.row), lr);
  }
}

struct TrainOptions {
  /// Samples per optimization step in retraining; initial training is per-sample.
  std::size_t batch_size = 256;
  bool shuffle = true;
  std::uint64_t shuffle_seed = 0;
};

struct TrainStats {
  std::size_t samples_seen = 0;
  /// Mean log loss of the pre-update predictions over the epoch.
  double log_loss = 0.0;
  /// Held-out metrics; NaN when no held-out slice was given.
  double auc = std::numeric_limits<double>::quiet_NaN();
  double heldout_log_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

struct EvalResult {
  double auc = std::numeric_limits<double>::quiet_NaN();
  double log_loss = std::numeric_limits<double>::quiet_NaN();
};

template <std::floating_point Real, typename Embeddings>
std::vector<double> predict(const PredictorModel<Real, Embeddings>& model, std::span<const Sample> samples) {
  std::vector<double> p;
  p.reserve(samples.size());
  for (const auto& s : samples) p.push_back(forward(model, s));
  return p;
}

/// AUC and log loss on `samples`. AUC is NaN when only one class is present.
template <std::floating_point Real, typename Embeddings>
EvalResult evaluate(const PredictorModel<Real, Embeddings>& model, std::span<const Sample> samples) {
  EvalResult r;
  if (samples.empty()) return r;
  const auto p = predict(model, samples);
  std::vector<std::uint8_t> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  r.log_loss = log_loss(p, y);
  try {
    r.auc = auc(p, y);
  } catch (const UndefinedMetricError&) {
  }
  return r;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, const TrainOptions& opt) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (opt.shuffle) {
    Rng rng(opt.shuffle_seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  return order;
}

template <std::floating_point Real, typename Embeddings, typename OnSample>
TrainStats run_epoch(PredictorModel<Real, Embeddings>& model, std::span<const Sample> samples,
                     std::span<const Sample> heldout, const TrainOptions& opt, std::size_t batch_size,
                     RowAggregation aggregation, OnSample&& on_sample) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const auto order = epoch_order(samples.size(), opt);
  TrainStats stats;
  double loss = 0.0;
  std::vector<const Sample*> batch;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batch.clear();
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) batch.push_back(&samples[order[j]]);
    const auto g = compute_gradients(model, std::span<const Sample* const>(batch), aggregation);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double p = std::clamp(g.probabilities[b], kLogLossClamp, 1.0 - kLogLossClamp);
      loss -= batch[b]->label ? std::log(p) : std::log1p(-p);
      on_sample(*batch[b]);
    }
    apply_gradients(model, g);
  }
  stats.samples_seen = samples.size();
  stats.log_loss = samples.empty() ? 0.0 : loss / static_cast<double>(samples.size());
  if (!heldout.empty()) {
    const auto e = evaluate(model, heldout);
    stats.auc = e.auc;
    stats.heldout_log_loss = e.log_loss;
  }
  stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

}  // namespace detail

/// One pass of per-sample Adagrad over `samples`; also counts feature occurrences.
template <std::floating_point Real>
TrainStats train_epoch(BaselinePredictor<Real>& model, std::span<const Sample> samples,
                       const TrainOptions& opt = {}, std::span<const Sample> heldout = {}) {
  return detail::run_epoch(model, samples, heldout, opt, 1, RowAggregation::Sum, [&](const Sample& s) {
    for (auto [f, x] : s.features) ++model.embeddings.field(f).frequencies[x.value];
  });
}

/// One pass over a compressed model. Per step, each touched codebook row is updated
/// with the mean of the per-occurrence gradients of its cluster members. Masks are
/// read only.
template <std::floating_point Real>
TrainStats retrain_epoch(CompressedPredictor<Real>& model, std::span<const Sample> samples,
                         const TrainOptions& opt = {}, std::span<const Sample> heldout = {}) {
  return detail::run_epoch(model, samples, heldout, opt, opt.batch_size, RowAggregation::Mean,
                           [](const Sample&) {});
}

// ---------------------------------------------------------------------------
// Checkpoints: model file followed by an optimizer section.
//
//   magic "EMBO" | u16 version | u8 real_bytes | f64 learning_rate
//   u64 dims | dims weights | dims accumulators | bias | bias accumulator
//   u32 count | per field: u32 field_id | u64 rows | u32 cols | rows*cols accumulators

inline constexpr std::array<char, 4> kOptimizerMagic{'E', 'M', 'B', 'O'};

template <std::floating_point Real, typename Embeddings>
void write_checkpoint(std::ostream& os, const PredictorModel<Real, Embeddings>& p) {
  write_model(os, p.embeddings);
  io::put_magic(os, kOptimizerMagic);
  io::put_le(os, std::uint16_t{1});
  io::put_le(os, static_cast<std::uint8_t>(sizeof(Real)));
  io::put_le(os, std::bit_cast<std::uint64_t>(p.learning_rate));
  io::put_le(os, static_cast<std::uint64_t>(p.dense_weights.size()));
  for (auto w : p.dense_weights) io::put_real(os, w);
  for (auto a : p.dense_accumulators) io::put_real(os, a);
  io::put_real(os, p.bias);
  io::put_real(os, p.bias_accumulator);
  io::put_le(os, static_cast<std::uint32_t>(p.embedding_accumulators.size()));
  for (const auto& [id, m] : p.embedding_accumulators) {
    io::put_le(os, id.value);
    io::put_le(os, static_cast<std::uint64_t>(m.rows()));
    io::put_le(os, static_cast<std::uint32_t>(m.cols()));
    io::put_matrix(os, m);
  }
  if (!os) throw FormatError("write_checkpoint: stream failure");
}

/// Reads a checkpoint; Embeddings selects whether compressed fields are allowed.
template <std::floating_point Real, typename Embeddings>
PredictorModel<Real, Embeddings> read_checkpoint(std::istream& is) {
  PredictorModel<Real, Embeddings> p;
  if constexpr (std::is_same_v<Embeddings, EmbeddingModel<Real>>)
    p.embeddings = read_embedding_model<Real>(is);
  else
    p.embeddings = read_model<Real>(is);
  io::expect_magic(is, kOptimizerMagic, "optimizer section");
  if (io::get_le<std::uint16_t>(is) != 1) throw FormatError("unsupported optimizer section version");
  const auto width = io::get_le<std::uint8_t>(is);
  p.learning_rate = std::bit_cast<double>(io::get_le<std::uint64_t>(is));
  const auto dims = io::get_le<std::uint64_t>(is);
  p.dense_weights.resize(dims);
  p.dense_accumulators.resize(dims);
  for (auto& w : p.dense_weights) w = io::get_real<Real>(is, width);
  for (auto& a : p.dense_accumulators) a = io::get_real<Real>(is, width);
  p.bias = io::get_real<Real>(is, width);
  p.bias_accumulator = io::get_real<Real>(is, width);
  const auto count = io::get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const FieldId id{io::get_le<std::uint32_t>(is)};
    const auto rows = io::get_le<std::uint64_t>(is);
    const auto cols = io::get_le<std::uint32_t>(is);
    p.embedding_accumulators.emplace(id, io::get_matrix<Real>(is, rows, cols, width));
  }
  if (rebuild_slots(p) != dims) throw FormatError("checkpoint dense size does not match embedding layout");
  for (const auto& [id, _] : p.slots) {
    const auto& params = detail::trainable_matrix(p.embeddings, id);
    auto it = p.embedding_accumulators.find(id);
    if (it == p.embedding_accumulators.end() || it->second.rows() != params.rows() ||
        it->second.cols() != params.cols())
      throw FormatError("checkpoint accumulator shape mismatch for field " + std::to_string(id.value));
  }
  return p;
}

template <std::floating_point Real, typename Embeddings>
void save_checkpoint(const std::string& path, const PredictorModel<Real, Embeddings>& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, p);
}

template <std::floating_point Real, typename Embeddings>
PredictorModel<Real, Embeddings> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint<Real, Embeddings>(is);
}

}  // namespace embcomp
