#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "embcomp/matrix.hpp"
#include "embcomp/types.hpp"

namespace embcomp {

/// One field's embedding matrix (n rows of length l) plus per-feature counts.
template <std::floating_point Real>
struct Field {
  FieldId id;
  Matrix<Real> vectors;
  std::vector<std::uint64_t> frequencies;

  Field() = default;
  Field(FieldId field_id, Matrix<Real> rows, std::vector<std::uint64_t> freq = {})
      : id(field_id), vectors(std::move(rows)), frequencies(std::move(freq)) {
    if (frequencies.empty()) frequencies.assign(vectors.rows(), 0);
    validate();
  }

  std::size_t size() const noexcept { return vectors.rows(); }
  std::size_t vector_len() const noexcept { return vectors.cols(); }

  void validate() const {
    if (vectors.cols() == 0) throw InvalidInputError("Field: vector length must be positive");
    if (frequencies.size() != vectors.rows())
      throw ConsistencyError("Field " + std::to_string(id.value) +
                             ": frequency count does not match row count");
    if (!vectors.all_finite())
      throw InvalidInputError("Field " + std::to_string(id.value) + ": non-finite component");
  }

  friend bool operator==(const Field&, const Field&) = default;
};

template <std::floating_point Real>
struct EmbeddingModel {
  std::map<FieldId, Field<Real>> fields;

  const Field<Real>& field(FieldId id) const {
    auto it = fields.find(id);
    if (it == fields.end()) throw RangeError("unknown field " + std::to_string(id.value));
    return it->second;
  }
  Field<Real>& field(FieldId id) {
    auto it = fields.find(id);
    if (it == fields.end()) throw RangeError("unknown field " + std::to_string(id.value));
    return it->second;
  }

  void add(Field<Real> f) {
    const FieldId id = f.id;
    if (!fields.emplace(id, std::move(f)).second)
      throw ConsistencyError("duplicate field " + std::to_string(id.value));
  }

  friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;
};

/// The k representative vectors of one compressed field.
template <std::floating_point Real>
struct Codebook {
  FieldId field_id;
  Matrix<Real> centroids;

  std::size_t k() const noexcept { return centroids.rows(); }
  std::size_t vector_len() const noexcept { return centroids.cols(); }

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

/// feature id -> cluster index for one compressed field.
struct MaskTable {
  FieldId field_id;
  std::vector<std::uint32_t> masks;

  std::size_t size() const noexcept { return masks.size(); }

  friend bool operator==(const MaskTable&, const MaskTable&) = default;
};

template <std::floating_point Real>
struct CompressedField {
  Codebook<Real> codebook;
  MaskTable masks;

  friend bool operator==(const CompressedField&, const CompressedField&) = default;
};

/// Mix of compressed fields and fields kept verbatim. A field id lives in exactly one map.
template <std::floating_point Real>
struct CompressedModel {
  std::map<FieldId, CompressedField<Real>> compressed_fields;
  std::map<FieldId, Field<Real>> passthrough_fields;

  bool contains(FieldId id) const {
    return compressed_fields.contains(id) || passthrough_fields.contains(id);
  }

  std::vector<FieldId> field_ids() const {
    std::vector<FieldId> ids;
    for (const auto& [id, _] : compressed_fields) ids.push_back(id);
    for (const auto& [id, _] : passthrough_fields) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  std::size_t vector_len(FieldId id) const {
    if (auto it = compressed_fields.find(id); it != compressed_fields.end())
      return it->second.codebook.vector_len();
    if (auto it = passthrough_fields.find(id); it != passthrough_fields.end())
      return it->second.vector_len();
    throw RangeError("unknown field " + std::to_string(id.value));
  }

  void validate() const {
    for (const auto& [id, cf] : compressed_fields) {
      if (passthrough_fields.contains(id))
        throw ConsistencyError("field " + std::to_string(id.value) + " is both compressed and passthrough");
      if (cf.codebook.field_id != id || cf.masks.field_id != id)
        throw ConsistencyError("field " + std::to_string(id.value) + ": codebook/mask field id mismatch");
      if (cf.codebook.k() == 0) throw ConsistencyError("empty codebook");
      for (auto m : cf.masks.masks)
        if (m >= cf.codebook.k()) throw RangeError("mask value exceeds codebook size");
    }
  }

  friend bool operator==(const CompressedModel&, const CompressedModel&) = default;
};

// ---------------------------------------------------------------------------
// Lookups

template <std::floating_point Real>
std::vector<Real> lookup_uncompressed(const Field<Real>& field, FeatureId feature) {
  if (feature.value >= field.size())
    throw RangeError("feature " + std::to_string(feature.value) + " out of range for field " +
                     std::to_string(field.id.value));
  auto row = field.vectors.row(feature.value);
  return {row.begin(), row.end()};
}

template <std::floating_point Real>
std::vector<Real> lookup_compressed(const Codebook<Real>& codebook, const MaskTable& masks,
                                    FeatureId feature) {
  if (codebook.field_id != masks.field_id)
    throw ConsistencyError("codebook field " + std::to_string(codebook.field_id.value) +
                           " does not match mask field " + std::to_string(masks.field_id.value));
  if (feature.value >= masks.size())
    throw RangeError("feature " + std::to_string(feature.value) + " out of range for mask table");
  const auto cluster = masks.masks[feature.value];
  if (cluster >= codebook.k()) throw RangeError("mask value exceeds codebook size");
  auto row = codebook.centroids.row(cluster);
  return {row.begin(), row.end()};
}

/// Lookup through a CompressedModel, dispatching on how the field is stored.
template <std::floating_point Real>
std::vector<Real> lookup(const CompressedModel<Real>& model, FieldId field, FeatureId feature) {
  if (auto it = model.compressed_fields.find(field); it != model.compressed_fields.end())
    return lookup_compressed(it->second.codebook, it->second.masks, feature);
  if (auto it = model.passthrough_fields.find(field); it != model.passthrough_fields.end())
    return lookup_uncompressed(it->second, feature);
  throw RangeError("unknown field " + std::to_string(field.value));
}

template <std::floating_point Real>
std::vector<Real> lookup(const EmbeddingModel<Real>& model, FieldId field, FeatureId feature) {
  return lookup_uncompressed(model.field(field), feature);
}

// ---------------------------------------------------------------------------
// Memory accounting

/// Smallest of 1, 2 or 4 bytes able to index k clusters.
constexpr std::uint32_t mask_width_bytes(std::size_t k) noexcept {
  if (k <= 256) return 1;
  if (k <= 65536) return 2;
  return 4;
}

constexpr double uncompressed_field_bytes(double n, double vector_len,
                                          double bytes_per_component = 4) noexcept {
  return n * vector_len * bytes_per_component;
}

constexpr double compressed_field_bytes(double n, double k, double vector_len,
                                        double bytes_per_component = 4,
                                        double bytes_per_mask = 1) noexcept {
  return n * bytes_per_mask + k * vector_len * bytes_per_component;
}

template <std::floating_point Real>
std::uint64_t memory_footprint(const EmbeddingModel<Real>& model,
                               std::uint64_t bytes_per_component = 4,
                               [[maybe_unused]] std::uint64_t bytes_per_mask = 1) {
  std::uint64_t total = 0;
  for (const auto& [_, f] : model.fields) total += f.size() * f.vector_len() * bytes_per_component;
  return total;
}

template <std::floating_point Real>
std::uint64_t memory_footprint(const CompressedModel<Real>& model,
                               std::uint64_t bytes_per_component = 4,
                               std::uint64_t bytes_per_mask = 1) {
  std::uint64_t total = 0;
  for (const auto& [_, cf] : model.compressed_fields)
    total += cf.masks.size() * bytes_per_mask +
             cf.codebook.k() * cf.codebook.vector_len() * bytes_per_component;
  for (const auto& [_, f] : model.passthrough_fields)
    total += f.size() * f.vector_len() * bytes_per_component;
  return total;
}

}  // namespace embcomp
