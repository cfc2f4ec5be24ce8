#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace embcomp {

/// Thin strong wrapper so field ids and feature ids cannot be swapped silently.
template <typename T, typename Tag>
struct StrongId {
  T value{};

  constexpr StrongId() = default;
  constexpr explicit StrongId(T v) : value(v) {}

  friend constexpr auto operator<=>(StrongId, StrongId) = default;
};

struct FieldTag {};
struct FeatureTag {};

using FieldId = StrongId<std::uint32_t, FieldTag>;
using FeatureId = StrongId<std::uint32_t, FeatureTag>;

// Error hierarchy. Everything derives from Error so callers can catch once.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Index outside the valid range (feature id, mask value, field id).
struct RangeError : Error {
  using Error::Error;
};

/// Two structures that must agree do not (field ids, shapes).
struct ConsistencyError : Error {
  using Error::Error;
};

/// Clustering asked for more centroids than there are input rows.
struct InsufficientInputError : Error {
  using Error::Error;
};

/// Non-finite input values or otherwise malformed arguments.
struct InvalidInputError : Error {
  using Error::Error;
};

/// A configuration value failed validation.
struct ConfigError : Error {
  using Error::Error;
};

/// On-disk data is corrupt, truncated or of the wrong kind.
struct FormatError : Error {
  using Error::Error;
};

/// AUC requested on a label set without both classes.
struct UndefinedMetricError : Error {
  using Error::Error;
};

}  // namespace embcomp

template <typename T, typename Tag>
struct std::hash<embcomp::StrongId<T, Tag>> {
  std::size_t operator()(embcomp::StrongId<T, Tag> id) const noexcept {
    return std::hash<T>{}(id.value);
  }
};
