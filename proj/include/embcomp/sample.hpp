#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "embcomp/types.hpp"

namespace embcomp {

/// One labeled impression: the active feature of each present field.
struct Sample {
  std::vector<std::pair<FieldId, FeatureId>> features;
  std::uint8_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using SampleBatch = std::vector<Sample>;

}  // namespace embcomp
