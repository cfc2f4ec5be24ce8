// Compress one large random field and compare lookups and footprint.

#include <cstdio>
#include <iostream>

#include "embcomp/compression.hpp"
#include "embcomp/random.hpp"

using namespace embcomp;

int main() {
  constexpr std::size_t n = 20000;
  constexpr std::size_t l = 9;
  Rng rng(42);
  Matrix<float> vectors(n, l);
  std::vector<std::uint64_t> freq(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : vectors.row(i)) v = static_cast<float>(rng.normal());
    freq[i] = n / (i + 1);  // heavy head
  }

  EmbeddingModel<float> model;
  model.add(Field<float>(FieldId{0}, std::move(vectors), std::move(freq)));
  model.add(Field<float>(FieldId{1}, Matrix<float>(300, 17, 0.5f)));  // too small to compress

  CompressionConfig cfg;
  cfg.k = 100;
  cfg.cluster_config.init_method = InitMethod::KMeansPP;
  const auto [compressed, report] = compress_model(model, cfg);

  write_report_table(std::cout, report);
  const auto before = lookup(model, FieldId{0}, FeatureId{123});
  const auto after = lookup(compressed, FieldId{0}, FeatureId{123});
  std::printf("feature 123: |v - c|^2 = %.4f\n", squared_distance(before, after));
  std::printf("bytes %llu -> %llu (ratio %.2f)\n", static_cast<unsigned long long>(memory_footprint(model)),
              static_cast<unsigned long long>(memory_footprint(compressed)), report.ratio);
}
