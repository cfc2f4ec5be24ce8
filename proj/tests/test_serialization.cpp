#include <gtest/gtest.h>

#include <sstream>

#include "embcomp/compression.hpp"
#include "embcomp/serialization.hpp"
#include "embcomp/trainer.hpp"
#include "helpers.hpp"

using namespace embcomp;
using testing_util::random_matrix;

namespace {

template <typename Real>
EmbeddingModel<Real> sample_model(std::uint64_t seed) {
  EmbeddingModel<Real> m;
  Rng rng(seed);
  for (std::uint32_t f : {0u, 2u, 5u}) {
    const std::size_t n = 40 + 700 * (f == 5);
    std::vector<std::uint64_t> freq(n);
    for (auto& c : freq) c = rng.next() >> 20;
    m.add(Field<Real>(FieldId{f}, random_matrix<Real>(n, f == 2 ? 17 : 9, seed + f), freq));
  }
  return m;
}

template <typename Model>
std::string bytes_of(const Model& m) {
  std::stringstream ss;
  write_model(ss, m);
  return ss.str();
}

}  // namespace

TEST(ModelFormat, UncompressedRoundTripBitExact) {
  const auto f32 = sample_model<float>(1);
  const auto s32 = bytes_of(f32);
  std::stringstream in32(s32);
  const auto back32 = read_embedding_model<float>(in32);
  EXPECT_EQ(back32, f32);
  EXPECT_EQ(bytes_of(back32), s32);

  const auto f64 = sample_model<double>(2);
  std::stringstream in64(bytes_of(f64));
  EXPECT_EQ(read_embedding_model<double>(in64), f64);
}

TEST(ModelFormat, FloatFileUses32BitReals) {
  const auto m = sample_model<float>(3);
  std::size_t expect = 4 + 2 + 1 + 1 + 4;
  for (const auto& [_, f] : m.fields) expect += 4 + 8 + 4 + 1 + f.size() * f.vector_len() * 4 + f.size() * 8;
  EXPECT_EQ(bytes_of(m).size(), expect);
}

TEST(ModelFormat, CompressedRoundTripAndOneByteMasks) {
  const auto m = sample_model<float>(4);
  CompressionConfig c;
  c.k = 7;
  const auto mc = compress_model(m, c);
  ASSERT_EQ(mc.model.compressed_fields.size(), 1u);  // only the 740-row field reaches 100*k
  const auto bytes = bytes_of(mc.model);
  std::stringstream in(bytes);
  const auto back = read_model<float>(in);
  EXPECT_EQ(back, mc.model);
  EXPECT_EQ(bytes_of(back), bytes);

  std::size_t expect = 12;
  for (const auto& [_, cf] : mc.model.compressed_fields)
    expect += 17 + 4 + 1 + cf.codebook.k() * cf.codebook.vector_len() * 4 + cf.masks.size() * 1;
  for (const auto& [_, f] : mc.model.passthrough_fields) expect += 17 + f.size() * f.vector_len() * 4 + f.size() * 8;
  EXPECT_EQ(bytes.size(), expect);
}

TEST(ModelFormat, MaskWidthGrowsWithK) {
  CompressedModel<float> cm;
  std::vector<std::uint32_t> masks(1000);
  for (std::size_t i = 0; i < masks.size(); ++i) masks[i] = static_cast<std::uint32_t>(i % 300);
  cm.compressed_fields[FieldId{0}] = {Codebook<float>{FieldId{0}, random_matrix<float>(300, 2, 1)}, MaskTable{FieldId{0}, masks}};
  const auto bytes = bytes_of(cm);
  EXPECT_EQ(bytes.size(), 12u + 17 + 5 + 300 * 2 * 4 + 1000 * 2);
  std::stringstream in(bytes);
  EXPECT_EQ(read_model<float>(in), cm);
}

TEST(ModelFormat, Rejections) {
  const auto good = bytes_of(sample_model<double>(5));
  {
    std::stringstream in(good);
    EXPECT_THROW(read_embedding_model<float>(in), FormatError);  // 8-byte reals into float
  }
  {
    auto b = good;
    b[1] = 'X';
    std::stringstream in(b);
    EXPECT_THROW(read_model<double>(in), FormatError);
  }
  {
    auto b = good;
    b[4] = 9;  // version
    std::stringstream in(b);
    EXPECT_THROW(read_model<double>(in), FormatError);
  }
  {
    std::stringstream in(good.substr(0, good.size() / 2));
    EXPECT_THROW(read_model<double>(in), FormatError);
  }
  {
    auto b = good;
    b[12 + 16] = 3;  // first field flag
    std::stringstream in(b);
    EXPECT_THROW(read_model<double>(in), FormatError);
  }
  CompressedModel<float> cm;
  cm.compressed_fields[FieldId{0}] = {Codebook<float>{FieldId{0}, random_matrix<float>(2, 1, 1)}, MaskTable{FieldId{0}, {0, 1}}};
  auto b = bytes_of(cm);
  b.back() = 5;  // mask beyond k
  std::stringstream in(b);
  EXPECT_THROW(read_model<float>(in), FormatError);
  std::stringstream cin(bytes_of(cm));
  EXPECT_THROW(read_embedding_model<float>(cin), FormatError);
}

TEST(Checkpoint, BaselineAndCompressedRoundTrip) {
  auto p = make_predictor(sample_model<double>(6), 0.05, 3, 0.5);
  SampleBatch batch;
  Rng rng(7);
  for (int i = 0; i < 400; ++i) {
    Sample s;
    s.features = {{FieldId{0}, FeatureId{static_cast<std::uint32_t>(rng.uniform_index(40))}},
                  {FieldId{5}, FeatureId{static_cast<std::uint32_t>(rng.uniform_index(740))}}};
    s.label = rng.bernoulli(0.3);
    batch.push_back(s);
  }
  train_epoch(p, std::span<const Sample>(batch));
  std::stringstream ss;
  write_checkpoint(ss, p);
  const auto bytes = ss.str();
  std::stringstream in(bytes);
  const auto back = read_checkpoint<double, EmbeddingModel<double>>(in);
  EXPECT_EQ(back, p);
  std::stringstream again;
  write_checkpoint(again, back);
  EXPECT_EQ(again.str(), bytes);

  CompressionConfig c;
  c.k = 5;
  auto cp = make_compressed_predictor(p, compress_model(p.embeddings, c).model);
  retrain_epoch(cp, std::span<const Sample>(batch));
  std::stringstream cs;
  write_checkpoint(cs, cp);
  std::stringstream cin(cs.str());
  EXPECT_EQ((read_checkpoint<double, CompressedModel<double>>(cin)), cp);

  std::stringstream trunc(bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW((read_checkpoint<double, EmbeddingModel<double>>(trunc)), FormatError);
}
