#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "embcomp/model.hpp"

// Binary model format, all integers and reals little-endian:
//
//   magic "EMBC" | u16 version | u8 real_bytes (4 or 8) | u8 reserved | u32 field_count
//   per field, ascending id:
//     u32 field_id | u64 n | u32 l | u8 flag (0 passthrough, 1 compressed)
//     flag 1: u32 k | u8 mask_width | k*l reals | n masks of mask_width bytes
//     flag 0: n*l reals | n u64 frequencies

namespace embcomp {

inline constexpr std::array<char, 4> kModelMagic{'E', 'M', 'B', 'C'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

namespace io {

template <std::unsigned_integral U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <std::unsigned_integral U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <std::floating_point Real>
void put_real(std::ostream& os, Real v) {
  if constexpr (sizeof(Real) == 4)
    put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  else
    put_le(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
}

/// Reads a real stored with `width` bytes into Real. Narrowing 8 -> 4 is rejected.
template <std::floating_point Real>
Real get_real(std::istream& is, std::uint8_t width) {
  if (width == 4) return static_cast<Real>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
  if constexpr (sizeof(Real) < 8) {
    throw FormatError("file stores 8-byte reals; refusing to narrow to 4 bytes");
  } else {
    return static_cast<Real>(std::bit_cast<double>(get_le<std::uint64_t>(is)));
  }
}

inline void put_magic(std::ostream& os, const std::array<char, 4>& magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, const std::array<char, 4>& magic, const char* what) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || got != magic) throw FormatError(std::string("bad magic for ") + what);
}

inline void put_mask(std::ostream& os, std::uint32_t m, std::uint8_t width) {
  switch (width) {
    case 1: put_le(os, static_cast<std::uint8_t>(m)); break;
    case 2: put_le(os, static_cast<std::uint16_t>(m)); break;
    default: put_le(os, m); break;
  }
}

inline std::uint32_t get_mask(std::istream& is, std::uint8_t width) {
  switch (width) {
    case 1: return get_le<std::uint8_t>(is);
    case 2: return get_le<std::uint16_t>(is);
    case 4: return get_le<std::uint32_t>(is);
    default: throw FormatError("invalid mask width " + std::to_string(width));
  }
}

template <std::floating_point Real>
void put_matrix(std::ostream& os, const Matrix<Real>& m) {
  for (Real v : m.data()) put_real(os, v);
}

template <std::floating_point Real>
Matrix<Real> get_matrix(std::istream& is, std::size_t rows, std::size_t cols, std::uint8_t width) {
  Matrix<Real> m(rows, cols);
  for (auto& v : m.data()) v = get_real<Real>(is, width);
  return m;
}

}  // namespace io

namespace detail {

template <std::floating_point Real>
void write_header(std::ostream& os, std::uint32_t field_count) {
  io::put_magic(os, kModelMagic);
  io::put_le(os, kModelFormatVersion);
  io::put_le(os, static_cast<std::uint8_t>(sizeof(Real)));
  io::put_le(os, std::uint8_t{0});
  io::put_le(os, field_count);
}

template <std::floating_point Real>
void write_passthrough(std::ostream& os, const Field<Real>& f) {
  io::put_le(os, f.id.value);
  io::put_le(os, static_cast<std::uint64_t>(f.size()));
  io::put_le(os, static_cast<std::uint32_t>(f.vector_len()));
  io::put_le(os, std::uint8_t{0});
  io::put_matrix(os, f.vectors);
  for (auto c : f.frequencies) io::put_le(os, static_cast<std::uint64_t>(c));
}

template <std::floating_point Real>
void write_compressed(std::ostream& os, const CompressedField<Real>& cf) {
  const auto& cb = cf.codebook;
  const auto width = static_cast<std::uint8_t>(mask_width_bytes(cb.k()));
  io::put_le(os, cb.field_id.value);
  io::put_le(os, static_cast<std::uint64_t>(cf.masks.size()));
  io::put_le(os, static_cast<std::uint32_t>(cb.vector_len()));
  io::put_le(os, std::uint8_t{1});
  io::put_le(os, static_cast<std::uint32_t>(cb.k()));
  io::put_le(os, width);
  io::put_matrix(os, cb.centroids);
  for (auto m : cf.masks.masks) io::put_mask(os, m, width);
}

}  // namespace detail

template <std::floating_point Real>
void write_model(std::ostream& os, const EmbeddingModel<Real>& model) {
  detail::write_header<Real>(os, static_cast<std::uint32_t>(model.fields.size()));
  for (const auto& [_, f] : model.fields) detail::write_passthrough(os, f);
  if (!os) throw FormatError("write_model: stream failure");
}

template <std::floating_point Real>
void write_model(std::ostream& os, const CompressedModel<Real>& model) {
  model.validate();
  detail::write_header<Real>(
      os, static_cast<std::uint32_t>(model.compressed_fields.size() + model.passthrough_fields.size()));
  for (auto id : model.field_ids()) {
    if (auto it = model.compressed_fields.find(id); it != model.compressed_fields.end())
      detail::write_compressed(os, it->second);
    else
      detail::write_passthrough(os, model.passthrough_fields.at(id));
  }
  if (!os) throw FormatError("write_model: stream failure");
}

/// Reads either flavour; uncompressed fields land in passthrough_fields.
template <std::floating_point Real>
CompressedModel<Real> read_model(std::istream& is) {
  io::expect_magic(is, kModelMagic, "model file");
  const auto version = io::get_le<std::uint16_t>(is);
  if (version != kModelFormatVersion) throw FormatError("unsupported model version " + std::to_string(version));
  const auto width = io::get_le<std::uint8_t>(is);
  if (width != 4 && width != 8) throw FormatError("invalid real width " + std::to_string(width));
  (void)io::get_le<std::uint8_t>(is);
  const auto count = io::get_le<std::uint32_t>(is);

  CompressedModel<Real> model;
  for (std::uint32_t i = 0; i < count; ++i) {
    const FieldId id{io::get_le<std::uint32_t>(is)};
    const auto n = io::get_le<std::uint64_t>(is);
    const auto l = io::get_le<std::uint32_t>(is);
    const auto flag = io::get_le<std::uint8_t>(is);
    if (model.contains(id)) throw FormatError("duplicate field " + std::to_string(id.value));
    if (flag == 1) {
      const auto k = io::get_le<std::uint32_t>(is);
      const auto mw = io::get_le<std::uint8_t>(is);
      CompressedField<Real> cf;
      cf.codebook = Codebook<Real>{id, io::get_matrix<Real>(is, k, l, width)};
      cf.masks.field_id = id;
      cf.masks.masks.resize(n);
      for (auto& m : cf.masks.masks) {
        m = io::get_mask(is, mw);
        if (m >= k) throw FormatError("mask value out of range in field " + std::to_string(id.value));
      }
      model.compressed_fields.emplace(id, std::move(cf));
    } else if (flag == 0) {
      auto vectors = io::get_matrix<Real>(is, n, l, width);
      std::vector<std::uint64_t> freq(n);
      for (auto& c : freq) c = io::get_le<std::uint64_t>(is);
      model.passthrough_fields.emplace(id, Field<Real>(id, std::move(vectors), std::move(freq)));
    } else {
      throw FormatError("invalid field flag " + std::to_string(flag));
    }
  }
  return model;
}

/// Reads a model file that must contain only uncompressed fields.
template <std::floating_point Real>
EmbeddingModel<Real> read_embedding_model(std::istream& is) {
  auto cm = read_model<Real>(is);
  if (!cm.compressed_fields.empty()) throw FormatError("expected an uncompressed model");
  EmbeddingModel<Real> m;
  m.fields = std::move(cm.passthrough_fields);
  return m;
}

template <typename Model>
void save_model_file(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_model(os, model);
}

}  // namespace embcomp
