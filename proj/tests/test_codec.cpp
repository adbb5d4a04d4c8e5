// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "lora_spectrum/codec.hpp"
#include "lora_spectrum/error.hpp"
#include "support.hpp"

using namespace lora_spectrum;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidSpec;
}

SparseSpectrum random_sparse(NormalStream& rng, std::string name, std::size_t m, std::size_t n, double k) {
  const Spectrum f = dct2(test_support::random_matrix(rng, m, n));
  return encode_sparse(std::move(name), f, topk_mask(f, k));
}

}  // namespace

TEST_CASE("encode keeps mask indices") {
  const Spectrum f{Matrix(2, 2, {1, 2, 3, 4})};
  const SparseSpectrum s = encode_sparse("w", f, topk_mask(f, 100.0));
  CHECK(s.flat_indices == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(s.values == std::vector<float>{1, 2, 3, 4});

  const Spectrum c = dct2(Matrix(3, 3, std::vector<double>(9, 1.0)));
  const SparseSpectrum one = encode_sparse("c", c, topk_mask(c, 1.0));
  CHECK(one.flat_indices == std::vector<std::uint32_t>{0});
}

TEST_CASE("decode of the constant mode") {
  SparseSpectrum s{"w", 4, 4, {0}, {4.0f}, 100.0};
  const Matrix x = decode_sparse(s);
  for (double v : x.data()) CHECK(std::abs(v - 1.0) < 1e-12);
}

TEST_CASE("corrupt spectra are rejected") {
  SparseSpectrum empty{"w", 4, 4, {}, {}, 10.0};
  CHECK(kind_of([&] { decode_sparse(empty); }) == ErrorKind::kCorruptSparse);
  SparseSpectrum dup{"w", 4, 4, {3, 3}, {1.0f, 2.0f}, 10.0};
  CHECK(kind_of([&] { decode_sparse(dup); }) == ErrorKind::kCorruptSparse);
  SparseSpectrum out_of_range{"w", 2, 2, {4}, {1.0f}, 10.0};
  CHECK(kind_of([&] { decode_sparse(out_of_range); }) == ErrorKind::kCorruptSparse);
  SparseSpectrum lengths{"w", 2, 2, {0, 1}, {1.0f}, 10.0};
  CHECK(kind_of([&] { decode_sparse(lengths); }) == ErrorKind::kCorruptSparse);
}

TEST_CASE("decode matches masked reconstruction within binary32") {
  NormalStream rng(51);
  const Matrix x = test_support::random_matrix(rng, 64, 64);
  const Spectrum f = dct2(x);
  const MaskResult mask = topk_mask(f, 20.0);
  const Matrix dense = reconstruct(f, mask);
  CHECK(relative_frobenius_error(decode_sparse(encode_sparse("w", f, mask)), dense) <= 1e-6);
}

TEST_CASE("pack layout") {
  SparseSpectrum s{"w", 3, 2, {0, 2, 5}, {1.0f, -2.0f, 0.5f}, 50.0};
  const AdapterFile file = pack_sparse_file({s});
  REQUIRE(file.tensors.size() == 2);
  const TensorRecord* idx = file.find("w.spectral_indices");
  const TensorRecord* val = file.find("w.spectral_values");
  REQUIRE(idx != nullptr);
  REQUIRE(val != nullptr);
  CHECK(idx->shape == std::vector<std::uint64_t>{1, 3});
  CHECK(idx->data == std::vector<double>{0, 2, 5});
  CHECK(val->dtype == DType::kF32);
  CHECK(file.metadata.size() == 4);
  CHECK(file.metadata.at("format") == "spectral-sparse-v1");
  CHECK(file.metadata.at("transform") == "dct2-ortho-v1");
  CHECK(file.metadata.at("k_percent") == "50");
  CHECK(file.metadata.at("shape.w") == "3,2");
}

TEST_CASE("pack and unpack round-trip through bytes") {
  NormalStream rng(53);
  std::vector<SparseSpectrum> spectra;
  for (int i = 0; i < 24; ++i) {
    spectra.push_back(random_sparse(rng, "layer." + std::to_string(i) + ".query", 8 + i, 16, 10.0));
  }
  std::sort(spectra.begin(), spectra.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  const auto bytes = write_container(pack_sparse_file(spectra), WritePolicy::kAsRecorded);
  CHECK(unpack_sparse_file(read_container(bytes)) == spectra);
}

TEST_CASE("mixed k values survive packing") {
  NormalStream rng(57);
  std::vector<SparseSpectrum> spectra = {random_sparse(rng, "a", 8, 8, 10.0), random_sparse(rng, "b", 8, 8, 25.0)};
  const AdapterFile file = pack_sparse_file(spectra);
  CHECK(file.metadata.at("k_percent") == "mixed");
  CHECK(unpack_sparse_file(file) == spectra);
}

TEST_CASE("unpack rejects foreign and tampered files") {
  AdapterFile plain;
  plain.tensors.push_back(TensorRecord{"w", DType::kF64, {1, 1}, {1.0}});
  CHECK(kind_of([&] { unpack_sparse_file(plain); }) == ErrorKind::kNotSpectralFile);
  CHECK(kind_of([&] { unpack_sparse_file(AdapterFile{}); }) == ErrorKind::kNotSpectralFile);

  SparseSpectrum s{"w", 2, 2, {0, 3}, {1.0f, 2.0f}, 50.0};
  AdapterFile file = pack_sparse_file({s});
  for (auto& t : file.tensors)
    if (t.name == "w.spectral_indices") t.data = {3, 0};
  CHECK(kind_of([&] { unpack_sparse_file(file); }) == ErrorKind::kCorruptSparse);
  for (auto& t : file.tensors)
    if (t.name == "w.spectral_indices") t.data = {0, 1.5};
  CHECK(kind_of([&] { unpack_sparse_file(file); }) == ErrorKind::kCorruptSparse);
}

TEST_CASE("nominal storage accounting") {
  const std::uint64_t base = 296450;
  const std::pair<double, std::uint64_t> rows[] = {{50, 148225}, {20, 59290}, {10, 29645}, {5, 14823}};
  for (const auto& [k, stored] : rows) {
    const StorageReport r = storage_report(base, k, {});
    CHECK(r.nominal_stored == stored);
    CHECK(round_one_decimal(r.nominal_reduction) == doctest::Approx(100.0 / k));
  }
  CHECK(format_nominal_accounting(storage_report(base, 10, {})) == "29645 (10.0x)");
}

TEST_CASE("coefficient accounting flags growth") {
  const StorageReport r = storage_report(296450, 10, std::vector<std::uint64_t>(24, 58983));
  CHECK(r.coefficient_values == 1415592);
  CHECK(r.index_entries == 1415592);
  CHECK(r.coefficient_total == 2831184);
  CHECK(r.coefficient_exceeds_base);
}
