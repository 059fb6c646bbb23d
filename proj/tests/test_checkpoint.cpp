#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "test_util.hpp"
#include "tvmerge/checkpoint.hpp"
#include "tvmerge/half.hpp"

using namespace tvmerge;

namespace {

// Builds a container by hand: header JSON text plus raw data bytes.
std::vector<std::uint8_t> raw_file(const std::string& header, const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out;
  const std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

std::vector<std::uint8_t> f32_bytes(std::initializer_list<float> values) {
  std::vector<std::uint8_t> out;
  for (const float f : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

CheckpointError::Kind load_error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    CHECK(e.byte_pos().has_value());
    return e.kind();
  }
  FAIL("expected a CheckpointError");
  return CheckpointError::Kind::kIo;
}

}  // namespace

TEST_CASE("decodes a hand-built F32 file") {
  const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})",
                              f32_bytes({1.0f, 2.0f}));
  const auto ckpt = deserialize_checkpoint(bytes);
  REQUIRE(ckpt.size() == 1);
  const auto& w = ckpt.at("w");
  CHECK(w.dtype == DType::F32);
  CHECK(w.shape == Shape{2});
  CHECK(w.values == std::vector<double>{1.0, 2.0});
}

TEST_CASE("save then load reproduces values and bytes") {
  test_util::TempDir dir;
  Checkpoint c;
  c.insert("w", Tensor{DType::F32, {2, 2}, {0.5, -1.25, 3.0, 0.0}});
  c.insert("b", Tensor{DType::F64, {3}, {1.0 / 3.0, -2.0, 1e-300}});
  c.insert("h", Tensor{DType::F16, {2}, {1.5, -0.25}});
  c.metadata()["format"] = "pt";
  const auto path = dir.path() / "a.ck";
  save_checkpoint(c, path);
  const auto back = load_checkpoint(path);
  CHECK(back == c);

  const auto again = dir.path() / "b.ck";
  save_checkpoint(back, again);
  CHECK(test_util::read_bytes(path) == test_util::read_bytes(again));
}

TEST_CASE("zero value and empty checkpoint") {
  Checkpoint z;
  z.insert("w", Tensor{DType::F32, {1}, {0.0}});
  CHECK(deserialize_checkpoint(serialize_checkpoint(z)).at("w").values == std::vector<double>{0.0});

  const Checkpoint empty;
  const auto bytes = serialize_checkpoint(empty);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.empty());
  CHECK(back.metadata().empty());
}

TEST_CASE("narrowing to F32 rounds to nearest") {
  Checkpoint c;
  c.insert("x", Tensor{DType::F32, {1}, {1.0 / 3.0}});
  const auto back = deserialize_checkpoint(serialize_checkpoint(c));
  CHECK(back.at("x").values[0] == static_cast<double>(1.0f / 3.0f));
  CHECK(back.at("x").values[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST_CASE("narrowing overflow becomes infinity and survives a round trip") {
  Checkpoint c;
  c.insert("f", Tensor{DType::F32, {2}, {1e300, -1e300}});
  c.insert("h", Tensor{DType::F16, {2}, {70000.0, -65520.0}});
  const auto back = deserialize_checkpoint(serialize_checkpoint(c));
  CHECK(back.at("f").values[0] == std::numeric_limits<double>::infinity());
  CHECK(back.at("f").values[1] == -std::numeric_limits<double>::infinity());
  CHECK(back.at("h").values[0] == std::numeric_limits<double>::infinity());
  CHECK(back.at("h").values[1] == -std::numeric_limits<double>::infinity());
}

TEST_CASE("half conversion: exact values, ties to even, subnormals") {
  CHECK(double_to_half_bits(1.0) == 0x3C00);
  CHECK(double_to_half_bits(-2.0) == 0xC000);
  CHECK(double_to_half_bits(65504.0) == 0x7BFF);
  CHECK(double_to_half_bits(0x1p-24) == 0x0001);
  CHECK(double_to_half_bits(0x1p-25) == 0x0000);       // tie rounds to even (0)
  CHECK(double_to_half_bits(0x1.8p-24) == 0x0002);     // 1.5 quanta -> 2
  CHECK(double_to_half_bits(1.0 + 0x1p-11) == 0x3C00); // tie, even mantissa kept
  CHECK(double_to_half_bits(1.0 + 0x1.8p-10) == 0x3C02);
  CHECK(double_to_half_bits(0x1.ff8p-15) == 0x03FF);     // largest subnormal
  CHECK(double_to_half_bits(0x1.ffcp-15) == 0x0400);     // tie rounds up into normals
  CHECK(std::isnan(half_bits_to_double(double_to_half_bits(std::nan("")))));

  // Every finite half decodes and re-encodes to itself.
  for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
    const auto h = static_cast<std::uint16_t>(bits);
    if ((h & 0x7C00) == 0x7C00 && (h & 0x03FF) != 0) continue;
    CHECK_MESSAGE(double_to_half_bits(half_bits_to_double(h)) == h, "bits " << bits);
  }
}

TEST_CASE("rejects a 4-byte offset gap") {
  const auto bytes = raw_file(
      R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})",
      f32_bytes({1.0f, 0.0f, 2.0f}));
  try {
    deserialize_checkpoint(bytes);
    FAIL("gap accepted");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::kOffsetGap);
    CHECK(std::string(e.what()).find("offset gap") != std::string::npos);
    const std::uint64_t data_start = bytes.size() - 12;
    CHECK(e.byte_pos() == data_start + 4);
  }
}

TEST_CASE("malformed files map to designated errors") {
  using K = CheckpointError::Kind;
  SUBCASE("overlap") {
    CHECK(load_error_kind(raw_file(
              R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
              f32_bytes({1.0f, 2.0f}))) == K::kOffsetOverlap);
  }
  SUBCASE("truncated data") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})",
                                   f32_bytes({1.0f}))) == K::kTruncated);
  }
  SUBCASE("trailing bytes") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                                   f32_bytes({1.0f, 2.0f}))) == K::kOffsetGap);
  }
  SUBCASE("unknown dtype") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"I8","shape":[4],"data_offsets":[0,4]}})",
                                   f32_bytes({1.0f}))) == K::kUnknownDtype);
  }
  SUBCASE("bad json") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"F32",)", {})) == K::kMalformedHeader);
  }
  SUBCASE("header length past end of file") {
    auto bytes = raw_file(R"({})", {});
    bytes[0] = 0xFF;
    CHECK(load_error_kind(bytes) == K::kTruncated);
  }
  SUBCASE("file shorter than the length prefix") {
    CHECK(load_error_kind({1, 2, 3}) == K::kTruncated);
  }
  SUBCASE("size disagrees with shape") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})",
                                   f32_bytes({1.0f, 2.0f}))) == K::kSizeMismatch);
  }
  SUBCASE("negative shape") {
    CHECK(load_error_kind(raw_file(R"({"a":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})",
                                   f32_bytes({1.0f}))) == K::kMalformedHeader);
  }
  SUBCASE("non-string metadata") {
    CHECK(load_error_kind(raw_file(R"({"__metadata__":{"k":1}})", {})) == K::kMalformedHeader);
  }
}

TEST_CASE("json parse errors report a byte position inside the header") {
  const auto bytes = raw_file(R"({"a":})", {});
  try {
    deserialize_checkpoint(bytes);
    FAIL("accepted bad json");
  } catch (const CheckpointError& e) {
    REQUIRE(e.byte_pos().has_value());
    CHECK(*e.byte_pos() >= 8);
    CHECK(*e.byte_pos() < bytes.size() + 1);
  }
}

TEST_CASE("insert enforces checkpoint invariants") {
  Checkpoint c;
  CHECK_THROWS_AS(c.insert("", Tensor{DType::F32, {1}, {0.0}}), CheckpointError);
  CHECK_THROWS_AS(c.insert("w", Tensor{DType::F32, {2}, {0.0}}), CheckpointError);
  c.insert("w", Tensor{DType::F32, {}, {4.0}});
  CHECK(c.parameter_count() == 1);
  CHECK_THROWS_AS(c.insert("w", Tensor{DType::F32, {}, {4.0}}), CheckpointError);
}

TEST_CASE("validate_compatible names the first divergence") {
  Checkpoint a;
  a.insert("w", Tensor{DType::F32, {2}, {1.0, 2.0}});
  a.insert("z", Tensor{DType::F32, {1}, {1.0}});
  Checkpoint b = a;
  CHECK_NOTHROW(validate_compatible(a, b));

  SUBCASE("missing tensor") {
    Checkpoint c;
    c.insert("z", Tensor{DType::F32, {1}, {1.0}});
    try {
      validate_compatible(a, c);
      FAIL("accepted");
    } catch (const IncompatibleError& e) {
      CHECK(e.name() == "w");
    }
  }
  SUBCASE("shape") {
    Checkpoint c;
    c.insert("w", Tensor{DType::F32, {2, 1}, {1.0, 2.0}});
    c.insert("z", Tensor{DType::F32, {1}, {1.0}});
    try {
      validate_compatible(a, c);
      FAIL("accepted");
    } catch (const IncompatibleError& e) {
      CHECK(e.name() == "w");
    }
  }
  SUBCASE("dtype") {
    Checkpoint c = a;
    c.mutable_tensors().at("z").dtype = DType::F16;
    try {
      validate_compatible(a, c);
      FAIL("accepted");
    } catch (const IncompatibleError& e) {
      CHECK(e.name() == "z");
    }
  }
}

TEST_CASE("random checkpoints round trip byte-identically") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const auto c = test_util::random_checkpoint(rng);
    const auto bytes = serialize_checkpoint(c);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back == c);
    for (const auto& [name, t] : c.tensors()) {
      const auto& u = back.at(name);
      CHECK(u.shape == t.shape);
      CHECK(u.dtype == t.dtype);
    }
    CHECK(serialize_checkpoint(back) == bytes);
  }
}

TEST_CASE("load reports missing files as I/O errors") {
  try {
    load_checkpoint("/nonexistent/dir/x.ck");
    FAIL("opened");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::kIo);
  }
}
