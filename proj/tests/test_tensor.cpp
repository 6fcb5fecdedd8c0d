#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "motionsep/errors.hpp"
#include "motionsep/tensor.hpp"

using namespace motionsep;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "motionsep_tensor_test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("tensor construction and indexing") {
  Tensor t({2, 3}, 0.0);
  CHECK(t.size() == 6);
  CHECK(t.ndim() == 2);
  t.at({1, 2}) = 5.0;
  CHECK(t[5] == doctest::Approx(5.0));
  CHECK(t.at({0, 0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.at({0, 0, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("tensor reshape preserves data, rejects bad sizes") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at({2, 1}) == doctest::Approx(6.0));
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("tensor file round-trip") {
  const fs::path path = temp_dir() / "roundtrip.mst";
  Tensor t({3, 4, 5});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = 0.125 * static_cast<double>(i) - 3.0;
  save_tensor(path, t);
  Tensor back = load_tensor(path);
  REQUIRE(back.shape() == t.shape());
  // Values chosen to be exactly representable in float32, so the round-trip
  // must be exact, not approximate.
  CHECK(max_abs_diff(back, t) == 0.0);
}

TEST_CASE("tensor file header layout is pinned") {
  // Independent byte-level oracle for the format: magic, version, rank, dims
  // as little-endian u64, then float32 payload.
  const fs::path path = temp_dir() / "pinned.mst";
  save_tensor(path, Tensor::from({1, 2}, {1.0, -2.5}));
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  REQUIRE(raw.size() == 16 + 4 + 8 + 16 + 8);
  const std::string magic(raw.begin(), raw.begin() + 16);
  CHECK(magic == "MOTIONSEP-TENSOR");
  CHECK(raw[16] == 1);  // version u32 LE
  CHECK(raw[17] == 0);
  CHECK(raw[20] == 2);  // ndim u64 LE
  CHECK(raw[28] == 1);  // dims[0]
  CHECK(raw[36] == 2);  // dims[1]
  // 1.0f little-endian = 00 00 80 3f
  CHECK(raw[44] == 0x00);
  CHECK(raw[45] == 0x00);
  CHECK(raw[46] == 0x80);
  CHECK(raw[47] == 0x3f);
  // -2.5f little-endian = 00 00 20 c0
  CHECK(raw[48] == 0x00);
  CHECK(raw[49] == 0x00);
  CHECK(raw[50] == 0x20);
  CHECK(raw[51] == 0xc0);
}

TEST_CASE("tensor loader rejects corrupt files") {
  const fs::path dir = temp_dir();
  {
    std::ofstream os(dir / "bad_magic.mst", std::ios::binary);
    os << "NOT-A-TENSOR-FILE-AT-ALL";
  }
  CHECK_THROWS_AS(load_tensor(dir / "bad_magic.mst"), FileFormatError);

  {
    Tensor t({4, 4}, 1.0);
    save_tensor(dir / "trunc.mst", t);
    fs::resize_file(dir / "trunc.mst", 40);
  }
  CHECK_THROWS_AS(load_tensor(dir / "trunc.mst"), FileFormatError);
  CHECK_THROWS_AS(load_tensor(dir / "does_not_exist.mst"), DependencyError);
}

TEST_CASE("similarity helpers") {
  Tensor a = Tensor::from({3}, {1, 0, 0});
  Tensor b = Tensor::from({3}, {0, 1, 0});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  Tensor z({3}, 0.0);
  CHECK(cosine_similarity(a, z) == doctest::Approx(0.0));  // degenerate -> 0
  CHECK(max_abs_diff(a, b) == doctest::Approx(1.0));
}
