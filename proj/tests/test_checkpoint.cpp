#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "unmt/checkpoint.hpp"

using namespace unmt;

namespace {

Checkpoint sample() {
  Checkpoint ck;
  ck.add("w", Tensor<float>({2, 3}, {1.f, -2.f, 3.5f, 0.f, 1e-30f, -7.25f}));
  ck.add("b", Tensor<double>({1}, {0.1}));
  ck.add("scalar", Shape{}, {42.f});
  ck.config_text = "seed = 3\nlambda.cd = 0\n";
  ck.state = {{"iter", "2"}, {"step", "17"}, {"phase", "mid"}};
  ck.rng_state = "1 2 3";
  return ck;
}

std::uint32_t u32_at(const std::string& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  return v;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every field") {
  const auto ck = sample();
  const auto back = deserialize_checkpoint(serialize_checkpoint(ck));
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].name == ck.records[i].name);
    CHECK(back.records[i].shape == ck.records[i].shape);
    CHECK(std::memcmp(back.records[i].data.data(), ck.records[i].data.data(), ck.records[i].data.size() * 4) == 0);
  }
  CHECK(back.config_text == ck.config_text);
  CHECK(back.state == ck.state);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
}

TEST_CASE("checkpoint header layout") {
  const auto bytes = serialize_checkpoint(sample());
  CHECK(bytes.substr(0, 4) == "UNMT");
  CHECK(u32_at(bytes, 4) == 1);
  CHECK(u32_at(bytes, 8) == 3);
  // first record: name length 1, "w", dtype 1, rank 2, dims 2 and 3, then six floats
  CHECK(u32_at(bytes, 12) == 1);
  CHECK(bytes[16] == 'w');
  CHECK(bytes[17] == 1);
  CHECK(u32_at(bytes, 18) == 2);
  CHECK(u32_at(bytes, 26) == 2);
  CHECK(u32_at(bytes, 34) == 3);
  float f;
  const auto bits = u32_at(bytes, 42 + 4 * 2);
  std::memcpy(&f, &bits, 4);
  CHECK(f == 3.5f);
}

TEST_CASE("corrupt checkpoints raise format errors") {
  const auto bytes = serialize_checkpoint(sample());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
  try {
    deserialize_checkpoint(bytes.substr(0, 30), "f.unmt");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("f.unmt") != std::string::npos);
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
}

TEST_CASE("restore copies into a tensor of matching shape only") {
  const auto ck = sample();
  auto t = Tensor<float>::zeros({2, 3}, true);
  ck.restore("w", t);
  CHECK(t[2] == 3.5f);
  auto wrong = Tensor<float>::zeros({3, 2});
  CHECK_THROWS_AS(ck.restore("w", wrong), DimensionError);
  CHECK_THROWS_AS(ck.restore("missing", t), FormatError);
  CHECK_THROWS_AS(ck.state_at("missing"), FormatError);
  Checkpoint c2;
  CHECK_THROWS_AS(c2.add("x", Shape{2}, {1.f}), DimensionError);
}

TEST_CASE("checkpoint files save and load") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "unmt_test_ckpt";
  fs::create_directories(dir);
  const auto path = (dir / "a.unmt").string();
  save_checkpoint(path, sample());
  CHECK(!fs::exists(path + ".tmp"));
  const auto back = load_checkpoint(path);
  CHECK(back.state_at("step") == "17");
  CHECK_THROWS_AS(load_checkpoint((dir / "none.unmt").string()), IoError);
}
