#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "faster/checkpoint.hpp"
#include "faster/errors.hpp"

namespace faster {
namespace {

namespace fs = std::filesystem;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("faster_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Checkpoint sample() const {
    std::mt19937_64 rng(3);
    Checkpoint c;
    c.put("conv1.kernel", Tensor<float>::normal({3, 3, 3, 3, 4}, 0.0f, 1.0f, rng));
    c.put("head.bias", Tensor<double>::uniform({2}, -1.0, 1.0, rng));
    c.put("empty", Tensor<float>({0, 4}));
    c.metadata.epoch = 7;
    c.metadata.rng_state = rng_state_string(rng);
    c.metadata.config_hash = config_hash("lr=0.1\n");
    c.metadata.extra["stage"] = "backbone";
    return c;
  }

  std::string manifest() const {
    std::ifstream in(dir_ / "manifest.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  void set_manifest(const std::string& text) const { std::ofstream(dir_ / "manifest.json") << text; }

  fs::path dir_;
};

TEST(Crc32c, MatchesStandardCheckValue) {
  const std::string text = "123456789";
  EXPECT_EQ(crc32c({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}), 0xE3069283u);
  EXPECT_EQ(crc32c({}), 0u);
}

TEST_F(CheckpointTest, RoundTripsTensorsAndMetadata) {
  const auto c = sample();
  save_checkpoint(dir_, c);
  const auto loaded = load_checkpoint(dir_);
  ASSERT_EQ(loaded.records().size(), 3u);
  EXPECT_EQ(loaded.get<float>("conv1.kernel").values().size(), 3u * 3 * 3 * 3 * 4);
  EXPECT_EQ(max_abs_diff(loaded.get<float>("conv1.kernel"), c.get<float>("conv1.kernel")), 0.0f);
  EXPECT_EQ(max_abs_diff(loaded.get<double>("head.bias"), c.get<double>("head.bias")), 0.0);
  EXPECT_EQ(loaded.get<float>("empty").shape(), (Shape{0, 4}));
  EXPECT_EQ(loaded.metadata.epoch, 7);
  EXPECT_EQ(loaded.metadata.config_hash, c.metadata.config_hash);
  EXPECT_EQ(loaded.metadata.extra.at("stage"), "backbone");
  auto a = rng_from_state(loaded.metadata.rng_state);
  auto b = rng_from_state(c.metadata.rng_state);
  EXPECT_EQ(a(), b());
  EXPECT_NE(manifest().find("\"crc32c\""), std::string::npos);
}

TEST_F(CheckpointTest, DtypeAndNameErrors) {
  const auto c = sample();
  EXPECT_THROW(c.get<double>("conv1.kernel"), FormatError);
  EXPECT_THROW(c.get<float>("missing"), FormatError);
  Tensor<float> wrong({3, 3, 3, 3, 5});
  try {
    c.restore("conv1.kernel", wrong);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv1.kernel"), std::string::npos);
  }
}

TEST_F(CheckpointTest, FlippedByteFailsChecksum) {
  save_checkpoint(dir_, sample());
  {
    std::fstream blob(dir_ / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
    blob.seekg(17);
    const char byte = static_cast<char>(blob.get());
    blob.seekp(17);
    blob.put(static_cast<char>(~byte));
  }
  EXPECT_THROW(load_checkpoint(dir_), ChecksumError);
}

TEST_F(CheckpointTest, TruncatedBlobFailsChecksum) {
  save_checkpoint(dir_, sample());
  fs::resize_file(dir_ / "tensors.bin", fs::file_size(dir_ / "tensors.bin") - 3);
  EXPECT_THROW(load_checkpoint(dir_), ChecksumError);
}

TEST_F(CheckpointTest, EditedManifestShapeNamesTheTensor) {
  save_checkpoint(dir_, sample());
  std::string text = manifest();
  const auto pos = text.find("\"head.bias\"");
  ASSERT_NE(pos, std::string::npos);
  const auto shape = text.find("\"shape\"", pos);
  const auto two = text.find('2', shape);
  text[two] = '3';
  set_manifest(text);
  try {
    load_checkpoint(dir_);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos);
  }
}

TEST_F(CheckpointTest, UnknownVersionAndGarbageManifest) {
  save_checkpoint(dir_, sample());
  std::string text = manifest();
  const auto pos = text.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 19, "\"format_version\": 2");
  set_manifest(text);
  EXPECT_THROW(load_checkpoint(dir_), VersionError);
  set_manifest("{not json");
  EXPECT_THROW(load_checkpoint(dir_), FormatError);
  EXPECT_THROW(load_checkpoint(dir_ / "nowhere"), FormatError);
}

TEST(ConfigHash, IsStableAndSensitive) {
  EXPECT_EQ(config_hash("a=1"), config_hash("a=1"));
  EXPECT_NE(config_hash("a=1"), config_hash("a=2"));
  // FNV-1a 64 of the empty string.
  EXPECT_EQ(config_hash(""), "cbf29ce484222325");
}

}  // namespace
}  // namespace faster
