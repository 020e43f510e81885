#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "rcqa/checkpoint.hpp"
#include "rcqa/error.hpp"

namespace rcqa {
namespace {

Checkpoint sample() {
  Checkpoint c;
  c.kind = "test";
  c.config = {{"alpha", 0.1}, {"name", "x"}};
  Dense2 a(2, 3, {0.1, -0.0, 1e-310, std::numeric_limits<double>::max(),
                  -std::numeric_limits<double>::denorm_min(), 1.0 / 3.0});
  c.arrays.emplace_back("a", a);
  c.arrays.emplace_back("empty", Dense2(0, 4));
  c.arrays.emplace_back("b", Dense2(1, 1, 42.0));
  return c;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint c = sample();
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(back.kind, "test");
  EXPECT_EQ(back.config, c.config);
  ASSERT_EQ(back.arrays.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.arrays[i].first, c.arrays[i].first);
    const auto x = back.arrays[i].second.values();
    const auto y = c.arrays[i].second.values();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0);
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.array("b")(0, 0), 42.0);
  EXPECT_TRUE(std::signbit(back.array("a")(0, 1)));
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = serialize_checkpoint(sample());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), "RCQACKPT");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const auto header = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(header["version"], kCheckpointVersion);
  EXPECT_EQ(header["kind"], "test");
  EXPECT_EQ(bytes.size(), 16 + len + 8 * (6 + 0 + 1));
}

TEST(Checkpoint, CorruptInputs) {
  std::string bytes = serialize_checkpoint(sample());
  EXPECT_THROW(parse_checkpoint("XXXX"), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), DataError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 20)), DataError);
  EXPECT_THROW(sample().array("nope"), DataError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rcqa_ckpt_test" / "nested";
  std::filesystem::remove_all(dir.parent_path());
  save_checkpoint(dir / "x.ckpt", sample());
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "x.ckpt")),
            serialize_checkpoint(sample()));
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  std::filesystem::remove_all(dir.parent_path());
}

}  // namespace
}  // namespace rcqa
