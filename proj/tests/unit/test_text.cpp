#include <gtest/gtest.h>

#include "gpcrbert/error.hpp"
#include "gpcrbert/text.hpp"
#include "helpers.hpp"

using namespace gpcrbert;

TEST(Text, TrimStripsBothEnds) {
  EXPECT_EQ(text::trim("  a b \t\r\n"), "a b");
  EXPECT_EQ(text::trim(""), "");
  EXPECT_EQ(text::trim(" \t "), "");
}

TEST(Text, SplitKeepsEmptyFields) {
  EXPECT_EQ(text::split("a,,b,", ','), (std::vector<std::string>{"a", "", "b", ""}));
  EXPECT_EQ(text::split("", ','), (std::vector<std::string>{""}));
}

TEST(Text, SplitJoinRoundTrip) {
  testutil::for_all(200, 1, [](std::mt19937_64& rng, std::size_t) {
    std::vector<std::string> fields(testutil::uniform(rng, 1, 8));
    std::string joined;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      fields[i] = testutil::random_sequence(rng, testutil::uniform(rng, 0, 5));
      if (i) joined += ',';
      joined += fields[i];
    }
    EXPECT_EQ(text::split(joined, ','), fields);
  });
}

TEST(Text, StrictNumbers) {
  EXPECT_EQ(text::parse_size(" 42 ", "n"), 42u);
  EXPECT_EQ(text::parse_int("-7", "n"), -7);
  EXPECT_DOUBLE_EQ(text::parse_double("1e-4", "x"), 1e-4);
  EXPECT_THROW(text::parse_size("-1", "n"), ParseError);
  EXPECT_THROW(text::parse_int("12abc", "n"), ParseError);
  EXPECT_THROW(text::parse_int("", "n"), ParseError);
  EXPECT_THROW(text::parse_double("0.1x", "x"), ParseError);
  EXPECT_THROW(text::parse_double("", "x"), ParseError);
}

TEST(Text, Booleans) {
  for (auto s : {"true", "1", "yes", "on"}) EXPECT_TRUE(text::parse_bool(s, "b"));
  for (auto s : {"false", "0", "no", "off"}) EXPECT_FALSE(text::parse_bool(s, "b"));
  EXPECT_THROW(text::parse_bool("maybe", "b"), ParseError);
}

TEST(Text, KeyValues) {
  auto kv = text::parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n", "cfg");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv["a"], "1");
  EXPECT_EQ(kv["b"], "two");
  EXPECT_THROW(text::parse_key_values("a = 1\na = 2\n", "cfg"), ParseError);
  EXPECT_THROW(text::parse_key_values("novalue\n", "cfg"), ParseError);
  EXPECT_THROW(text::parse_key_values(" = 3\n", "cfg"), ParseError);
}

TEST(Text, ReadKeyValuesFile) {
  testutil::TempDir dir;
  testutil::spit(dir / "c.cfg", "lr = 0.5\n");
  EXPECT_EQ(text::read_key_values(dir / "c.cfg").at("lr"), "0.5");
  EXPECT_THROW(text::read_key_values(dir / "missing.cfg"), Error);
}
