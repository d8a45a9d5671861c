#include <gtest/gtest.h>

#include <sstream>

#include "gpcrbert/error.hpp"
#include "gpcrbert/svg.hpp"

using namespace gpcrbert;

namespace {

std::size_t count(const std::string& s, const std::string& what) {
  std::size_t n = 0;
  for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Svg, HeatmapCellsAndShading) {
  model::AttentionMatrix a{2, {0.0f, 1.0f, 0.5f, 0.5f}};
  model::AttentionMatrix b{2, {0.25f, 0.75f, 1.0f, 0.0f}};
  std::ostringstream out;
  svg::write_heatmap(out, {a, b}, {.title = "x<y"});
  const auto s = out.str();
  EXPECT_EQ(count(s, "class=\"cell\""), 8u);
  EXPECT_EQ(count(s, "<g id=\"head"), 2u);
  EXPECT_NE(s.find("x&lt;y"), std::string::npos);
  // Peak maps to the darkest shade, zero to white.
  EXPECT_NE(s.find("fill=\"#08306b\""), std::string::npos);
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
}

TEST(Svg, HeatmapRejectsBadInput) {
  std::ostringstream out;
  EXPECT_THROW(svg::write_heatmap(out, {}), InvalidArgument);
  model::AttentionMatrix a{1, {1.0f}}, b{2, {1, 0, 0, 1}};
  EXPECT_THROW(svg::write_heatmap(out, {a, b}), ShapeError);
}

TEST(Svg, ScatterPointsAndLegend) {
  tsne::Matrix c(3, 2);
  c.data = {0, 0, 1, 1, 2, 0};
  std::ostringstream out;
  svg::write_scatter(out, c, {"a", "b", "a"}, "t");
  const auto s = out.str();
  EXPECT_EQ(count(s, "class=\"point\""), 3u);
  EXPECT_EQ(count(s, "<title>a</title>"), 2u);
  EXPECT_EQ(count(s, "font-size=\"11\""), 2u);
  EXPECT_THROW(svg::write_scatter(out, c, {"a"}), ShapeError);
}
