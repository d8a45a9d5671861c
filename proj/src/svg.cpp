#include "gpcrbert/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "gpcrbert/error.hpp"

namespace gpcrbert::svg {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// White at 0, dark blue at 1.
std::string shade(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto ch = [&](double full) { return static_cast<int>(std::lround(255.0 + (full - 255.0) * t)); };
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(8), ch(48), ch(107));
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

void write_heatmap(std::ostream& out, const std::vector<model::AttentionMatrix>& heads,
                   const HeatmapOptions& options) {
  if (heads.empty()) throw InvalidArgument("write_heatmap: no matrices");
  const std::size_t n = heads.front().size;
  const std::size_t cols = std::max<std::size_t>(1, std::min(options.columns, heads.size()));
  const std::size_t rows = (heads.size() + cols - 1) / cols;
  const double panel = static_cast<double>(n) * options.cell;
  const double top = options.title.empty() ? 0.0 : 20.0;
  const double label = 14.0;
  const double width = static_cast<double>(cols) * (panel + options.gap) + options.gap;
  const double height = top + static_cast<double>(rows) * (panel + label + options.gap) + options.gap;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" shape-rendering=\"crispEdges\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" fill=\"#ffffff\"/>\n";
  if (!options.title.empty()) {
    out << "<text x=\"" << num(options.gap) << "\" y=\"15\" font-family=\"sans-serif\" font-size=\"13\">"
        << escape(options.title) << "</text>\n";
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& m = heads[h];
    if (m.size != n) throw ShapeError("write_heatmap: heads of different sizes");
    const double x0 = options.gap + static_cast<double>(h % cols) * (panel + options.gap);
    const double y0 = top + options.gap + static_cast<double>(h / cols) * (panel + label + options.gap);
    out << "<g id=\"head" << h + 1 << "\">\n";
    out << "<text x=\"" << num(x0) << "\" y=\"" << num(y0 + 10) << "\" font-family=\"sans-serif\" font-size=\"10\">head "
        << h + 1 << "</text>\n";
    const double peak = m.weights.empty() ? 0.0 : static_cast<double>(*std::max_element(m.weights.begin(), m.weights.end()));
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t k = 0; k < n; ++k) {
        const double w = static_cast<double>(m.at(q, k));
        out << "<rect class=\"cell\" x=\"" << num(x0 + static_cast<double>(k) * options.cell) << "\" y=\""
            << num(y0 + label + static_cast<double>(q) * options.cell) << "\" width=\"" << num(options.cell)
            << "\" height=\"" << num(options.cell) << "\" fill=\"" << shade(peak > 0.0 ? w / peak : 0.0)
            << "\"/>\n";
      }
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

void write_scatter(std::ostream& out, const tsne::Matrix& coords, const std::vector<std::string>& labels,
                   const std::string& title) {
  if (coords.cols < 2 || labels.size() != coords.rows) {
    throw ShapeError("write_scatter: need 2-D coordinates and one label per point");
  }
  const double size = 480.0, margin = 30.0, legend = 140.0;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (coords.rows > 0) {
    xmin = xmax = coords(0, 0);
    ymin = ymax = coords(0, 1);
    for (std::size_t i = 0; i < coords.rows; ++i) {
      xmin = std::min(xmin, coords(i, 0));
      xmax = std::max(xmax, coords(i, 0));
      ymin = std::min(ymin, coords(i, 1));
      ymax = std::max(ymax, coords(i, 1));
    }
  }
  const double xs = xmax > xmin ? (size - 2 * margin) / (xmax - xmin) : 1.0;
  const double ys = ymax > ymin ? (size - 2 * margin) / (ymax - ymin) : 1.0;
  std::map<std::string, std::size_t> colour;
  for (const auto& l : labels) colour.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [l, c] : colour) c = next++ % std::size(kPalette);

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size + legend) << "\" height=\"" << num(size)
      << "\">\n<rect x=\"0\" y=\"0\" width=\"" << num(size + legend) << "\" height=\"" << num(size)
      << "\" fill=\"#ffffff\"/>\n";
  if (!title.empty()) {
    out << "<text x=\"" << num(margin) << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(title)
        << "</text>\n";
  }
  for (std::size_t i = 0; i < coords.rows; ++i) {
    const double x = margin + (coords(i, 0) - xmin) * xs;
    const double y = size - margin - (coords(i, 1) - ymin) * ys;
    out << "<circle class=\"point\" cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3.5\" fill=\""
        << kPalette[colour[labels[i]]] << "\"><title>" << escape(labels[i]) << "</title></circle>\n";
  }
  double ly = margin;
  for (const auto& [l, c] : colour) {
    out << "<circle cx=\"" << num(size + 10) << "\" cy=\"" << num(ly) << "\" r=\"4\" fill=\"" << kPalette[c]
        << "\"/>\n<text x=\"" << num(size + 20) << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(l) << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
}

}  // namespace gpcrbert::svg
