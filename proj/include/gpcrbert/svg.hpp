#pragma once

// Standalone SVG plots: attention heatmaps and labelled scatter plots.

#include <iosfwd>
#include <string>
#include <vector>

#include "gpcrbert/model.hpp"
#include "gpcrbert/tsne.hpp"

namespace gpcrbert::svg {

struct HeatmapOptions {
  double cell = 2.0;      // pixels per cell
  double gap = 12.0;      // pixels between panels
  std::size_t columns = 4;
  std::string title;
};

// One panel per head, one <rect class="cell"> per matrix entry. Intensity is
// the weight over the panel maximum, so zero weights render pure white.
void write_heatmap(std::ostream& out, const std::vector<model::AttentionMatrix>& heads,
                   const HeatmapOptions& options = {});

// Points coloured by label, with a legend.
void write_scatter(std::ostream& out, const tsne::Matrix& coords, const std::vector<std::string>& labels,
                   const std::string& title = {});

}  // namespace gpcrbert::svg
