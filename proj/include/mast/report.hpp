#ifndef MAST_REPORT_HPP
#define MAST_REPORT_HPP

#include "mast/env.hpp"
#include "mast/model.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace mast {

struct ReportError : std::runtime_error {
  explicit ReportError(const std::string& msg) : std::runtime_error(msg) {}
};

/// First line of a plottable trace: the scene plus start poses. The
/// following lines are the per-step records from trace_line().
std::string trace_header_line(const Scene& scene, const std::vector<AgentPose>& starts);

/// Renders a trace (header line + step lines) as a standalone SVG:
/// walls, source marker, one polyline per agent with start/stop markers.
/// An empty trajectory yields a scene-only image.
std::string trajectory_svg(const std::string& trace_text);

/// CSV of every attention map of a forward pass on one observation
/// batch: layer,head,query,key,weight. Rows for one query sum to 1;
/// masked positions appear with weight exactly 0.
std::string attention_csv(const ModelConfig& cfg, const ParamMap& params,
                          const std::vector<AgentObservation>& obs);

}  // namespace mast

#endif  // MAST_REPORT_HPP
