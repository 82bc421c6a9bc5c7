#include "mast/report.hpp"

#include "json.hpp"

#include <sstream>

namespace mast {

namespace {

constexpr int kCellPx = 24;
const char* kAgentColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                              "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

double cx(int c) { return (c + 0.5) * kCellPx; }
double cy(int r) { return (r + 0.5) * kCellPx; }

}  // namespace

std::string trace_header_line(const Scene& scene, const std::vector<AgentPose>& starts) {
  nlohmann::json j;
  j["scene"] = nlohmann::json::parse(scene.to_json());
  nlohmann::json js = nlohmann::json::array();
  for (const AgentPose& p : starts) js.push_back({{"r", p.cell.r}, {"c", p.cell.c}});
  j["starts"] = js;
  return j.dump();
}

std::string trajectory_svg(const std::string& trace_text) {
  std::istringstream in(trace_text);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw ReportError("trace is empty: missing scene header line");

  Scene scene;
  std::vector<std::pair<int, int>> starts;
  try {
    nlohmann::json header = nlohmann::json::parse(line);
    scene = Scene::from_json(header.at("scene").dump());
    for (const auto& s : header.at("starts"))
      starts.emplace_back(s.at("r").get<int>(), s.at("c").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed trace header: ") + e.what());
  }

  // One position list per agent, seeded with the start cell.
  std::vector<std::vector<std::pair<int, int>>> paths(starts.size());
  for (size_t a = 0; a < starts.size(); ++a) paths[a].push_back(starts[a]);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      nlohmann::json step = nlohmann::json::parse(line);
      const auto& agents = step.at("agents");
      if (agents.size() != starts.size())
        throw ReportError("trace step agent count does not match header");
      for (size_t a = 0; a < starts.size(); ++a)
        paths[a].emplace_back(agents[a].at("r").get<int>(), agents[a].at("c").get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw ReportError(std::string("malformed trace step: ") + e.what());
    }
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << scene.width * kCellPx
      << "\" height=\"" << scene.height * kCellPx << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int r = 0; r < scene.height; ++r)
    for (int c = 0; c < scene.width; ++c)
      if (scene.is_blocked(r, c))
        svg << "<rect class=\"wall\" x=\"" << c * kCellPx << "\" y=\"" << r * kCellPx
            << "\" width=\"" << kCellPx << "\" height=\"" << kCellPx << "\" fill=\"#444\"/>\n";
  svg << "<circle class=\"source\" cx=\"" << cx(scene.source.c) << "\" cy=\"" << cy(scene.source.r)
      << "\" r=\"" << kCellPx * 0.4 << "\" fill=\"gold\" stroke=\"black\"/>\n";

  for (size_t a = 0; a < paths.size(); ++a) {
    const char* color = kAgentColors[a % 8];
    svg << "<polyline class=\"agent" << a << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < paths[a].size(); ++i) {
      if (i) svg << ' ';
      svg << cx(paths[a][i].second) << ',' << cy(paths[a][i].first);
    }
    svg << "\"/>\n";
    svg << "<circle class=\"start" << a << "\" cx=\"" << cx(paths[a].front().second) << "\" cy=\""
        << cy(paths[a].front().first) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    svg << "<rect class=\"stop" << a << "\" x=\"" << cx(paths[a].back().second) - 4 << "\" y=\""
        << cy(paths[a].back().first) - 4 << "\" width=\"8\" height=\"8\" fill=\"" << color
        << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string attention_csv(const ModelConfig& cfg, const ParamMap& params,
                          const std::vector<AgentObservation>& obs) {
  AttentionDump dump;
  policy_eval(cfg, params, obs, &dump);
  std::ostringstream csv;
  csv << "layer,head,query,key,weight\n";
  csv.precision(17);
  for (const AttentionRecord& rec : dump)
    for (int q = 0; q < rec.weights.rows(); ++q)
      for (int k = 0; k < rec.weights.cols(); ++k)
        csv << rec.layer << ',' << rec.head << ',' << q << ',' << k << ',' << rec.weights.at(q, k)
            << '\n';
  return csv.str();
}

}  // namespace mast
