#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "cobra/io.hpp"
#include "cobra/report.hpp"

namespace cobra {

namespace {

using nlohmann::json;

struct Series {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
  bool line = true;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

std::string render_svg(const Chart& chart) {
  constexpr double W = 720, H = 440, L = 70, R = 190, T = 40, B = 56;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series) {
    for (double x : s.xs) x0 = std::min(x0, x), x1 = std::max(x1, x);
    for (double y : s.ys) y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(chart.title)
    << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
      << "\" stroke=\"#eee\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\">" << escape(chart.x_label)
    << "</text>\n";
  o << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(chart.y_label) << "</text>\n";
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const Series& s = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.line && s.xs.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < s.xs.size(); ++i) o << px(s.xs[i]) << ',' << py(s.ys[i]) << ' ';
      o << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      o << "<circle cx=\"" << px(s.xs[i]) << "\" cy=\"" << py(s.ys[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    o << "<rect x=\"" << W - R + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color
      << "\"/>\n";
    o << "<text x=\"" << W - R + 28 << "\" y=\"" << ly << "\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<double> doubles(const json& j) { return j.get<std::vector<double>>(); }

}  // namespace

std::vector<std::filesystem::path> emit_plots(const RunRecord& record, const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& stem, const Chart& chart) {
    const auto path = out_dir / (file_safe(stem) + ".svg");
    write_text_file(path, render_svg(chart));
    written.push_back(path);
  };
  auto section = [&](const char* name) -> const json& {
    static const json kEmpty = json::array();
    return record.results.contains(name) ? record.results.at(name) : kEmpty;
  };

  // Control curves grouped by (method, paradigm), one series per model.
  std::map<std::pair<std::string, std::string>, Chart> curves;
  for (const auto& c : section("curves")) {
    const std::string method = c.at("method"), paradigm = c.at("paradigm");
    Chart& chart = curves[{method, paradigm}];
    chart.title = method + " on " + paradigm;
    chart.x_label = "coefficient";
    chart.y_label = "CBI";
    Series s{c.at("model"), {}, {}};
    for (const auto& p : c.at("curve").at("points")) {
      s.xs.push_back(p.at("coefficient"));
      s.ys.push_back(p.at("cbi"));
    }
    chart.series.push_back(std::move(s));
  }
  for (const auto& [key, chart] : curves) emit("curve_" + key.first + "_" + key.second, chart);

  std::size_t index = 0;
  for (const auto& g : section("gaps")) {
    Chart chart{"spread across models on " + g.at("target_paradigm").get<std::string>(), "CBI on " +
                g.at("calibration_paradigm").get<std::string>(), "spread of target CBI", {}};
    const std::vector<double> grid = doubles(g.at("gap").at("cbi_grid"));
    for (const auto& [condition, spreads] : g.at("gap").at("spreads").items()) {
      Series s{condition, {}, {}};
      for (std::size_t i = 0; i < grid.size(); ++i) {
        if (spreads[i].is_null()) continue;
        s.xs.push_back(grid[i]);
        s.ys.push_back(spreads[i]);
      }
      chart.series.push_back(std::move(s));
    }
    emit("gap_" + std::to_string(index++), chart);
  }

  index = 0;
  for (const auto& c : section("contagion")) {
    Chart chart{"dose response (" + c.at("model").get<std::string>() + ", " + c.at("preset").get<std::string>() + ")",
                "negative posts in feed", "sentiment of generated post", {}};
    std::map<std::string, Series> by_agent;
    std::vector<std::string> order;
    for (const auto& cell : c.at("cells")) {
      if (!cell.at("ok").get<bool>()) continue;
      const std::string agent = cell.at("agent");
      if (!by_agent.count(agent)) {
        order.push_back(agent);
        by_agent[agent].name = agent;
      }
      by_agent[agent].xs.push_back(cell.at("dose"));
      by_agent[agent].ys.push_back(cell.at("mean"));
    }
    for (const auto& a : order) chart.series.push_back(by_agent[a]);
    emit("dose_" + std::to_string(index++), chart);
  }

  for (const auto& t : section("transfers")) {
    const json& r = t.at("report");
    const std::string src = t.at("source"), dst = t.at("target");
    Chart chart{"transfer " + src + " -> " + dst + " (" + t.at("model").get<std::string>() + ")", "CBI on " + src,
                "CBI on " + dst, {}};
    chart.series.push_back({t.at("method"), doubles(r.at("source_cbi")), doubles(r.at("target_cbi")), false});
    emit("transfer_" + t.at("model").get<std::string>() + "_" + t.at("method").get<std::string>() + "_" + src + "_" +
             dst,
         chart);
  }
  return written;
}

}  // namespace cobra
