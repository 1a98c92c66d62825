#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoview/errors.hpp"

// Minimal SVG line charts for the loss and policy-probability trajectories.

namespace autoview {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace plotdetail {

inline std::string color_for(size_t i, size_t n) {
  // evenly spaced hues, fixed saturation/value
  const double h = 360.0 * static_cast<double>(i) / static_cast<double>(std::max<size_t>(n, 1));
  const double s = 0.65, v = 0.85;
  const double c = v * s;
  const double hh = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hh < 1) r = c, g = x;
  else if (hh < 2) r = x, g = c;
  else if (hh < 3) g = c, b = x;
  else if (hh < 4) g = x, b = c;
  else if (hh < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>((r + m) * 255),
                static_cast<int>((g + m) * 255), static_cast<int>((b + m) * 255));
  return buf;
}

}  // namespace plotdetail

/// Render a multi-series line chart; one <polyline> per series.
inline void write_svg_chart(const std::vector<PlotSeries>& series, const std::string& title,
                            const std::string& path) {
  const double W = 860, H = 520;
  const double ml = 70, mr = 180, mt = 40, mb = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto X = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
  auto Y = [&](double y) { return mt + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::ofstream out(path);
  if (!out) throw IoError("plot: cannot write '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"24\" font-size=\"16\" font-family=\"sans-serif\">" << title
      << "</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (mt + ph)
      << "\" stroke=\"#333\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << (mt + ph) << "\" x2=\"" << (ml + pw) << "\" y2=\""
      << (mt + ph) << "\" stroke=\"#333\"/>\n";
  char buf[64];
  for (int i = 0; i <= 4; ++i) {
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof(buf), "%.3g", fy);
    out << "<text x=\"" << (ml - 8) << "\" y=\"" << (Y(fy) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">" << buf
        << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << Y(fy) << "\" x2=\"" << (ml + pw) << "\" y2=\""
        << Y(fy) << "\" stroke=\"#ddd\"/>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    std::snprintf(buf, sizeof(buf), "%.4g", fx);
    out << "<text x=\"" << X(fx) << "\" y=\"" << (mt + ph + 18)
        << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" << buf
        << "</text>\n";
  }
  // series
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string color = plotdetail::color_for(si, series.size());
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", X(s.x[i]), Y(s.y[i]));
      out << buf;
    }
    out << "\"/>\n";
    const double ly = mt + 16.0 * static_cast<double>(si);
    out << "<line x1=\"" << (ml + pw + 10) << "\" y1=\"" << ly << "\" x2=\"" << (ml + pw + 30)
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << (ml + pw + 36) << "\" y=\"" << (ly + 4)
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

/// metrics.jsonl -> loss / h1 / h_reg curves.
inline void plot_loss_curves(const std::string& metrics_path, const std::string& out_path) {
  std::ifstream in(metrics_path);
  if (!in) throw IoError("plot: cannot open '" + metrics_path + "'");
  PlotSeries loss{"loss", {}, {}}, h1{"h1", {}, {}}, reg{"h_reg", {}, {}};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("plot: bad metrics row: " + std::string(e.what()));
    }
    const double step = rec.at("step").get<double>();
    loss.x.push_back(step);
    loss.y.push_back(rec.at("loss").get<double>());
    h1.x.push_back(step);
    h1.y.push_back(rec.at("h1").get<double>());
    reg.x.push_back(step);
    reg.y.push_back(rec.at("h_reg").get<double>());
  }
  if (loss.x.empty()) throw ConfigError("plot: no metrics rows in '" + metrics_path + "'");
  write_svg_chart({loss, h1, reg}, "training loss", out_path);
}

/// policy_trajectory.csv -> one curve per operation.
inline void plot_policy_trajectory(const std::string& csv_path, const std::string& out_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("plot: cannot open '" + csv_path + "'");
  std::string header;
  if (!std::getline(in, header)) throw IoError("plot: empty trajectory file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  if (cols.size() < 2 || cols[0] != "step")
    throw ConfigError("plot: trajectory header must start with 'step'");
  std::vector<PlotSeries> series(cols.size() - 1);
  for (size_t i = 1; i < cols.size(); ++i) series[i - 1].label = cols[i];
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    const double step = std::stod(tok);
    size_t i = 0;
    while (std::getline(ss, tok, ',') && i < series.size()) {
      series[i].x.push_back(step);
      series[i].y.push_back(std::stod(tok));
      ++i;
    }
  }
  write_svg_chart(series, "operation sampling probabilities", out_path);
}

}  // namespace autoview
