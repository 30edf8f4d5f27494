#pragma once

// Artifact writers: CSV tables, JSON documents, log-log SVG plots, and a stable
// content hash for configuration fingerprints.

#include "optomo/asymptotics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo::io {

using Json = nlohmann::json;

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Fingerprint of a configuration: hash of its canonical (key-sorted, compact) dump.
inline std::string fingerprint(const Json& config) { return content_hash(config.dump()); }

/// Shortest round-trip decimal representation.
inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const Json& doc) { write_text(path, doc.dump(2) + "\n"); }

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

struct MetricRow {
  double epsilon;
  std::string metric;
  double value;
};

/// CSV with the fixed header epsilon,metric,value.
inline std::string metric_csv(const std::vector<MetricRow>& rows) {
  std::string s = "epsilon,metric,value\n";
  for (const auto& r : rows) s += format_number(r.epsilon) + "," + r.metric + "," + format_number(r.value) + "\n";
  return s;
}

inline Json to_json(const RateStudy& s) {
  Json pts = Json::array();
  for (const auto& p : s.points) pts.push_back({{"epsilon", p.epsilon}, {"value", p.value}});
  return {{"metric", s.metric},   {"slope", s.slope},       {"intercept", s.intercept},
          {"r2", s.r2},           {"n_points", s.n_points}, {"excluded", s.excluded},
          {"fingerprint", s.fingerprint}, {"points", pts}};
}

/// Log-log plot of one or more rate studies with their fitted lines, drawn with
/// plain <path> elements.
inline std::string loglog_svg(const std::vector<RateStudy>& studies, const std::string& title) {
  const double width = 640, height = 440, left = 70, right = 170, top = 40, bottom = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : studies)
    for (const auto& p : s.points)
      if (p.value > 0.0 && p.epsilon > 0.0) {
        xmin = std::min(xmin, std::log10(p.epsilon));
        xmax = std::max(xmax, std::log10(p.epsilon));
        ymin = std::min(ymin, std::log10(p.value));
        ymax = std::max(ymax, std::log10(p.value));
      }
  if (xmin > xmax) xmin = -2, xmax = 0, ymin = -2, ymax = 0;
  xmin = std::floor(xmin * 10) / 10 - 0.05;
  xmax = std::ceil(xmax * 10) / 10 + 0.05;
  ymin = std::floor(ymin) ;
  ymax = std::ceil(ymax);
  if (ymax - ymin < 1) ymax = ymin + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double lx) { return left + (lx - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double ly) { return top + (ymax - ly) / (ymax - ymin) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
  os << "<path d=\"M" << left << " " << top << " L" << left << " " << top + ph << " L" << left + pw << " "
     << top + ph << "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int d = static_cast<int>(ymin); d <= static_cast<int>(ymax); ++d) {
    os << "<path d=\"M" << left << " " << py(d) << " L" << left + pw << " " << py(d)
       << "\" stroke=\"#dddddd\" fill=\"none\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << py(d) + 4 << "\" text-anchor=\"end\">1e" << d << "</text>\n";
  }
  for (double e : {0.05, 0.1, 0.2, 0.4, 1.0}) {
    const double lx = std::log10(e);
    if (lx < xmin || lx > xmax) continue;
    os << "<path d=\"M" << px(lx) << " " << top << " L" << px(lx) << " " << top + ph
       << "\" stroke=\"#eeeeee\" fill=\"none\"/>\n";
    os << "<text x=\"" << px(lx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << e << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">epsilon</text>\n";
  for (std::size_t i = 0; i < studies.size(); ++i) {
    const auto& s = studies[i];
    const char* c = colors[i % 7];
    std::ostringstream data;
    bool first = true;
    for (const auto& p : s.points) {
      if (!(p.value > 0.0)) continue;
      data << (first ? "M" : " L") << px(std::log10(p.epsilon)) << " " << py(std::log10(p.value));
      first = false;
    }
    if (!first) os << "<path d=\"" << data.str() << "\" stroke=\"" << c << "\" fill=\"none\" stroke-width=\"1.5\"/>\n";
    for (const auto& p : s.points) {
      if (!(p.value > 0.0)) continue;
      const double x = px(std::log10(p.epsilon)), y = py(std::log10(p.value));
      os << "<path d=\"M" << x - 3 << " " << y << " L" << x << " " << y - 3 << " L" << x + 3 << " " << y << " L" << x
         << " " << y + 3 << " Z\" fill=\"" << c << "\"/>\n";
    }
    if (s.n_points >= 2) {
      auto fit = [&](double lx) { return (s.intercept + s.slope * lx * std::log(10.0)) / std::log(10.0); };
      os << "<path d=\"M" << px(xmin) << " " << py(fit(xmin)) << " L" << px(xmax) << " " << py(fit(xmax))
         << "\" stroke=\"" << c << "\" stroke-dasharray=\"4 3\" fill=\"none\"/>\n";
    }
    const double ly = top + 16 + 18.0 * static_cast<double>(i);
    os << "<path d=\"M" << left + pw + 10 << " " << ly - 4 << " L" << left + pw + 30 << " " << ly - 4
       << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly << "\">" << s.metric << " (slope "
       << std::setprecision(3) << s.slope << std::setprecision(6) << ")</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace optomo::io
