#pragma once

// Explanation export: one JSON record per line, and a static HTML rendering
// with token backgrounds shaded by score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smat/core/error.hpp"

namespace smat {

struct ExplanationRecord {
  std::vector<std::string> tokens;
  std::vector<double> scores;
  double predicted_label = 0.0;
  std::optional<double> teacher_label;
  std::optional<double> gold_label;
  std::optional<std::vector<std::uint8_t>> gold_mask;
};

inline void check_record(const ExplanationRecord& r) {
  if (r.tokens.size() != r.scores.size()) {
    throw ShapeError("explanation has " + std::to_string(r.scores.size()) + " scores for " +
                     std::to_string(r.tokens.size()) + " tokens");
  }
  if (r.gold_mask && r.gold_mask->size() != r.tokens.size()) throw ShapeError("gold mask length differs from tokens");
}

inline nlohmann::json to_json(const ExplanationRecord& r) {
  check_record(r);
  nlohmann::json j = {{"tokens", r.tokens}, {"scores", r.scores}, {"predicted_label", r.predicted_label}};
  if (r.teacher_label) j["teacher_label"] = *r.teacher_label;
  if (r.gold_label) j["gold_label"] = *r.gold_label;
  if (r.gold_mask) j["gold_mask"] = *r.gold_mask;
  return j;
}

inline ExplanationRecord record_from_json(const nlohmann::json& j) {
  ExplanationRecord r;
  try {
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.predicted_label = j.at("predicted_label").get<double>();
    if (j.contains("teacher_label")) r.teacher_label = j.at("teacher_label").get<double>();
    if (j.contains("gold_label")) r.gold_label = j.at("gold_label").get<double>();
    if (j.contains("gold_mask")) r.gold_mask = j.at("gold_mask").get<std::vector<std::uint8_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad explanation record: ") + e.what());
  }
  check_record(r);
  return r;
}

inline void export_explanations(const std::vector<ExplanationRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void export_explanations(const std::vector<ExplanationRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  export_explanations(records, out);
}

inline std::vector<ExplanationRecord> load_explanations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<ExplanationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

enum class ColorScheme { single, diverging };

namespace html_detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

inline std::string label(double v) {
  return v == std::floor(v) ? std::to_string(static_cast<long long>(v)) : fmt(v, 4);
}

}  // namespace html_detail

/// Per-token opacities in [0, 1]: |score| / max |score| within the record.
inline std::vector<double> token_intensities(const std::vector<double>& scores) {
  double m = 0.0;
  for (double s : scores) m = std::max(m, std::abs(s));
  std::vector<double> out(scores.size(), 0.0);
  if (m > 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::abs(scores[i]) / m;
  return out;
}

/// Self-contained page: inline styles only, no scripts or external resources.
inline std::string render_html_report(const std::vector<ExplanationRecord>& records,
                                      ColorScheme scheme = ColorScheme::single, const std::string& title = "Saliency") {
  using html_detail::escape;
  using html_detail::fmt;
  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << escape(title) << "</title>\n"
    << "<style>body{font-family:monospace;margin:2em}.ex{margin:1em 0;padding:.5em;border-bottom:1px solid #ccc}"
       ".tok{padding:2px 3px;margin:1px;border-radius:3px;display:inline-block}"
       ".gold{text-decoration:underline}.meta{color:#555;font-size:90%}</style></head><body>\n"
    << "<h1>" << escape(title) << "</h1>\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    check_record(r);
    const auto alpha = token_intensities(r.scores);
    h << "<div class=\"ex\" data-index=\"" << i << "\"><div class=\"meta\">#" << i
      << " predicted=" << html_detail::label(r.predicted_label);
    if (r.teacher_label) h << " teacher=" << html_detail::label(*r.teacher_label);
    if (r.gold_label) h << " gold=" << html_detail::label(*r.gold_label);
    h << "</div>\n";
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const bool neg = scheme == ColorScheme::diverging && r.scores[t] < 0;
      const char* rgb = neg ? "33,102,172" : "214,39,40";
      const bool gold = r.gold_mask && (*r.gold_mask)[t];
      h << "<span class=\"tok" << (gold ? " gold" : "") << "\" title=\"" << fmt(r.scores[t], 4)
        << "\" style=\"background:rgba(" << rgb << "," << fmt(alpha[t]) << ")\">" << escape(r.tokens[t])
        << "</span>";
    }
    h << "\n</div>\n";
  }
  h << "</body></html>\n";
  return h.str();
}

inline void render_html_report(const std::vector<ExplanationRecord>& records, const std::string& path,
                               ColorScheme scheme = ColorScheme::single) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << render_html_report(records, scheme);
}

}  // namespace smat
