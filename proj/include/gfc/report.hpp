#pragma once

// Run artifacts: JSON reports, versioned CSV tables and small native SVG plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfc/error.hpp"
#include "gfc/stats.hpp"

namespace gfc {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest representation that round-trips a double.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV table whose first line is "# schema: gfc.<name>.v<version>".
class CsvTable {
 public:
  CsvTable(std::string name, std::vector<std::string> columns, int version = 1)
      : name_(std::move(name)), columns_(std::move(columns)), version_(version) {}

  template <class... T>
  void row(const T&... v) {
    std::vector<std::string> r;
    (r.push_back(cell(v)), ...);
    add(std::move(r));
  }

  void add(std::vector<std::string> r) {
    if (r.size() != columns_.size()) throw InvalidArgument("CSV row width does not match header of " + name_);
    rows_.push_back(std::move(r));
  }

  std::string schema() const { return "gfc." + name_ + ".v" + std::to_string(version_); }

  std::string str() const {
    std::ostringstream o;
    o << "# schema: " << schema() << "\n";
    for (std::size_t i = 0; i < columns_.size(); ++i) o << (i ? "," : "") << columns_[i];
    o << "\n";
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << r[i];
      o << "\n";
    }
    return o.str();
  }

  void write(const std::filesystem::path& path) const { write_text(path, str()); }
  std::size_t size() const { return rows_.size(); }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(bool b) { return b ? "1" : "0"; }
  static std::string cell(double v) { return fmt_double(v); }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) { return std::to_string(v); }

  std::string name_;
  std::vector<std::string> columns_;
  int version_;
  std::vector<std::vector<std::string>> rows_;
};

// ----------------------------------------------------------------------------
// SVG
// ----------------------------------------------------------------------------

namespace svg {

struct Series {
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool line = false;
  std::vector<double> err_lo, err_hi;  // optional vertical error bars (absolute y values)
};

struct Plot {
  std::string title, xlabel, ylabel;
  bool logx = false, logy = false;
  std::vector<Series> series;
};

inline std::string escape(const std::string& t) {
  std::string out;
  for (char c : t) {
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

inline std::string render(const Plot& p, int width = 520, int height = 400) {
  const double ml = 60, mr = 20, mt = 30, mb = 50;
  auto tx = [&](double v) { return p.logx ? std::log10(v) : v; };
  auto ty = [&](double v) { return p.logy ? std::log10(v) : v; };
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : p.series) {
    for (double v : s.x) if (std::isfinite(tx(v))) { x0 = std::min(x0, tx(v)); x1 = std::max(x1, tx(v)); }
    for (double v : s.y) if (std::isfinite(ty(v))) { y0 = std::min(y0, ty(v)); y1 = std::max(y1, ty(v)); }
    for (double v : s.err_lo) if (std::isfinite(ty(v))) y0 = std::min(y0, ty(v));
    for (double v : s.err_hi) if (std::isfinite(ty(v))) y1 = std::max(y1, ty(v));
  }
  if (!(x1 > x0)) { x0 -= 1; x1 += 1; }
  if (!(y1 > y0)) { y0 -= 1; y1 += 1; }
  const double padx = 0.05 * (x1 - x0), pady = 0.05 * (y1 - y0);
  x0 -= padx; x1 += padx; y0 -= pady; y1 += pady;
  auto px = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * (width - ml - mr); };
  auto py = [&](double v) { return height - mb - (ty(v) - y0) / (y1 - y0) * (height - mt - mb); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << width - ml - mr << "\" height=\"" << height - mt - mb
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4, fy = y0 + (y1 - y0) * k / 4;
    const double vx = p.logx ? std::pow(10.0, fx) : fx, vy = p.logy ? std::pow(10.0, fy) : fy;
    char bx[32], by[32];
    std::snprintf(bx, sizeof bx, "%.3g", vx);
    std::snprintf(by, sizeof by, "%.3g", vy);
    o << "<text x=\"" << px(vx) << "\" y=\"" << height - mb + 15 << "\" text-anchor=\"middle\">" << bx << "</text>\n";
    o << "<text x=\"" << ml - 5 << "\" y=\"" << py(vy) + 4 << "\" text-anchor=\"end\">" << by << "</text>\n";
  }
  o << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(p.title) << "</text>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">" << escape(p.xlabel) << "</text>\n";
  o << "<text x=\"14\" y=\"" << height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << height / 2 << ")\">"
    << escape(p.ylabel) << "</text>\n";
  for (const auto& s : p.series) {
    if (s.line && s.x.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
      o << "\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\"" << s.color << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.err_lo.size() && i < s.err_hi.size() && i < s.x.size(); ++i)
      o << "<line x1=\"" << px(s.x[i]) << "\" x2=\"" << px(s.x[i]) << "\" y1=\"" << py(s.err_lo[i]) << "\" y2=\""
        << py(s.err_hi[i]) << "\" stroke=\"" << s.color << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Normal QQ plot of a sorted standardized sample.
inline std::string qq_plot(const std::vector<double>& sorted, const std::string& title) {
  Plot p;
  p.title = title;
  p.xlabel = "normal quantile";
  p.ylabel = "sample quantile";
  Series pts, diag;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    pts.x.push_back(normal_quantile((static_cast<double>(i) + 0.5) / n));
    pts.y.push_back(sorted[i]);
  }
  if (!pts.x.empty()) {
    diag.x = {pts.x.front(), pts.x.back()};
    diag.y = diag.x;
  }
  diag.line = true;
  diag.color = "#d62728";
  p.series = {pts, diag};
  return render(p);
}

/// Log-log scatter with a fitted line y = exp(intercept) x^slope.
inline std::string loglog_plot(const std::vector<double>& x, const std::vector<double>& y, double slope, double intercept,
                               const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  Plot p;
  p.title = title;
  p.xlabel = xlabel;
  p.ylabel = ylabel;
  p.logx = p.logy = true;
  Series pts, fit;
  pts.x = x;
  pts.y = y;
  for (double v : x) {
    fit.x.push_back(v);
    fit.y.push_back(std::exp(intercept) * std::pow(v, slope));
  }
  fit.line = true;
  fit.color = "#d62728";
  p.series = {pts, fit};
  return render(p);
}

/// Heatmap of values on scattered (x, y) positions, colored on a log scale.
inline std::string heatmap(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& v,
                           const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  double lo = 1e300, hi = -1e300;
  for (double w : v)
    if (w > 0) { lo = std::min(lo, std::log10(w)); hi = std::max(hi, std::log10(w)); }
  if (!(hi > lo)) hi = lo + 1;
  Plot p;
  p.title = title;
  p.xlabel = xlabel;
  p.ylabel = ylabel;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = v[i] > 0 ? (std::log10(v[i]) - lo) / (hi - lo) : 0.0;
    char col[16];
    std::snprintf(col, sizeof col, "#%02x%02x%02x", static_cast<int>(255 * t), 40, static_cast<int>(255 * (1 - t)));
    Series s;
    s.x = {x[i]};
    s.y = {y[i]};
    s.color = col;
    p.series.push_back(std::move(s));
  }
  return render(p);
}

}  // namespace svg
}  // namespace gfc
