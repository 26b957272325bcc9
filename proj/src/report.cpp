#include "flexcoop/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace flexcoop {

namespace {

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void widen(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return lo > hi; }
};

/// Round-number tick step giving roughly `target` intervals.
double nice_step(double range, int target) {
  if (range <= 0.0) return 1.0;
  const double raw = range / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * m >= raw) return mag * m;
  }
  return mag * 10.0;
}

std::vector<double> ticks_for(const Range& r, int target) {
  std::vector<double> ticks;
  const double step = nice_step(r.hi - r.lo, target);
  double t = std::ceil(r.lo / step - 1e-9) * step;
  while (t <= r.hi + step * 1e-9) {
    ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    t += step;
  }
  return ticks;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

const char* palette(std::size_t i) {
  static const char* kColors[] = {
      "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
      "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8", "#ff9896",
      "#98df8a", "#ffbb78", "#c5b0d5", "#c49c94"};
  return kColors[i % (sizeof kColors / sizeof kColors[0])];
}

class SvgCanvas {
 public:
  SvgCanvas(const SvgOptions& opt, Range x, Range y) : opt_(opt), x_(x), y_(y) {
    pad_range(x_);
    pad_range(y_);
    left_ = 72.0;
    right_ = opt_.width_px - 24.0;
    top_ = opt_.title.empty() ? 28.0 : 44.0;
    bottom_ = opt_.height_px - 52.0;
  }

  double tx(double x) const {
    return left_ + (x - x_.lo) / (x_.hi - x_.lo) * (right_ - left_);
  }
  double ty(double y) const {
    return bottom_ - (y - y_.lo) / (y_.hi - y_.lo) * (bottom_ - top_);
  }

  void open(std::ostringstream& s) const {
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt_.width_px
      << "\" height=\"" << opt_.height_px << "\" viewBox=\"0 0 " << opt_.width_px
      << " " << opt_.height_px << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!opt_.title.empty())
      s << "<text x=\"" << px((left_ + right_) / 2) << "\" y=\"24\""
        << " text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\""
        << " fill=\"#222\">" << opt_.title << "</text>\n";
    axes(s);
  }

  void polygon(std::ostringstream& s, const std::vector<OperatingPoint>& ring,
               const char* color, bool fill, double stroke_width) const {
    if (ring.size() < 2) return;
    s << (fill ? "<polygon" : "<polyline") << " points=\"";
    for (const auto& p : ring) s << px(tx(p.p_mw)) << "," << px(ty(p.q_mvar)) << " ";
    s << "\" stroke=\"" << color << "\" stroke-width=\"" << stroke_width << "\"";
    if (fill)
      s << " fill=\"" << color << "\" fill-opacity=\"0.16\"";
    else
      s << " fill=\"none\"";
    s << "/>\n";
  }

  void marker(std::ostringstream& s, OperatingPoint p) const {
    const double cx = tx(p.p_mw), cy = ty(p.q_mvar);
    s << "<circle cx=\"" << px(cx) << "\" cy=\"" << px(cy)
      << "\" r=\"4\" fill=\"#111\"/>\n"
      << "<line x1=\"" << px(cx - 8) << "\" y1=\"" << px(cy) << "\" x2=\""
      << px(cx + 8) << "\" y2=\"" << px(cy)
      << "\" stroke=\"#111\" stroke-width=\"1\"/>\n"
      << "<line x1=\"" << px(cx) << "\" y1=\"" << px(cy - 8) << "\" x2=\""
      << px(cx) << "\" y2=\"" << px(cy + 8)
      << "\" stroke=\"#111\" stroke-width=\"1\"/>\n";
  }

  void legend(std::ostringstream& s, const std::vector<std::string>& labels) const {
    double y = top_ + 14.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double x = right_ - 130.0;
      s << "<rect x=\"" << px(x) << "\" y=\"" << px(y - 9) << "\" width=\"14\""
        << " height=\"10\" fill=\"" << palette(i) << "\" fill-opacity=\"0.6\"/>\n"
        << "<text x=\"" << px(x + 20) << "\" y=\"" << px(y)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">"
        << labels[i] << "</text>\n";
      y += 15.0;
    }
  }

  static void close(std::ostringstream& s) { s << "</svg>\n"; }

 private:
  void pad_range(Range& r) const {
    if (r.empty()) {
      r.lo = -1.0;
      r.hi = 1.0;
      return;
    }
    double span = r.hi - r.lo;
    if (span < 1e-9) span = std::max(1.0, std::abs(r.hi));
    r.lo -= 0.08 * span;
    r.hi += 0.08 * span;
  }

  void axes(std::ostringstream& s) const {
    s << "<rect x=\"" << px(left_) << "\" y=\"" << px(top_) << "\" width=\""
      << px(right_ - left_) << "\" height=\"" << px(bottom_ - top_)
      << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    for (double t : ticks_for(x_, 6)) {
      const double x = tx(t);
      s << "<line x1=\"" << px(x) << "\" y1=\"" << px(top_) << "\" x2=\"" << px(x)
        << "\" y2=\"" << px(bottom_)
        << "\" stroke=\"#ddd\" stroke-width=\"0.7\"/>\n"
        << "<text x=\"" << px(x) << "\" y=\"" << px(bottom_ + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\""
        << " fill=\"#333\">" << format_number(t) << "</text>\n";
    }
    for (double t : ticks_for(y_, 6)) {
      const double y = ty(t);
      s << "<line x1=\"" << px(left_) << "\" y1=\"" << px(y) << "\" x2=\""
        << px(right_) << "\" y2=\"" << px(y)
        << "\" stroke=\"#ddd\" stroke-width=\"0.7\"/>\n"
        << "<text x=\"" << px(left_ - 6) << "\" y=\"" << px(y + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\""
        << " fill=\"#333\">" << format_number(t) << "</text>\n";
    }
    s << "<text x=\"" << px((left_ + right_) / 2) << "\" y=\""
      << px(bottom_ + 38)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
      << " fill=\"#222\">interface P (MW)</text>\n"
      << "<text x=\"16\" y=\"" << px((top_ + bottom_) / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
      << " fill=\"#222\" transform=\"rotate(-90 16 " << px((top_ + bottom_) / 2)
      << ")\">interface Q (MVAr)</text>\n";
  }

  SvgOptions opt_;
  Range x_, y_;
  double left_ = 0, right_ = 0, top_ = 0, bottom_ = 0;
};

void widen_over_area(Range& x, Range& y, const FlexArea& area) {
  x.widen(area.initial.p_mw);
  y.widen(area.initial.q_mvar);
  for (const auto& comp : area.components)
    for (const auto& p : comp) {
      x.widen(p.p_mw);
      y.widen(p.q_mvar);
    }
  for (const auto& p : area.vertices) {
    x.widen(p.p_mw);
    y.widen(p.q_mvar);
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("failed while writing " + path);
}

}  // namespace

std::string format_number(double v) {
  if (v == 0.0) return "0";  // also normalizes -0
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(const std::string& path) : path_(path) {
  std::ofstream probe(path_, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path_ + " for writing");
}

CsvWriter::~CsvWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += csv_escape(cells[i]);
  }
  buffer_ += '\n';
}

void CsvWriter::close() {
  if (closed_) return;
  closed_ = true;
  write_text_file(path_, buffer_);
}

void write_area_svg(const std::string& path, const FlexArea& area,
                    const SvgOptions& options) {
  Range x, y;
  widen_over_area(x, y, area);
  SvgCanvas canvas(options, x, y);
  std::ostringstream s;
  canvas.open(s);
  for (std::size_t c = 0; c < area.components.size(); ++c)
    canvas.polygon(s, area.components[c], palette(c), true, 1.2);
  canvas.polygon(s, area.vertices, "#111111", false, 2.0);
  canvas.marker(s, area.initial);
  SvgCanvas::close(s);
  write_text_file(path, s.str());
}

void write_areas_svg(const std::string& path, const std::vector<FlexArea>& areas,
                     const std::vector<std::string>& labels,
                     const SvgOptions& options) {
  Range x, y;
  for (const auto& a : areas) widen_over_area(x, y, a);
  SvgCanvas canvas(options, x, y);
  std::ostringstream s;
  canvas.open(s);
  for (std::size_t i = 0; i < areas.size(); ++i)
    canvas.polygon(s, areas[i].vertices, palette(i), true, 1.4);
  if (!areas.empty()) canvas.marker(s, areas.front().initial);
  canvas.legend(s, labels);
  SvgCanvas::close(s);
  write_text_file(path, s.str());
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  nlohmann::json doc;
  doc["tool_version"] = manifest.tool_version;
  doc["subcommand"] = manifest.subcommand;
  doc["case"] = manifest.case_name;
  doc["case_fingerprint"] = manifest.case_fingerprint;
  doc["params"] = manifest.params;
  doc["outputs"] = manifest.outputs;
  doc["warnings"] = manifest.warnings;
  doc["duration_seconds"] = manifest.duration_seconds;
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace flexcoop
