#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flexcoop/flexarea.hpp"

namespace flexcoop {

/// Shortest decimal form with up to 9 significant digits. All CSV and table
/// output goes through this so files are compact yet round-trip the
/// quantities of interest.
std::string format_number(double v);

/// RFC-4180-style quoting; applied automatically by CsvWriter.
std::string csv_escape(const std::string& cell);

class CsvWriter {
 public:
  /// Opens (truncates) the file; throws on failure.
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();

  void row(const std::vector<std::string>& cells);
  /// Flushes and reports any pending I/O error; the destructor closes
  /// silently for writers that were not closed explicitly.
  void close();

 private:
  std::string path_;
  std::string buffer_;
  bool closed_ = false;
};

struct SvgOptions {
  int width_px = 720;
  int height_px = 600;
  std::string title;
};

/// Standalone SVG of a flexibility area: per-component filled polygons, the
/// envelope outline, the initial operating point, axes with round-number
/// ticks.
void write_area_svg(const std::string& path, const FlexArea& area,
                    const SvgOptions& options = {});

/// Like write_area_svg, but overlays several areas on shared axes (e.g. the
/// areas of every coalition).
void write_areas_svg(const std::string& path, const std::vector<FlexArea>& areas,
                     const std::vector<std::string>& labels,
                     const SvgOptions& options = {});

/// What a CLI run did, written as manifest.json next to the outputs so any
/// result file can be traced back to its parameters.
struct RunManifest {
  std::string tool_version;
  std::string subcommand;
  std::string case_name;
  std::string case_fingerprint;
  std::map<std::string, std::string> params;
  std::vector<std::string> outputs;  // file names created by the run
  std::vector<std::string> warnings;
  double duration_seconds = 0.0;
};

void write_manifest(const std::string& path, const RunManifest& manifest);

}  // namespace flexcoop
