#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mpnet/tensor.hpp"

namespace mpnet {

std::string format_float(double v);

/// One CSV file: fixed header, rows of preformatted cells.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string to_string() const;
  void save(const std::string& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Bare-bones SVG assembly: rectangles, lines, polylines, text.
class SvgWriter {
 public:
  SvgWriter(double width, double height);
  void rect(double x, double y, double w, double h, const std::string& fill,
            double opacity = 1.0);
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, double opacity = 1.0);
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                double width = 1.0);
  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0);
  void text(double x, double y, const std::string& s, double size = 10.0);
  std::string to_string() const;
  void save(const std::string& path) const;

 private:
  double width_, height_;
  std::vector<std::string> elements_;
};

/// Writes a (3, H, W) image in [0, 1] as binary PPM (P6).
void write_ppm(const std::string& path, const Tensor<float>& image);

// Little-endian scalar IO, portable across hosts.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_i64(std::ostream& os, int64_t v);
void write_f32(std::ostream& os, float v);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
int64_t read_i64(std::istream& is);
float read_f32(std::istream& is);
void write_f32_array(std::ostream& os, const float* data, int64_t count);
void read_f32_array(std::istream& is, float* data, int64_t count);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace mpnet
