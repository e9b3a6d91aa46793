#include "mpnet/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpnet/errors.hpp"

namespace mpnet {

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvWriter::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size())
    throw Error("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                std::to_string(header_.size()));
  rows_.push_back(std::move(cells));
}

std::string CsvWriter::to_string() const {
  std::ostringstream os;
  for (size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << header_[i];
  os << "\n";
  for (const auto& row : rows_) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  return os.str();
}

void CsvWriter::save(const std::string& path) const { write_text_file(path, to_string()); }

SvgWriter::SvgWriter(double width, double height) : width_(width), height_(height) {}

void SvgWriter::rect(double x, double y, double w, double h, const std::string& fill,
                     double opacity) {
  std::ostringstream os;
  os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"" << fill << "\" fill-opacity=\"" << opacity << "\"/>";
  elements_.push_back(os.str());
}

void SvgWriter::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                     double width, double opacity) {
  std::ostringstream os;
  os << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
     << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\" stroke-opacity=\""
     << opacity << "\"/>";
  elements_.push_back(os.str());
}

void SvgWriter::polyline(const std::vector<std::pair<double, double>>& pts,
                         const std::string& stroke, double width) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width
     << "\" points=\"";
  for (const auto& [x, y] : pts) os << x << "," << y << " ";
  os << "\"/>";
  elements_.push_back(os.str());
}

void SvgWriter::circle(double cx, double cy, double r, const std::string& fill, double opacity) {
  std::ostringstream os;
  os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\"" << fill
     << "\" fill-opacity=\"" << opacity << "\"/>";
  elements_.push_back(os.str());
}

void SvgWriter::text(double x, double y, const std::string& s, double size) {
  std::ostringstream os;
  os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
     << "\" font-family=\"sans-serif\">" << s << "</text>";
  elements_.push_back(os.str());
}

std::string SvgWriter::to_string() const {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
     << height_ << "\" viewBox=\"0 0 " << width_ << " " << height_ << "\">\n";
  for (const auto& e : elements_) os << "  " << e << "\n";
  os << "</svg>\n";
  return os.str();
}

void SvgWriter::save(const std::string& path) const { write_text_file(path, to_string()); }

void write_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw Error("write_ppm: image must be (3, H, W), got " + shape_string(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_ppm: cannot open " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(c * h + y) * w + x], 0.0f, 1.0f);
        os.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
      }
  if (!os) throw Error("write_ppm: write failed for " + path);
}

namespace {
void write_bytes_le(std::ostream& os, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint64_t read_bytes_le(std::istream& is, int bytes) {
  uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw Error("unexpected end of file");
    v |= static_cast<uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace

void write_u32(std::ostream& os, uint32_t v) { write_bytes_le(os, v, 4); }
void write_u64(std::ostream& os, uint64_t v) { write_bytes_le(os, v, 8); }
void write_i64(std::ostream& os, int64_t v) { write_bytes_le(os, static_cast<uint64_t>(v), 8); }
void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  write_bytes_le(os, bits, 4);
}
uint32_t read_u32(std::istream& is) { return static_cast<uint32_t>(read_bytes_le(is, 4)); }
uint64_t read_u64(std::istream& is) { return read_bytes_le(is, 8); }
int64_t read_i64(std::istream& is) { return static_cast<int64_t>(read_bytes_le(is, 8)); }
float read_f32(std::istream& is) {
  const uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

void write_f32_array(std::ostream& os, const float* data, int64_t count) {
  for (int64_t i = 0; i < count; ++i) write_f32(os, data[i]);
}

void read_f32_array(std::istream& is, float* data, int64_t count) {
  for (int64_t i = 0; i < count; ++i) data[i] = read_f32(is);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << content;
  if (!os) throw Error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace mpnet
