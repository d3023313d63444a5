#include "fragto/gridfile.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fragto/util.hpp"

namespace fragto {

static constexpr char kGridMagic[5] = {'M', 'F', 'L', 'D', '1'};
static constexpr uint32_t kGridVersion = 1;

void write_grid(const std::string& path, const Field2D& field) {
  if (field.rows <= 0 || field.cols <= 0 ||
      field.data.size() != static_cast<size_t>(field.rows) * field.cols)
    throw std::invalid_argument("write_grid: malformed field");
  std::string buf;
  buf.reserve(25 + field.data.size() * 8 + 4);
  buf.append(kGridMagic, 5);
  put_u32(buf, kGridVersion);
  put_u64(buf, static_cast<uint64_t>(field.rows));
  put_u64(buf, static_cast<uint64_t>(field.cols));
  const size_t body = buf.size();
  for (double v : field.data) put_f64(buf, v);
  put_u32(buf, crc32(reinterpret_cast<const uint8_t*>(buf.data()) + body, buf.size() - body));
  write_file_bytes(path, buf);
}

Field2D read_grid(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  ByteReader r(buf);
  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kGridMagic, 5) != 0)
    throw std::runtime_error("read_grid: bad magic in " + path);
  if (r.u32() != kGridVersion) throw std::runtime_error("read_grid: unsupported version");
  const uint64_t rows = r.u64(), cols = r.u64();
  if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
    throw std::runtime_error("read_grid: implausible dimensions");
  const size_t n = static_cast<size_t>(rows) * cols;
  if (r.remaining() < n * 8 + 4) throw std::runtime_error("read_grid: truncated file " + path);
  const size_t body = r.pos;
  Field2D f(static_cast<int>(rows), static_cast<int>(cols));
  for (auto& v : f.data) v = r.f64();
  const uint32_t stored = r.u32();
  if (crc32(reinterpret_cast<const uint8_t*>(buf.data()) + body, n * 8) != stored)
    throw std::runtime_error("read_grid: checksum mismatch in " + path);
  return f;
}

static void write_pgm(const std::string& path, int rows, int cols,
                      const std::vector<uint8_t>& px) {
  std::string buf = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(px.data()), px.size());
  write_file_bytes(path, buf);
}

static uint8_t to_byte(double unit) {
  if (unit <= 0.0) return 0;
  if (unit >= 1.0) return 255;
  return static_cast<uint8_t>(std::lround(unit * 255.0));
}

void render_density_pgm(const std::string& path, const Field2D& density) {
  std::vector<uint8_t> px(density.data.size());
  for (size_t i = 0; i < px.size(); ++i) {
    double x = density.data[i];
    x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    px[i] = to_byte(1.0 - x);
  }
  write_pgm(path, density.rows, density.cols, px);
}

void render_energy_pgm(const std::string& path, const Field2D& energy) {
  std::vector<double> plot(energy.data.size());
  double lo = 0.0, hi = 0.0;
  for (size_t i = 0; i < plot.size(); ++i) {
    plot[i] = std::log(energy.data[i] + 1e-8);
    if (i == 0) {
      lo = hi = plot[i];
    } else {
      lo = std::min(lo, plot[i]);
      hi = std::max(hi, plot[i]);
    }
  }
  std::vector<uint8_t> px(plot.size(), 0);
  if (hi > lo)
    for (size_t i = 0; i < plot.size(); ++i) px[i] = to_byte((plot[i] - lo) / (hi - lo));
  write_pgm(path, energy.rows, energy.cols, px);
  write_key_values(path + ".txt",
                   {{"plot_min", format_double(lo)}, {"plot_max", format_double(hi)}});
}

void write_key_values(const std::string& path, const KeyValues& kv) {
  std::string buf;
  for (const auto& [k, v] : kv) buf += k + "=" + v + "\n";
  write_file_bytes(path, buf);
}

KeyValues read_key_values(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  KeyValues kv;
  std::istringstream in(buf);
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const size_t eq = line.find('=', start);
    if (eq == std::string::npos)
      throw std::runtime_error("read_key_values: malformed line '" + line + "' in " + path);
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    if (key.empty())
      throw std::runtime_error("read_key_values: empty key in " + path);
    std::string value = line.substr(eq + 1);
    const size_t vstart = value.find_first_not_of(" \t");
    value.erase(0, vstart == std::string::npos ? value.size() : vstart);
    kv.emplace_back(key, std::move(value));
  }
  return kv;
}

const std::string* find_key(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

}  // namespace fragto
