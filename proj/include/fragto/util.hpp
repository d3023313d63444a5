#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fragto {

inline constexpr const char* kToolkitVersion = "0.1.0";

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), as used by zip/png.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// Little-endian scalar encoding shared by the binary file formats.
void put_u8(std::string& out, uint8_t v);
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f64(std::string& out, double v);

// Sequential reader over an in-memory file image. Throws std::runtime_error
// on reads past the end ("truncated file").
struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  explicit ByteReader(const std::string& b) : buf(b) {}
  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  double f64();
  void raw(void* dst, size_t n);
  size_t remaining() const { return buf.size() - pos; }
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

// Worker cap: FRAGTO_THREADS if set (>=1), else hardware concurrency.
int thread_count();

// Chunked parallel map over [0, n). Work assignment is a fixed function of n
// and the chunk count, never of timing, so disjoint-write uses are
// reproducible for any thread count.
void parallel_for(size_t n, const std::function<void(size_t begin, size_t end)>& fn);

// Nearest-rank percentile (p in (0,100]); sorts `values` in place.
double percentile_nearest_rank(std::vector<double>& values, double p);

// Shortest round-trippable decimal form (%.17g); deterministic across runs.
std::string format_double(double v);

}  // namespace fragto
