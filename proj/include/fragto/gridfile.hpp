#pragma once

#include <map>
#include <string>
#include <vector>

#include "fragto/field.hpp"

namespace fragto {

// Binary 2D field container: magic "MFLD1", u32 version, u64 rows, u64 cols,
// row-major little-endian f64 payload, CRC32 of the payload. Bit-exact roundtrip.
void write_grid(const std::string& path, const Field2D& field);
Field2D read_grid(const std::string& path);

// Binary 8-bit portable graymap (P5). Densities map 0 -> white (255), 1 -> black (0).
void render_density_pgm(const std::string& path, const Field2D& density);
// Energy fields are plotted as log(U + 1e-8) linearly rescaled to [0,255];
// the rescale bounds are written to "<path>.txt" (keys plot_min / plot_max).
void render_energy_pgm(const std::string& path, const Field2D& energy);

// Ordered key=value text files ('#' starts a comment; blank lines ignored).
// Used for run manifests and dataset indices; values hold %.17g reals verbatim.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
void write_key_values(const std::string& path, const KeyValues& kv);
KeyValues read_key_values(const std::string& path);
// Lookup helper: returns nullptr when the key is absent.
const std::string* find_key(const KeyValues& kv, const std::string& key);

}  // namespace fragto
