#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bipool/tensor.hpp"

namespace bipool {

// Tensor file ("BTNS"): magic, u32 LE version = 1, u8 dtype code
// (0 = f32, 1 = f64), u32 LE rank, u32 LE extents, then the payload as
// little-endian row-major scalars. Round trips are bit-exact.
void tensor_write(const Tensor& t, std::ostream& os);
Tensor tensor_read(std::istream& is);
void tensor_save(const Tensor& t, const std::filesystem::path& path);
Tensor tensor_load(const std::filesystem::path& path);

// Checkpoint ("BCKP"): magic, u32 LE version = 1, u32 LE entry count, then
// per entry a u32 LE name length, the UTF-8 name, and an embedded tensor
// file; a table of u64 LE entry offsets trails the entries.
void checkpoint_save(const std::map<std::string, Tensor>& entries,
                     const std::filesystem::path& path);
std::map<std::string, Tensor> checkpoint_load(const std::filesystem::path& path);

// Binary PPM (P6, maxval 255). Loaded scalars are scaled to [0,1]; saving
// clamps to [0,1] and rounds to the nearest 8-bit level.
Tensor ppm_load(const std::filesystem::path& path);
void ppm_save(const Tensor& image, const std::filesystem::path& path);

/// One manifest record: image path relative to the manifest root + label.
struct Sample {
  std::string path;
  int label = 0;
};

struct Manifest {
  std::vector<Sample> samples;
  size_t num_classes = 0;
};

/// Parses `relative/path<TAB>label` lines. Rejects duplicate paths and
/// out-of-range labels with line numbers; labels must be dense in [0, K).
/// expected_classes = 0 infers K from the data.
Manifest manifest_load(const std::filesystem::path& path, size_t expected_classes = 0);
void manifest_save(const Manifest& m, const std::filesystem::path& path);

}  // namespace bipool
