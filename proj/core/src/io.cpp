#include "bipool/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace bipool {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("truncated while reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(std::string("truncated while reading ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kTensorMagic[4] = {'B', 'T', 'N', 'S'};
constexpr char kCheckpointMagic[4] = {'B', 'C', 'K', 'P'};

}  // namespace

void tensor_write(const Tensor& t, std::ostream& os) {
  os.write(kTensorMagic, 4);
  put_u32(os, 1);
  const unsigned char code = static_cast<unsigned char>(t.dtype());
  os.write(reinterpret_cast<const char*>(&code), 1);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (size_t d : t.dims()) put_u32(os, static_cast<uint32_t>(d));
  if (t.dtype() == Dtype::F64) {
    for (size_t i = 0; i < t.size(); ++i)
      put_u64(os, std::bit_cast<uint64_t>(t[i]));
  } else {
    for (size_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      put_u32(os, std::bit_cast<uint32_t>(f));
    }
  }
  if (!os) throw IoError("tensor write failed");
}

Tensor tensor_read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw FormatError("bad tensor magic (expected BTNS)");
  const uint32_t version = get_u32(is, "tensor version");
  if (version != 1) throw FormatError("unsupported tensor version " + std::to_string(version));
  unsigned char code;
  if (!is.read(reinterpret_cast<char*>(&code), 1))
    throw FormatError("truncated while reading dtype");
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
  const Dtype dtype = static_cast<Dtype>(code);
  const uint32_t rank = get_u32(is, "tensor rank");
  if (rank == 0) throw FormatError("tensor rank must be >= 1");
  std::vector<size_t> dims(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    dims[i] = get_u32(is, "tensor extent");
    if (dims[i] == 0) throw FormatError("tensor extent must be >= 1");
  }
  Tensor t(dims, dtype);
  if (dtype == Dtype::F64) {
    for (size_t i = 0; i < t.size(); ++i)
      t[i] = std::bit_cast<double>(get_u64(is, "tensor payload"));
  } else {
    for (size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(std::bit_cast<float>(get_u32(is, "tensor payload")));
  }
  return t;
}

void tensor_save(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  tensor_write(t, os);
}

Tensor tensor_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  Tensor t = tensor_read(is);
  is.peek();
  if (!is.eof()) throw FormatError("trailing bytes after tensor payload in " + path.string());
  return t;
}

void checkpoint_save(const std::map<std::string, Tensor>& entries,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  std::vector<uint64_t> offsets;
  offsets.reserve(entries.size());
  for (const auto& [name, tensor] : entries) {
    offsets.push_back(static_cast<uint64_t>(os.tellp()));
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    tensor_write(tensor, os);
  }
  for (uint64_t off : offsets) put_u64(os, off);
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

std::map<std::string, Tensor> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic (expected BCKP): " + path.string());
  const uint32_t version = get_u32(is, "checkpoint version");
  if (version != 1)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = get_u32(is, "entry count");
  std::map<std::string, Tensor> entries;
  std::vector<uint64_t> offsets;
  offsets.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    offsets.push_back(static_cast<uint64_t>(is.tellg()));
    const uint32_t name_len = get_u32(is, "entry name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated entry name");
    if (entries.count(name)) throw FormatError("duplicate checkpoint entry: " + name);
    entries.emplace(std::move(name), tensor_read(is));
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint64_t off = get_u64(is, "offset table");
    if (off != offsets[i])
      throw FormatError("checkpoint offset table mismatch at entry " + std::to_string(i));
  }
  is.peek();
  if (!is.eof()) throw FormatError("trailing bytes after checkpoint table");
  return entries;
}

namespace {

// Skips PPM whitespace and '#' comments.
void skip_ppm_space(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      while (c != '\n' && c != EOF) c = is.get();
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      is.get();
    } else {
      return;
    }
  }
}

size_t read_ppm_int(std::istream& is, const char* what) {
  skip_ppm_space(is);
  size_t v = 0;
  bool any = false;
  for (;;) {
    int c = is.peek();
    if (c < '0' || c > '9') break;
    v = v * 10 + static_cast<size_t>(is.get() - '0');
    any = true;
  }
  if (!any) throw FormatError(std::string("malformed PPM header: missing ") + what);
  return v;
}

}  // namespace

Tensor ppm_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char p, six;
  is.get(p);
  is.get(six);
  if (!is || p != 'P' || six != '6') {
    if (is && p == 'P' && six == '3')
      throw FormatError("ASCII PPM (P3) unsupported; use binary P6: " + path.string());
    throw FormatError("not a binary PPM (P6): " + path.string());
  }
  const size_t w = read_ppm_int(is, "width");
  const size_t h = read_ppm_int(is, "height");
  const size_t maxval = read_ppm_int(is, "maxval");
  if (maxval != 255)
    throw FormatError("PPM maxval must be 255, got " + std::to_string(maxval));
  is.get();  // the single whitespace after maxval
  if (w == 0 || h == 0) throw FormatError("PPM with zero extent: " + path.string());
  std::vector<unsigned char> raw(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError("truncated PPM payload: " + path.string());
  Tensor img({h, w, 3});
  for (size_t i = 0; i < raw.size(); ++i)
    img[i] = static_cast<double>(raw[i]) / 255.0;
  return img;
}

void ppm_save(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("ppm_save: image must be HxWx3");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(image.size());
  for (size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("PPM write failed: " + path.string());
}

Manifest manifest_load(const std::filesystem::path& path, size_t expected_classes) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected `path<TAB>label`");
    Sample s;
    s.path = line.substr(0, tab);
    try {
      s.label = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    if (s.label < 0)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": negative label");
    if (expected_classes && static_cast<size_t>(s.label) >= expected_classes)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": label " +
                        std::to_string(s.label) + " out of range [0, " +
                        std::to_string(expected_classes) + ")");
    if (!seen.insert(s.path).second)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": duplicate path " + s.path);
    max_label = std::max(max_label, s.label);
    m.samples.push_back(std::move(s));
  }
  m.num_classes = expected_classes ? expected_classes
                                   : static_cast<size_t>(max_label + 1);
  if (!expected_classes && !m.samples.empty()) {
    std::vector<bool> present(m.num_classes, false);
    for (const Sample& s : m.samples) present[static_cast<size_t>(s.label)] = true;
    for (size_t c = 0; c < m.num_classes; ++c)
      if (!present[c])
        throw FormatError(path.string() + ": labels not dense, class " +
                          std::to_string(c) + " missing");
  }
  return m;
}

void manifest_save(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  for (const Sample& s : m.samples) os << s.path << "\t" << s.label << "\n";
  if (!os) throw IoError("manifest write failed: " + path.string());
}

}  // namespace bipool
