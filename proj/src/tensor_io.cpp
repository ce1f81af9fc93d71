#include "timet/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>

namespace timet {

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    s += (shape.size() == 1 || i + 1 < shape.size()) ? "," : "";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

struct Header {
  Dtype dtype;
  std::vector<std::size_t> shape;
};

Header parse_header(const std::string& text, const std::string& where) {
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  Header h{};
  if (!std::regex_search(text, m, descr_re)) throw FormatError(where + ": header missing descr");
  const std::string descr = m[1];
  if (descr == "<f4") {
    h.dtype = Dtype::kFloat32;
  } else if (descr == "<f8") {
    h.dtype = Dtype::kFloat64;
  } else {
    throw FormatError(where + ": unsupported dtype '" + descr + "' (need <f4 or <f8)");
  }
  if (!std::regex_search(text, m, order_re)) {
    throw FormatError(where + ": header missing fortran_order");
  }
  if (m[1] == "True") throw FormatError(where + ": Fortran-ordered arrays are not supported");
  if (!std::regex_search(text, m, shape_re)) throw FormatError(where + ": header missing shape");
  std::stringstream dims(m[1].str());
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    const auto first = tok.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    try {
      h.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
    } catch (const std::exception&) {
      throw FormatError(where + ": bad shape entry '" + tok + "'");
    }
  }
  if (h.shape.size() != 2 && h.shape.size() != 3) {
    throw FormatError(where + ": rank " + std::to_string(h.shape.size()) +
                      " not supported (need 2 or 3)");
  }
  return h;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor load_tensor(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(where + ": cannot open tensor file");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw FormatError(where + ": not an npy file");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw FormatError(where + ": truncated header");
    for (int i = 0; i < 4; ++i) {
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    offset = 12;
  } else {
    throw FormatError(where + ": unsupported npy version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw FormatError(where + ": truncated header");
  const Header h = parse_header(bytes.substr(offset, header_len), where);
  offset += header_len;

  Tensor t;
  t.shape = h.shape;
  t.dtype = h.dtype;
  const std::size_t n = t.numel();
  const std::size_t width = h.dtype == Dtype::kFloat32 ? 4 : 8;
  if (bytes.size() - offset != n * width) {
    throw FormatError(where + ": payload has " + std::to_string(bytes.size() - offset) +
                      " bytes, shape " + shape_string(h.shape) + " needs " +
                      std::to_string(n * width));
  }
  t.values.resize(n);
  const char* p = bytes.data() + offset;
  if (h.dtype == Dtype::kFloat32) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      t.values[i] = v;
    }
  } else {
    std::memcpy(t.values.data(), p, 8 * n);
  }
  return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  if (t.shape.empty() || t.numel() == 0) throw std::invalid_argument("refusing to save empty tensor");
  if (t.values.size() != t.numel()) {
    throw std::invalid_argument("tensor has " + std::to_string(t.values.size()) +
                                " values for shape " + shape_string(t.shape));
  }
  for (double v : t.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("refusing to save non-finite tensor");
  }

  std::string header = std::string("{'descr': '") +
                       (t.dtype == Dtype::kFloat32 ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': " + shape_string(t.shape) + ", }";
  // Pad so that magic + version + length + header is a multiple of 64.
  const std::size_t unpadded = kMagicLen + 2 + 2 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw std::invalid_argument("tensor header too long");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const char len[2] = {static_cast<char>(header.size() & 0xFF),
                       static_cast<char>((header.size() >> 8) & 0xFF)};
  out.write(len, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (t.dtype == Dtype::kFloat32) {
    std::vector<float> buf(t.values.begin(), t.values.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Tensor matrix_to_tensor(const Matrix& m, Dtype dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.values.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      t.values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return t;
}

Matrix tensor_to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw std::invalid_argument("expected a rank-2 tensor");
  const auto rows = static_cast<Eigen::Index>(t.shape[0]);
  const auto cols = static_cast<Eigen::Index>(t.shape[1]);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = t.values[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

FeatureMap load_feature_map(const std::filesystem::path& path, GridShape grid) {
  const Tensor t = load_tensor(path);
  FeatureMap f;
  f.grid = grid;
  if (t.shape.size() == 3) {
    // [rows, cols, D] layout flattens to the same row-major patch order.
    if (t.shape[0] != grid.rows || t.shape[1] != grid.cols) {
      throw std::invalid_argument(path.string() + ": spatial shape does not match manifest grid");
    }
    Tensor flat = t;
    flat.shape = {t.shape[0] * t.shape[1], t.shape[2]};
    f.data = tensor_to_matrix(flat);
  } else {
    f.data = tensor_to_matrix(t);
  }
  f.validate();
  return f;
}

SegMask load_mask(const std::filesystem::path& path, int ignore_label) {
  const Tensor t = load_tensor(path);
  if (t.shape.size() != 2) throw FormatError(path.string() + ": mask must be rank 2");
  SegMask m;
  m.rows = t.shape[0];
  m.cols = t.shape[1];
  m.ignore_label = ignore_label;
  m.labels.reserve(t.values.size());
  for (double v : t.values) {
    if (v != std::floor(v)) throw FormatError(path.string() + ": mask entry is not integral");
    m.labels.push_back(static_cast<int>(v));
  }
  return m;
}

void save_mask(const SegMask& mask, const std::filesystem::path& path) {
  Tensor t;
  t.shape = {mask.rows, mask.cols};
  t.values.assign(mask.labels.begin(), mask.labels.end());
  save_tensor(t, path);
}

}  // namespace timet
