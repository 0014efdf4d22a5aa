#include "ekg/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "ekg/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace ekg {

namespace {

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>)
    return 0;
  else
    return 1;
}

const char* dtype_name(std::uint8_t code) { return code == 0 ? "f32" : "f64"; }

template <typename V>
void write_raw(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::istream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw FormatError(std::string("truncated while reading ") + what);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_raw(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const auto len = read_raw<std::uint32_t>(is, what);
  std::string s(len, '\0');
  if (len) {
    is.read(s.data(), len);
    if (!is) throw FormatError(std::string("truncated while reading ") + what);
  }
  return s;
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  if (!t.defined()) throw StateError("write_tensor: undefined tensor");
  os.write("EKGT", 4);
  write_raw(os, dtype_code<T>());
  write_raw(os, static_cast<std::uint8_t>(t.rank()));
  for (i64 e : t.shape()) write_raw(os, static_cast<std::uint64_t>(e));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * t.numel()));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EKGT", 4) != 0)
    throw FormatError("read_tensor: bad magic, not an EKGT tensor");
  const auto code = read_raw<std::uint8_t>(is, "dtype");
  if (code > 1) throw FormatError("read_tensor: unknown dtype code");
  if (code != dtype_code<T>())
    throw FormatError(std::string("read_tensor: stored dtype ") + dtype_name(code) +
                      " does not match requested " + dtype_name(dtype_code<T>()));
  const auto rank = read_raw<std::uint8_t>(is, "rank");
  if (rank > 8) throw FormatError("read_tensor: implausible rank");
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto e = read_raw<std::uint64_t>(is, "extent");
    if (e == 0 || e > (1ull << 40)) throw FormatError("read_tensor: bad extent");
    shape.push_back(static_cast<i64>(e));
  }
  if (shape.empty()) shape = {1};
  Tensor<T> out(shape);
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(sizeof(T) * out.numel()));
  if (!is) throw FormatError("read_tensor: value block truncated");
  out.check_finite("read_tensor");
  return out;
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_tensor(os, t);
  if (!os) throw FormatError("write failed for '" + path + "'");
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_tensor<T>(is);
}

namespace {

std::string config_text(const std::map<std::string, std::string>& config) {
  std::string s;
  for (const auto& [k, v] : config) s += k + "=" + v + "\n";
  return s;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t nl = text.find('\n', at);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(at, nl - at);
    at = nl + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("checkpoint config: malformed line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void check_magic(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EKGC", 4) != 0)
    throw FormatError("'" + path + "': bad magic, not an EKGC checkpoint");
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::map<std::string, std::string>& config,
                     const std::vector<ParamEntry<T>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write("EKGC", 4);
  write_string(os, config_text(config));
  write_raw(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    write_string(os, e.name);
    write_tensor(os, e.tensor);
  }
  if (!os) throw FormatError("write failed for '" + path + "'");
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  check_magic(is, path);
  CheckpointHeader h;
  h.config = parse_config_text(read_string(is, "config block"));
  return h;
}

template <typename T>
CheckpointHeader load_checkpoint(const std::string& path,
                                 std::vector<ParamEntry<T>>& entries) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  check_magic(is, path);
  CheckpointHeader h;
  h.config = parse_config_text(read_string(is, "config block"));
  const auto count = read_raw<std::uint32_t>(is, "section count");

  std::map<std::string, Tensor<T>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(is, "section name");
    if (!sections.emplace(name, read_tensor<T>(is)).second)
      throw FormatError("'" + path + "': duplicate section '" + name + "'");
  }

  std::set<std::string> consumed;
  for (auto& e : entries) {
    auto it = sections.find(e.name);
    if (it == sections.end())
      throw FormatError("'" + path + "': missing section '" + e.name + "'");
    if (it->second.shape() != e.tensor.shape())
      throw FormatError("'" + path + "': section '" + e.name + "' has shape " +
                        shape_str(it->second.shape()) + ", model expects " +
                        shape_str(e.tensor.shape()));
    e.tensor.vec() = it->second.vec();
    consumed.insert(e.name);
  }
  for (const auto& [name, tensor] : sections)
    if (!consumed.count(name))
      throw FormatError("'" + path + "': unexpected section '" + name + "'");
  return h;
}

#define EKG_INSTANTIATE_SERIALIZE(T)                                                      \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);                         \
  template Tensor<T> read_tensor<T>(std::istream&);                                       \
  template void save_tensor<T>(const std::string&, const Tensor<T>&);                     \
  template Tensor<T> load_tensor<T>(const std::string&);                                  \
  template void save_checkpoint<T>(const std::string&,                                    \
                                   const std::map<std::string, std::string>&,             \
                                   const std::vector<ParamEntry<T>>&);                    \
  template CheckpointHeader load_checkpoint<T>(const std::string&,                        \
                                               std::vector<ParamEntry<T>>&);

EKG_INSTANTIATE_SERIALIZE(float)
EKG_INSTANTIATE_SERIALIZE(double)
#undef EKG_INSTANTIATE_SERIALIZE

}  // namespace ekg
