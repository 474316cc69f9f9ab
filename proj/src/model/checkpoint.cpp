#include "cotmisr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cotmisr/errors.hpp"

namespace cotmisr {

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kMaxExtent = 1ULL << 32;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out_.append(buf, sizeof(U));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void put_raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string source) : in_(std::move(bytes)), source_(std::move(source)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, in_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(source_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated file");
  }
  std::string in_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put_tensor(Writer& w, const std::string& name, const Shape& shape, const std::vector<float>& values) {
  w.put_string(name);
  w.put(static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) w.put(static_cast<std::uint64_t>(e));
  w.put_raw(values.data(), values.size() * sizeof(float));
}

std::pair<std::string, Tensor<float>> get_tensor(Reader& r) {
  std::string name = r.get_string();
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) r.fail("tensor '" + name + "' has implausible rank");
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& e : shape) {
    const auto v = r.get<std::uint64_t>();
    if (v > kMaxExtent) r.fail("tensor '" + name + "' has implausible extent");
    e = static_cast<std::size_t>(v);
    numel *= v;
    if (numel > kMaxExtent) r.fail("tensor '" + name + "' is too large");
  }
  std::vector<float> data(static_cast<std::size_t>(numel));
  r.get_raw(data.data(), data.size() * sizeof(float));
  return {std::move(name), Tensor<float>(shape, std::move(data))};
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CotConfig& cfg, const ModelParams<T>& params) {
  Writer w;
  w.put_raw("COTM", 4);
  w.put(kVersion);
  w.put_string(to_text(cfg));
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    const auto d = e.tensor.data();
    std::vector<float> values(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) values[i] = static_cast<float>(d[i]);
    put_tensor(w, e.name, e.tensor.shape(), values);
  }
  write_file(path, w.bytes());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path), path.string());
  char magic[4];
  r.get_raw(magic, 4);
  if (std::memcmp(magic, "COTM", 4) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));

  Checkpoint<T> ck;
  try {
    ck.config = cot_config_from_text(r.get_string());
    ck.config.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid stored config: ") + e.what());
  }
  Rng layout_rng(0);
  const ModelParams<T> layout = init_params<T>(ck.config, layout_rng);
  const auto count = r.get<std::uint32_t>();
  if (count != layout.size()) r.fail("parameter count does not match the stored config");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = get_tensor(r);
    const auto& expected = layout.entries()[i];
    if (name != expected.name) r.fail("unexpected parameter '" + name + "', wanted '" + expected.name + "'");
    if (tensor.shape() != expected.tensor.shape()) r.fail("parameter '" + name + "' has the wrong shape");
    ck.params.add(name, expected.group, tensor.template cast<T>());
  }
  if (!r.done()) r.fail("trailing bytes after the last tensor");
  return ck;
}

void write_arrays(const std::filesystem::path& path, const char magic[4], const std::string& header,
                  const NamedArrays& arrays) {
  Writer w;
  w.put_raw(magic, 4);
  w.put(kVersion);
  w.put_string(header);
  w.put(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    const auto d = t.data();
    put_tensor(w, name, t.shape(), std::vector<float>(d.begin(), d.end()));
  }
  write_file(path, w.bytes());
}

NamedArrays read_arrays(const std::filesystem::path& path, const char magic[4], std::string& header) {
  Reader r(read_file(path), path.string());
  char got[4];
  r.get_raw(got, 4);
  if (std::memcmp(got, magic, 4) != 0) r.fail("bad magic");
  if (r.get<std::uint16_t>() != kVersion) r.fail("unsupported version");
  header = r.get_string();
  const auto count = r.get<std::uint32_t>();
  NamedArrays arrays;
  for (std::uint32_t i = 0; i < count; ++i) arrays.push_back(get_tensor(r));
  if (!r.done()) r.fail("trailing bytes");
  return arrays;
}

template void save_checkpoint(const std::filesystem::path&, const CotConfig&, const ModelParams<float>&);
template void save_checkpoint(const std::filesystem::path&, const CotConfig&, const ModelParams<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace cotmisr
