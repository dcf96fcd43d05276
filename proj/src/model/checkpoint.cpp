#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "thermo/errors.hpp"
#include "thermo/model.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace thermo::model {

namespace {

constexpr char kMagic[4] = {'T', 'H', 'C', 'K'};

template <class U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, bytes_.data() + at_, sizeof(U));
    at_ += sizeof(U);
    return value;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(at_, n);
    at_ += n;
    return s;
  }

  void floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + at_, n * sizeof(float));
    at_ += n * sizeof(float);
  }

  std::size_t offset() const { return at_; }
  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - at_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, at_);
  }
  std::string bytes_;
  std::size_t at_ = 0;
};

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = params.config.to_json();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto tensors = params.layout->tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto n : t.shape) put<std::uint64_t>(out, n);
    put<std::uint64_t>(out, t.size);
    out.append(reinterpret_cast<const char*>(params.data.data() + t.offset), t.size * sizeof(float));
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write to checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into " + path);
}

Parameters load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));

  if (r.str(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint file", 0);
  const auto version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto cfg_len = r.get<std::uint32_t>("config length");
  const auto cfg_at = r.offset();
  ModelConfig config;
  try {
    config = ModelConfig::from_json(r.str(cfg_len, "config"));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad config: ") + e.what(), cfg_at);
  }

  Parameters p{config, std::make_shared<const Layout>(config), {}};
  p.data.assign(p.layout->total(), 0.f);
  const auto count_at = r.offset();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != p.layout->tensors().size())
    throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                         std::to_string(p.layout->tensors().size()),
                     count_at);
  for (const auto& spec : p.layout->tensors()) {
    const auto name_at = r.offset();
    const auto name = r.str(r.get<std::uint32_t>("name length"), "tensor name");
    if (name != spec.name) throw ParseError("expected tensor '" + spec.name + "', found '" + name + "'", name_at);
    const auto shape_at = r.offset();
    const auto ndim = r.get<std::uint32_t>("rank");
    std::vector<std::size_t> shape(ndim);
    for (auto& n : shape) n = r.get<std::uint64_t>("shape");
    const auto size = r.get<std::uint64_t>("element count");
    if (shape != spec.shape || size != spec.size) throw ParseError("shape mismatch for tensor '" + name + "'", shape_at);
    r.floats(p.data.data() + spec.offset, spec.size, "tensor data");
  }
  if (!r.done()) throw ParseError("trailing bytes after last tensor", r.offset());
  return p;
}

Parameters load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Parameters p = load_checkpoint(path);
  ModelConfig a = p.config, b = expected;
  a.seed = b.seed = 0;
  if (!(a == b)) {
    std::ostringstream msg;
    msg << "checkpoint config " << p.config.to_json() << " does not match expected " << expected.to_json();
    throw ConfigError(msg.str());
  }
  return p;
}

}  // namespace thermo::model
