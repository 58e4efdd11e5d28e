#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "handfit/train.hpp"

namespace handfit {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put<std::int64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }

  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (s_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint is truncated or corrupt (while reading ") + what + ")");
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

std::pair<std::string, Tensor> get_tensor(Reader& r) {
  const auto name_len = r.get<std::uint32_t>("tensor name length");
  if (name_len > (1u << 16)) throw CheckpointError("checkpoint is corrupt (tensor name too long)");
  std::string name = r.bytes(name_len, "tensor name");
  const auto rank = r.get<std::uint32_t>("tensor rank");
  if (rank > 8) throw CheckpointError("checkpoint is corrupt (tensor " + name + " has rank " + std::to_string(rank) + ")");
  Shape shape;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.get<std::int64_t>("tensor shape");
    if (d < 0 || d > (1 << 24)) throw CheckpointError("checkpoint is corrupt (tensor " + name + " has a bad extent)");
    shape.push_back(static_cast<int>(d));
    n *= static_cast<std::size_t>(d);
  }
  const std::string raw = r.bytes(n * sizeof(double), "tensor data");
  Tensor t(shape);
  std::memcpy(t.data(), raw.data(), raw.size());
  return {std::move(name), std::move(t)};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header = {{"config", to_json(ck.config)}, {"step", ck.step}, {"rng_state", ck.rng_state},
                           {"adam_count", ck.optimizer.count}};
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  const std::size_t n = ck.params.items().size() + ck.optimizer.m.size() + ck.optimizer.v.size();
  put<std::uint64_t>(out, n);
  for (const auto& [k, t] : ck.params.items()) put_tensor(out, "param/" + k, t);
  for (const auto& [k, t] : ck.optimizer.m) put_tensor(out, "adam_m/" + k, t);
  for (const auto& [k, t] : ck.optimizer.v) put_tensor(out, "adam_v/" + k, t);
  return out;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const ModelConfig* expected) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a handfit checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  const auto hlen = r.get<std::uint64_t>("header length");
  if (hlen > bytes.size()) throw CheckpointError("checkpoint is truncated or corrupt (while reading header)");
  const std::string htext = r.bytes(static_cast<std::size_t>(hlen), "header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(htext);
    ck.config = model_config_from_json(header.at("config"));
    ck.step = header.at("step").get<long>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.optimizer.count = header.at("adam_count").get<std::map<std::string, long>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
  }
  const auto n = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, t] = get_tensor(r);
    auto strip = [&](const char* p) {
      const std::size_t len = std::strlen(p);
      return name.compare(0, len, p) == 0 ? name.substr(len) : std::string();
    };
    if (std::string k = strip("param/"); !k.empty()) ck.params.add(k, std::move(t));
    else if (std::string k = strip("adam_m/"); !k.empty()) ck.optimizer.m[k] = std::move(t);
    else if (std::string k = strip("adam_v/"); !k.empty()) ck.optimizer.v[k] = std::move(t);
    else throw CheckpointError("checkpoint has an unrecognised tensor " + name);
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");

  const ModelConfig& want = expected ? *expected : ck.config;
  const ParameterStore ref = build_variant(want);
  for (const auto& [k, t] : ref.items()) {
    if (!ck.params.contains(k)) throw CheckpointError("checkpoint is missing parameter " + k);
    if (ck.params.get(k).shape() != t.shape())
      throw CheckpointError("shape mismatch for parameter " + k + ": checkpoint has " +
                            shape_str(ck.params.get(k).shape()) + ", config expects " + shape_str(t.shape()));
  }
  for (const std::string& k : ck.params.keys())
    if (!ref.contains(k)) throw CheckpointError("checkpoint has unexpected parameter " + k);
  for (const auto* moments : {&ck.optimizer.m, &ck.optimizer.v})
    for (const auto& [k, t] : *moments)
      if (!ck.params.contains(k) || ck.params.get(k).shape() != t.shape())
        throw CheckpointError("optimizer state does not match parameter " + k);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return deserialize_checkpoint(os.str(), expected);
}

}  // namespace handfit
