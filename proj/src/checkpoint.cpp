#include <cstring>
#include <fstream>
#include <iterator>

#include "mbatf/errors.hpp"
#include "mbatf/metaloop.hpp"

namespace mbatf {

namespace {

constexpr char kMagic[8] = {'M', 'B', 'A', 'T', 'F', 'C', 'K', 'P'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t count) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < count; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    return std::string(take(n), n);
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw DataError("checkpoint is truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// Reads the file and verifies magic and checksum; returns the payload length.
std::size_t open_verified(const std::string& path, std::string& bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path + " is not a checkpoint (bad magic or truncated)");
  }
  const std::size_t payload = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload, sizeof(stored));
  if (stored != fnv1a(bytes, payload)) throw DataError(path + ": checkpoint checksum mismatch (corrupt or truncated)");
  return payload;
}

}  // namespace

template <typename Real>
void save_checkpoint(const TrainState<Real>& state, const std::string& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint8_t>(sizeof(Real));
  w.pod<std::uint64_t>(state.seed);
  w.pod<std::uint64_t>(state.episodes_seen);
  w.str(to_json(state.config).dump());
  w.pod<std::uint64_t>(state.vocabulary.size());
  for (const auto& word : state.vocabulary) w.str(word);
  w.pod<std::uint64_t>(state.params.size());
  for (const auto& e : state.params.entries()) {
    w.str(e.name);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(e.role));
    w.pod<std::uint64_t>(e.tensor.rank());
    for (auto d : e.tensor.shape()) w.pod<std::uint64_t>(d);
    w.raw(e.tensor.data(), e.tensor.size() * sizeof(Real));
  }
  w.pod<std::uint64_t>(fnv1a(w.bytes(), w.bytes().size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

std::size_t checkpoint_precision(const std::string& path) {
  std::string bytes;
  const std::size_t payload = open_verified(path, bytes);
  Reader r(bytes, payload);
  r.take(sizeof(kMagic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  return r.pod<std::uint8_t>();
}

template <typename Real>
TrainState<Real> load_checkpoint(const std::string& path) {
  std::string bytes;
  const std::size_t payload = open_verified(path, bytes);
  Reader r(bytes, payload);
  r.take(sizeof(kMagic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const auto width = r.pod<std::uint8_t>();
  if (width != sizeof(Real)) {
    throw DataError(path + ": checkpoint stores " + std::to_string(8 * width) + "-bit values, requested " +
                    std::to_string(8 * sizeof(Real)) + "-bit");
  }
  TrainState<Real> state;
  state.seed = r.pod<std::uint64_t>();
  state.episodes_seen = r.pod<std::uint64_t>();
  try {
    state.config = model_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad config snapshot: " + e.what());
  }
  const auto words = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < words; ++i) state.vocabulary.push_back(r.str());
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto role = r.pod<std::uint8_t>();
    if (role > static_cast<std::uint8_t>(Role::kScorer)) throw DataError(path + ": bad role tag for " + name);
    const auto rank = r.pod<std::uint64_t>();
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.pod<std::uint64_t>());
    Tensor<Real> t(shape);
    std::memcpy(t.data(), r.take(t.size() * sizeof(Real)), t.size() * sizeof(Real));
    state.params.add(std::move(name), static_cast<Role>(role), std::move(t));
  }
  if (!r.done()) throw DataError(path + ": trailing bytes in checkpoint");
  return state;
}

template void save_checkpoint<float>(const TrainState<float>&, const std::string&);
template void save_checkpoint<double>(const TrainState<double>&, const std::string&);
template TrainState<float> load_checkpoint<float>(const std::string&);
template TrainState<double> load_checkpoint<double>(const std::string&);

}  // namespace mbatf
