#include "quadrace/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace quadrace {

namespace {

constexpr char kMagic[4] = {'Q', 'N', 'N', 'W'};
constexpr std::uint32_t kKindNet = 0;
constexpr std::uint32_t kKindVector = 1;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  void u32(std::uint32_t v) { raw(to_little(v)); }
  void f64(double v) { raw(to_little(std::bit_cast<std::uint64_t>(v))); }
  void bytes(const std::string& s) { out_.append(s); }
  void reals(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f64(p[i]);
  }
  std::string take() { return std::move(out_); }

 private:
  template <typename T>
  void raw(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  std::uint32_t u32() { return to_little(raw<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(to_little(raw<std::uint64_t>())); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  void reals(double* p, std::size_t n) {
    need(n * 8);
    for (std::size_t i = 0; i < n; ++i) p[i] = f64();
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) {
      std::ostringstream os;
      os << "weight file truncated at byte " << pos_ << " (needed " << n << " more)";
      throw WeightFileError(os.str());
    }
  }
  template <typename T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

void write_net(Writer& w, const MlpNet& net) {
  net.validate();
  w.u32(static_cast<std::uint32_t>(net.hidden));
  w.u32(static_cast<std::uint32_t>(net.sizes.size()));
  for (int s : net.sizes) w.u32(static_cast<std::uint32_t>(s));
  w.reals(net.in_shift.data(), std::size_t(net.in_shift.size()));
  w.reals(net.in_scale.data(), std::size_t(net.in_scale.size()));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& m = net.weights[l];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
    }
    w.reals(net.biases[l].data(), std::size_t(net.biases[l].size()));
  }
}

MlpNet read_net(Reader& r) {
  const std::uint32_t act = r.u32();
  if (act > 1) throw WeightFileError("unknown activation tag " + std::to_string(act));
  const std::uint32_t n = r.u32();
  if (n < 2 || n > 64) throw WeightFileError("corrupt layer count " + std::to_string(n));
  std::vector<int> sizes(n);
  for (auto& s : sizes) {
    const std::uint32_t v = r.u32();
    if (v == 0 || v > (1u << 20)) throw WeightFileError("corrupt layer size " + std::to_string(v));
    s = static_cast<int>(v);
  }
  MlpNet net = MlpNet::zeros(sizes, static_cast<Activation>(act));
  r.reals(net.in_shift.data(), std::size_t(net.in_shift.size()));
  r.reals(net.in_scale.data(), std::size_t(net.in_scale.size()));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto& m = net.weights[l];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
    }
    r.reals(net.biases[l].data(), std::size_t(net.biases[l].size()));
  }
  return net;
}

}  // namespace

const MlpNet& WeightFile::net(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end() || !std::holds_alternative<MlpNet>(it->second)) {
    throw WeightFileError("weight file has no net entry '" + name + "'");
  }
  return std::get<MlpNet>(it->second);
}

const Eigen::VectorXd& WeightFile::vector(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end() || !std::holds_alternative<Eigen::VectorXd>(it->second)) {
    throw WeightFileError("weight file has no vector entry '" + name + "'");
  }
  return std::get<Eigen::VectorXd>(it->second);
}

std::string encode_weights(const WeightFile& file) {
  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.u32(kWeightFileVersion);
  w.u32(static_cast<std::uint32_t>(file.entries.size()));
  for (const auto& [name, value] : file.entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    if (const auto* net = std::get_if<MlpNet>(&value)) {
      w.u32(kKindNet);
      write_net(w, *net);
    } else {
      const auto& vec = std::get<Eigen::VectorXd>(value);
      w.u32(kKindVector);
      w.u32(static_cast<std::uint32_t>(vec.size()));
      w.reals(vec.data(), std::size_t(vec.size()));
    }
  }
  return w.take();
}

WeightFile decode_weights(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw WeightFileError("not a quadrace weight file");
  const std::uint32_t version = r.u32();
  if (version != kWeightFileVersion) {
    throw WeightFileError("unsupported weight file version " + std::to_string(version));
  }
  WeightFile file;
  const std::uint32_t count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t len = r.u32();
    if (len > 4096) throw WeightFileError("corrupt entry name length");
    std::string name = r.bytes(len);
    const std::uint32_t kind = r.u32();
    if (kind == kKindNet) {
      file.entries[name] = read_net(r);
    } else if (kind == kKindVector) {
      const std::uint32_t n = r.u32();
      if (n > (1u << 24)) throw WeightFileError("corrupt vector length");
      Eigen::VectorXd v(n);
      r.reals(v.data(), n);
      file.entries[name] = std::move(v);
    } else {
      throw WeightFileError("unknown entry kind " + std::to_string(kind));
    }
  }
  if (!r.done()) throw WeightFileError("trailing bytes after last entry");
  return file;
}

void save_weights(const WeightFile& file, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightFileError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightFileError("write to '" + path.string() + "' failed");
}

WeightFile load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_weights(ss.str());
}

void save_net(const MlpNet& net, const std::filesystem::path& path) {
  WeightFile f;
  f.entries["net"] = net;
  save_weights(f, path);
}

MlpNet load_net(const std::filesystem::path& path) { return load_weights(path).net("net"); }

void save_policy(const GaussianPolicy& pol, const MlpNet* value, const std::filesystem::path& path) {
  pol.validate();
  WeightFile f;
  f.entries["policy.mean"] = pol.mean_net;
  f.entries["policy.log_std"] = pol.log_std;
  f.entries["policy.low"] = pol.low;
  f.entries["policy.high"] = pol.high;
  if (value != nullptr) f.entries["value"] = *value;
  save_weights(f, path);
}

GaussianPolicy load_policy(const std::filesystem::path& path, MlpNet* value) {
  const WeightFile f = load_weights(path);
  GaussianPolicy pol{f.net("policy.mean"), f.vector("policy.log_std"), f.vector("policy.low"),
                     f.vector("policy.high")};
  try {
    pol.validate();
  } catch (const std::exception& e) {
    throw WeightFileError(std::string("inconsistent policy file: ") + e.what());
  }
  if (value != nullptr) *value = f.net("value");
  return pol;
}

}  // namespace quadrace
