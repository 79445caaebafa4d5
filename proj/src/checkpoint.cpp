#include "simtrans/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "simtrans/error.hpp"

namespace simtrans {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void array(const NamedArray& a) {
    str(a.name);
    u32(static_cast<std::uint32_t>(a.value.rank()));
    for (std::size_t e : a.value.shape()) u64(e);
    for (double v : a.value.values()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect(const char* bytes, std::size_t n) {
    need(n);
    if (std::memcmp(in_.data() + pos_, bytes, n) != 0) throw IoError("checkpoint: bad magic");
    pos_ += n;
  }
  NamedArray array() {
    NamedArray a;
    a.name = str();
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw IoError("checkpoint: implausible rank for " + a.name);
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      e = u64();
      if (e == 0 || count > (std::uint64_t{1} << 32) / e) throw IoError("checkpoint: implausible shape for " + a.name);
      count *= e;
    }
    need(count * 8);
    std::vector<double> data(count);
    for (double& v : data) v = f64();
    a.value = Tensor(std::move(shape), std::move(data));
    return a;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw IoError("checkpoint: truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::uint64_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.config.to_text());
  w.u64(ckpt.classes);
  w.u64(ckpt.step);
  w.str(ckpt.rng_state);
  w.u64(ckpt.parameters.size());
  for (const NamedArray& a : ckpt.parameters) w.array(a);
  w.u64(ckpt.momentum.size());
  for (const NamedArray& a : ckpt.momentum) w.array(a);
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  r.expect(kMagic, sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  try {
    c.config.apply_text(r.str());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: bad config snapshot: ") + e.what());
  }
  c.classes = r.u64();
  c.step = r.u64();
  c.rng_state = r.str();
  const std::uint64_t params = r.u64();
  for (std::uint64_t i = 0; i < params; ++i) c.parameters.push_back(r.array());
  const std::uint64_t buffers = r.u64();
  for (std::uint64_t i = 0; i < buffers; ++i) c.momentum.push_back(r.array());
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize(ckpt);
  // Write to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::vector<NamedArray> snapshot(const Model& model) {
  std::vector<NamedArray> out;
  for (const ConstNamedTensor& p : model.parameters()) out.push_back({p.name, *p.tensor});
  return out;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m = Model::init(ckpt.config.model_config(ckpt.classes), 0);
  auto params = m.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& a = ckpt.parameters[i];
    if (a.name != params[i].name || a.value.shape() != params[i].tensor->shape()) {
      throw ConfigError("checkpoint parameter " + a.name + " " + to_string(a.value.shape()) + " does not match " +
                        params[i].name + " " + to_string(params[i].tensor->shape()));
    }
    *params[i].tensor = a.value;
  }
  return m;
}

}  // namespace simtrans
