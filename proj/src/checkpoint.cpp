#include "dfe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dfe/image_io.hpp"

namespace dfe {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'E', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.value.rank()));
    for (const auto d : r.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (const float v : r.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not a DFE1 checkpoint (bad magic)");
  }
  Reader rd(bytes.subspan(4));
  std::vector<NamedTensor> out;
  while (!rd.done()) {
    NamedTensor r;
    r.name = rd.str(rd.u32());
    const std::uint32_t rank = rd.u32();
    Shape shape(rank);
    for (auto& d : shape) d = rd.u32();
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = rd.f32();
    r.value = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<NamedTensor> model_parameters(const Model<float>& model) {
  std::vector<NamedTensor> out;
  out.reserve(model.params.size());
  for (const auto& p : model.params) out.push_back({p.name, p.value});
  return out;
}

void write_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model_parameters(model));
  write_file(path, std::string(bytes.begin(), bytes.end()));
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return decode_checkpoint(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void assign_parameters(Model<float>& model, const std::vector<NamedTensor>& records) {
  if (records.size() != model.params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(records.size()) + " tensors, model " +
                      model.arch + " expects " + std::to_string(model.params.size()));
  }
  for (const auto& r : records) {
    Parameter<float>* p = model.find(r.name);
    if (!p) throw ConfigError("checkpoint tensor '" + r.name + "' not in model " + model.arch);
    if (p->value.shape() != r.value.shape()) {
      throw DimensionError("checkpoint tensor '" + r.name + "' has shape " +
                           shape_str(r.value.shape()) + ", model expects " +
                           shape_str(p->value.shape()));
    }
    p->value = r.value;
  }
}

std::string checkpoint_arch(const std::vector<NamedTensor>& records) {
  if (records.empty()) throw ConfigError("empty checkpoint");
  const auto& n = records.front().name;
  return n.substr(0, n.find('.'));
}

}  // namespace dfe
