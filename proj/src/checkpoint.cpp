#include "aigi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"

namespace aigi::grad {

namespace {

constexpr char kMagic[8] = {'A', 'I', 'G', 'I', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto len = get<std::uint64_t>();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::Format, "truncated checkpoint");
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint snapshot(const Graph& graph, std::string header) {
  Checkpoint ck;
  ck.header = std::move(header);
  for (NodeId id : graph.parameters()) {
    const Parameter& p = graph.param(id);
    ck.records.push_back({p.name, p.value});
  }
  return ck;
}

void restore(Graph& graph, const Checkpoint& checkpoint) {
  for (NodeId id : graph.parameters()) {
    Parameter& p = graph.param(id);
    const CheckpointRecord* found = nullptr;
    for (const auto& r : checkpoint.records) {
      if (r.name == p.name) {
        found = &r;
        break;
      }
    }
    if (!found) {
      throw Error(ErrorKind::Format, "checkpoint lacks parameter " + p.name);
    }
    if (found->value.shape() != p.value.shape()) {
      throw Error(ErrorKind::ShapeMismatch,
                  "checkpoint parameter " + p.name + " has shape " +
                      shape_str(found->value.shape()) + ", expected " +
                      shape_str(p.value.shape()));
    }
    p.value = found->value;
  }
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, ck.version);
  put_string(out, ck.header);
  put<std::uint64_t>(out, ck.records.size());
  for (const auto& r : ck.records) {
    put_string(out, r.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.value.rank()));
    for (std::size_t d : r.value.shape()) put<std::uint64_t>(out, d);
    for (double v : r.value.data()) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::Format, "not a checkpoint file (bad magic)");
  }
  Reader in(bytes, sizeof(kMagic));
  Checkpoint ck;
  ck.version = in.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw Error(ErrorKind::Format,
                "unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.header = in.get_string();
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.get_string();
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = in.get<double>();
    r.value = Tensor(std::move(shape), std::move(values));
    ck.records.push_back(std::move(r));
  }
  if (!in.done()) throw Error(ErrorKind::Format, "trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace aigi::grad
