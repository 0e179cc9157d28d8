#include "glifuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace glifuse {

namespace {

constexpr char kMagic[8] = {'G', 'L', 'F', 'U', 'S', 'E', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

struct Reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t at = 0;
  std::string path;

  void need(std::size_t n) const {
    if (at + n > size) {
      throw std::runtime_error("checkpoint truncated: " + path);
    }
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[at] | (p[at + 1] << 8));
    at += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[at + static_cast<std::size_t>(i)];
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[at + static_cast<std::size_t>(i)];
    at += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return p[at++];
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + at), n);
    at += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u64(out, checkpoint.tensors.size());

  std::uint64_t offset = 0;
  for (const auto& t : checkpoint.tensors) {
    if (t.name.size() > 0xffff) {
      throw std::invalid_argument("checkpoint: tensor name too long");
    }
    std::size_t n = 1;
    for (auto e : t.shape) n *= e;
    if (n != t.values.size()) {
      throw std::invalid_argument("checkpoint: tensor " + t.name +
                                  " shape/value size mismatch");
    }
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.shape.size()));
    for (auto e : t.shape) {
      put_u64(out, e);
    }
    put_u64(out, offset);
    offset += t.values.size() * 4;
  }

  put_u64(out, offset);
  for (const auto& t : checkpoint.tensors) {
    for (float v : t.values) {
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }

  nlohmann::json meta;
  meta["kind"] = checkpoint.kind;
  meta["spec"] = checkpoint.spec_json;
  meta["epoch"] = checkpoint.epoch;
  meta["optimizer_step"] = checkpoint.optimizer_step;
  meta["rng_state"] = checkpoint.rng_state;
  const std::string meta_text = meta.dump();
  put_u64(out, meta_text.size());
  out.append(meta_text);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) {
    throw std::runtime_error("checkpoint write failed: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint: " + path);
  }
  std::string bytes{std::istreambuf_iterator<char>(in),
                    std::istreambuf_iterator<char>()};
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
           0, path};

  const std::string magic = r.bytes(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint magic mismatch: " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + ": " + path);
  }
  const std::uint64_t count = r.u64();

  Checkpoint ck;
  ck.tensors.resize(count);
  std::vector<std::uint64_t> offsets(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& t = ck.tensors[i];
    const std::uint16_t name_len = r.u16();
    t.name = r.bytes(name_len);
    const std::uint8_t rank = r.u8();
    t.shape.resize(rank);
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.shape[d] = r.u64();
      n *= t.shape[d];
    }
    offsets[i] = r.u64();
    t.values.resize(n);
  }

  const std::uint64_t payload_size = r.u64();
  const std::size_t payload_at = r.at;
  r.need(payload_size);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& t = ck.tensors[i];
    if (offsets[i] + t.values.size() * 4 > payload_size) {
      throw std::runtime_error("checkpoint payload overrun: " + path);
    }
    const unsigned char* src = r.p + payload_at + offsets[i];
    for (std::size_t j = 0; j < t.values.size(); ++j) {
      std::uint32_t v = 0;
      for (int b = 3; b >= 0; --b) {
        v = (v << 8) | src[j * 4 + static_cast<std::size_t>(b)];
      }
      t.values[j] = std::bit_cast<float>(v);
    }
  }
  r.at = payload_at + payload_size;

  const std::uint64_t meta_size = r.u64();
  const std::string meta_text = r.bytes(meta_size);
  nlohmann::json meta = nlohmann::json::parse(meta_text);
  ck.kind = meta.value("kind", "");
  ck.spec_json = meta.value("spec", "");
  ck.epoch = meta.value("epoch", std::uint64_t(0));
  ck.optimizer_step = meta.value("optimizer_step", std::uint64_t(0));
  ck.rng_state = meta.value("rng_state", "");
  return ck;
}

}  // namespace glifuse
