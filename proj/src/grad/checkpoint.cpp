#include "hppo/grad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hppo/errors.hpp"

namespace hppo::grad {
namespace {

constexpr const char* kMagic = "hppo-checkpoint";
constexpr int kVersion = 1;

void put_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                     const std::map<std::string, std::string>& meta) {
  std::ostringstream manifest;
  manifest << kMagic << ' ' << kVersion << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint meta keys must be single tokens");
    }
    manifest << "meta " << k << ' ' << v << '\n';
  }
  std::string blob;
  for (const ParamRef& p : params) {
    if (p.name.find_first_of(" \n") != std::string::npos) {
      throw ContractError("checkpoint parameter names must not contain whitespace");
    }
    manifest << "param " << p.name << ' ' << p.tensor->rank();
    for (int d : p.tensor->shape()) manifest << ' ' << d;
    manifest << ' ' << blob.size() << '\n';
    for (double v : p.tensor->values()) put_f32(blob, v);
  }
  manifest << "blob " << blob.size() << '\n';
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  const std::string head = manifest.str();
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw IoError("short write on checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty checkpoint");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kMagic || version != kVersion) throw IoError(path + ": not an hppo checkpoint");
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  Checkpoint ck;
  std::size_t blob_bytes = 0;
  bool have_blob = false;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (tag == "param") {
      Entry e;
      int rank = 0;
      ls >> e.name >> rank;
      if (!ls || rank < 1 || rank > 8) throw IoError(path + ": bad param line '" + line + "'");
      e.shape.resize(static_cast<std::size_t>(rank));
      for (int& d : e.shape) ls >> d;
      ls >> e.offset;
      if (!ls) throw IoError(path + ": bad param line '" + line + "'");
      entries.push_back(std::move(e));
    } else if (tag == "blob") {
      ls >> blob_bytes;
      if (!ls) throw IoError(path + ": bad blob line");
      have_blob = true;
      break;
    } else {
      throw IoError(path + ": unexpected manifest line '" + line + "'");
    }
  }
  if (!have_blob) throw IoError(path + ": missing blob header");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.size() != blob_bytes) {
    throw IoError(path + ": blob holds " + std::to_string(blob.size()) + " bytes, manifest says " +
                  std::to_string(blob_bytes));
  }
  std::size_t expected = 0;
  for (const Entry& e : entries) {
    if (e.offset != expected) throw IoError(path + ": non-contiguous offset for " + e.name);
    expected += shape_numel(e.shape) * 4;
  }
  if (expected != blob_bytes) throw IoError(path + ": manifest sizes do not sum to blob length");
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (const Entry& e : entries) {
    Tensor t(e.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f32(bytes + e.offset + 4 * i);
    ck.tensors.emplace_back(e.name, std::move(t));
  }
  return ck;
}

void load_into(const Checkpoint& ckpt, const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params) {
    const Tensor* src = ckpt.find(p.name);
    if (!src) throw IoError("checkpoint has no parameter '" + p.name + "'");
    if (src->shape() != p.tensor->shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_str(src->shape()) +
                       ", model expects " + shape_str(p.tensor->shape()));
    }
    std::memcpy(p.tensor->data().data(), src->data().data(), src->size() * sizeof(double));
  }
}

}  // namespace hppo::grad
