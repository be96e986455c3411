#include "tap/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tap/errors.hpp"

namespace tap {
namespace {

constexpr char kMagic[8] = {'T', 'A', 'P', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

const Tensor<float>* CheckpointFile::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::map<std::string, Tensor<float>> CheckpointFile::tensor_map(const std::string& prefix) const {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [n, t] : tensors)
    if (n.compare(0, prefix.size(), prefix) == 0) out.emplace(n, t);
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a temporary and rename so an interrupted save never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, CheckpointFile::kVersion);
    const std::string meta = ckpt.meta.is_null() ? std::string("{}") : ckpt.meta.dump();
    put<uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<uint64_t>(os, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put<uint32_t>(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
      for (auto d : t.shape()) put<int64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(float) * t.numel()));
    }
    if (!os) throw DataError("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + ps);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + ps);
  const auto version = get<uint32_t>(is, ps);
  if (version != CheckpointFile::kVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version) + " in " + ps);
  CheckpointFile ck;
  const auto meta_len = get<uint64_t>(is, ps);
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw DataError("truncated checkpoint: " + ps);
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint metadata in " + ps + ": " + e.what());
  }
  if (!ck.meta.is_object()) throw DataError("checkpoint metadata in " + ps + " is not an object");
  const auto count = get<uint64_t>(is, ps);
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<uint32_t>(is, ps);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("truncated checkpoint: " + ps);
    const auto ndim = get<uint32_t>(is, ps);
    if (ndim > 8) throw DataError("corrupt tensor header in " + ps);
    Shape shape(ndim);
    for (auto& d : shape) d = get<int64_t>(is, ps);
    Tensor<float> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(float) * t.numel())))
      throw DataError("truncated tensor '" + name + "' in " + ps);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t, const nlohmann::json& meta) {
  CheckpointFile f;
  f.meta = meta.is_null() ? nlohmann::json::object() : meta;
  f.meta["kind"] = "tensor";
  f.tensors.emplace_back("data", t);
  write_checkpoint(path, f);
}

Tensor<float> read_tensor_file(const std::filesystem::path& path, nlohmann::json* meta) {
  auto f = read_checkpoint(path);
  if (f.meta.value("kind", "") != "tensor" || f.tensors.size() != 1)
    throw DataError("not a tensor file: " + path.string());
  if (meta) *meta = f.meta;
  return std::move(f.tensors.front().second);
}

}  // namespace tap
