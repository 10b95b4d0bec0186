// SPDX-License-Identifier: Apache-2.0
#include "lta/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>

#include "lta/error.hpp"

namespace lta {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'T', 'A', 'A', 'R', 'C', 'H', '1'};
constexpr std::uint32_t kDtypeF64 = 64;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CorruptionError(path + ": truncated archive");
  return v;
}

}  // namespace

std::string digest_tensors(const TensorMap& tensors) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  for (const auto& [name, m] : tensors) {
    if (m.size() > 0) EVP_DigestUpdate(ctx.get(), m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

void write_archive(const std::filesystem::path& path, Archive archive) {
  archive.metadata["digest"] = digest_tensors(archive.tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::string meta = archive.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint64_t>(out, archive.tensors.size());
  for (const auto& [name, m] : archive.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, kDtypeF64);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + p);
  const auto file_size = std::filesystem::file_size(path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CorruptionError(p + ": not an archive");
  Archive a;
  const auto meta_len = get<std::uint64_t>(in, p);
  if (meta_len > file_size) throw CorruptionError(p + ": truncated archive");
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw CorruptionError(p + ": truncated archive");
  try {
    a.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception&) {
    throw CorruptionError(p + ": unreadable metadata");
  }
  const auto count = get<std::uint64_t>(in, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, p);
    if (name_len > file_size) throw CorruptionError(p + ": truncated archive");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CorruptionError(p + ": truncated archive");
    if (get<std::uint32_t>(in, p) != kDtypeF64) throw CorruptionError(p + ": unsupported dtype for " + name);
    const auto rows = get<std::uint64_t>(in, p);
    const auto cols = get<std::uint64_t>(in, p);
    if (rows * cols * sizeof(double) > file_size) throw CorruptionError(p + ": truncated archive");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw CorruptionError(p + ": truncated archive");
    a.tensors.emplace(std::move(name), std::move(m));
  }
  if (!a.metadata.contains("digest") || a.metadata["digest"] != digest_tensors(a.tensors))
    throw CorruptionError(p + ": digest mismatch");
  return a;
}

}  // namespace lta
