#include "fdb/archive.hpp"

#include <cstring>
#include <fstream>

namespace fdb {

namespace {
constexpr char kMagic[8] = {'F', 'D', 'B', 'A', 'R', 'C', '0', '1'};
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail(ErrorKind::format, "archive has no tensor '" + name + "'");
}

void Archive::put(std::string name, Tensor<float> value) {
  for (auto& [n, t] : tensors)
    if (n == name) {
      t = std::move(value);
      return;
    }
  tensors.emplace_back(std::move(name), std::move(value));
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    if (!all_finite(t)) fail(ErrorKind::validation, "tensor '" + name + "' contains non-finite values");
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : archive.tensors)
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) fail(ErrorKind::io, "failed writing '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorKind::format, "'" + path.string() + "' is not an fdbstyle archive");
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) fail(ErrorKind::format, "'" + path.string() + "' has a corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "'" + path.string() + "' header: " + e.what());
  }
  Archive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  const std::uint64_t payload_start = 16 + len;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    Tensor<float> t(shape);
    const std::uint64_t begin = payload_start + offset * sizeof(float);
    if (begin + t.size() * sizeof(float) > file_size)
      fail(ErrorKind::format, "'" + path.string() + "' is truncated in tensor '" + entry.at("name").get<std::string>() + "'");
    in.seekg(static_cast<std::streamoff>(begin));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    archive.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

}  // namespace fdb
