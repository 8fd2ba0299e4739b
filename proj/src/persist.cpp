#include "slac/persist.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace slac {
namespace {

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a(read_file(path)); }

void save_tensors(const std::filesystem::path& manifest, const std::filesystem::path& blob,
                  std::span<const ParamTensor* const> tensors, const std::string& extra_json) {
  auto j = nlohmann::json::parse(extra_json);
  if (!j.is_object()) throw Error("save_tensors: extra fields must form a JSON object");
  std::ofstream out(blob, std::ios::binary);
  if (!out) throw Error("cannot write '" + blob.string() + "'");
  std::uint64_t offset = 0;
  auto list = nlohmann::json::array();
  for (const auto* t : tensors) {
    // column-major, the Eigen storage order
    for (Eigen::Index i = 0; i < t->value.size(); ++i) put_le(out, t->value.data()[i]);
    list.push_back({{"name", t->name},
                    {"shape", {t->value.rows(), t->value.cols()}},
                    {"offset", offset}});
    offset += 8 * static_cast<std::uint64_t>(t->value.size());
  }
  j["format"] = "slac-weights-v1";
  j["byte_order"] = "little";
  j["dtype"] = "float64";
  j["blob"] = blob.filename().string();
  j["blob_bytes"] = offset;
  j["tensors"] = list;
  std::ofstream(manifest, std::ios::binary) << j.dump(2) << '\n';
}

std::string load_tensors(const std::filesystem::path& manifest, const std::filesystem::path& blob,
                         std::span<ParamTensor* const> tensors) {
  const auto text = read_file(manifest);
  auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "slac-weights-v1") throw Error("unrecognized weight manifest format");
  const auto bytes = read_file(blob);
  if (bytes.size() != j.at("blob_bytes").get<std::uint64_t>())
    throw Error("weight blob size does not match manifest");
  std::map<std::string, nlohmann::json> entries;
  for (const auto& e : j.at("tensors")) entries[e.at("name").get<std::string>()] = e;
  for (auto* t : tensors) {
    auto it = entries.find(t->name);
    if (it == entries.end()) throw Error("weight manifest lacks tensor '" + t->name + "'");
    const auto shape = it->second.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != t->value.rows() || shape[1] != t->value.cols())
      throw Error("tensor '" + t->name + "' has a different shape in the manifest");
    const auto offset = it->second.at("offset").get<std::uint64_t>();
    if (offset + 8 * static_cast<std::uint64_t>(t->value.size()) > bytes.size())
      throw Error("tensor '" + t->name + "' extends past the blob");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
    for (Eigen::Index i = 0; i < t->value.size(); ++i) t->value.data()[i] = get_le(p + 8 * i);
    t->zero_grad();
  }
  return text;
}

}  // namespace slac
