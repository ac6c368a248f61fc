#include "rtify/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "rtify/error.hpp"
#include "rtify/hash.hpp"

namespace rtify {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr const char* kMagic = "RTIFY-CHECKPOINT";
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["module"] = module;
  header["seed"] = seed;
  header["config_hash"] = config_hash;
  header["tool_version"] = kToolVersion;
  header["meta"] = meta;
  auto arrays = nlohmann::json::array();
  for (const auto& [name, a] : params) arrays.push_back({{"name", name}, {"shape", a.shape()}});
  header["arrays"] = arrays;

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    out << kMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
    for (const auto& [name, a] : params) {
      out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string() + " (" + ec.message() + ")");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string magic_line, header_line;
  if (!std::getline(in, magic_line) || !std::getline(in, header_line)) {
    throw IoError("truncated checkpoint header: " + path.string());
  }
  if (magic_line != std::string(kMagic) + " " + std::to_string(kCheckpointVersion)) {
    throw IoError("not a version-" + std::to_string(kCheckpointVersion) + " checkpoint: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint ck;
  ck.module = header.at("module").get<std::string>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.config_hash = header.at("config_hash").get<std::string>();
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    diff::Array a(entry.at("shape").get<diff::Shape>());
    in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload: " + path.string());
    ck.params.set(entry.at("name").get<std::string>(), std::move(a));
  }
  return ck;
}

}  // namespace rtify
