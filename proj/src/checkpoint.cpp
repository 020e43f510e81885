#include "rcqa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rcqa/error.hpp"

namespace rcqa {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'Q', 'A', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i]))
         << (8 * i);
  }
  return v;
}

}  // namespace

const Dense2& Checkpoint::array(std::string_view name) const {
  for (const auto& [n, a] : arrays) {
    if (n == name) return a;
  }
  throw DataError("checkpoint has no array '" + std::string(name) + "'");
}

bool Checkpoint::has_array(std::string_view name) const {
  for (const auto& entry : arrays) {
    if (entry.first == name) return true;
  }
  return false;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = "rcqa-checkpoint";
  header["version"] = kCheckpointVersion;
  header["kind"] = checkpoint.kind;
  header["config"] = checkpoint.config;
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, a] : checkpoint.arrays) {
    arrays.push_back(
        {{"name", name}, {"rows", a.rows()}, {"cols", a.cols()}, {"offset", offset}});
    offset += a.size();
  }
  header["arrays"] = arrays;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& entry : checkpoint.arrays) {
    for (double v : entry.second.values()) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError("not an rcqa checkpoint (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) {
    throw DataError("checkpoint header length exceeds file size");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "rcqa-checkpoint") {
    throw DataError("checkpoint header: unknown format");
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw DataError("checkpoint header: unsupported version");
  }
  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "");
  ckpt.config = header.value("config", nlohmann::json::object());
  const std::string_view payload = bytes.substr(16 + header_len);
  for (const auto& entry : header.at("arrays")) {
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if ((offset + count) * 8 > payload.size()) {
      throw DataError("checkpoint payload truncated");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = std::bit_cast<double>(get_u64(payload, (offset + i) * 8));
    }
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(),
                             Dense2(rows, cols, std::move(values)));
  }
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace rcqa
