#include "groupdecode/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "groupdecode/dataio.hpp"

namespace gdec {
namespace {

constexpr std::array<char, 8> kMagic{'G', 'D', 'E', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

struct Header {
  nlohmann::json json;
  std::streamoff payload_offset = 0;
};

Header read_header(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto length = get_le<std::uint64_t>(in);
  if (length > (1u << 30)) throw FormatError("checkpoint header length is implausible");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw FormatError("checkpoint header truncated");
  Header h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  h.payload_offset = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const WavenetClassifier<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    header["params"].push_back({{"name", model.parameter_names()[i]}, {"shape", {p.rows(), p.cols()}}});
  }
  header["meta"] = meta;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters()) {
    for (Eigen::Index i = 0; i < p.size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p.data()[i]));
  }
  if (!out) throw std::runtime_error("failed to write checkpoint " + path.string());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_header(in).json;
}

WavenetClassifier<float> load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const Header h = read_header(in);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(h.json.at("config"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (expected) {
    const std::string diff = first_difference(*expected, cfg);
    if (!diff.empty()) throw FormatError("checkpoint config mismatch in field '" + diff + "'");
  }
  WavenetClassifier<float> model(cfg);
  const auto& declared = h.json.at("params");
  if (declared.size() != model.parameters().size())
    throw FormatError("checkpoint declares " + std::to_string(declared.size()) + " parameter arrays, config implies " +
                      std::to_string(model.parameters().size()));
  for (std::size_t i = 0; i < declared.size(); ++i) {
    auto& p = model.parameters()[i];
    const auto shape = declared[i].at("shape").get<std::vector<Eigen::Index>>();
    if (declared[i].at("name").get<std::string>() != model.parameter_names()[i] || shape.size() != 2 ||
        shape[0] != p.rows() || shape[1] != p.cols())
      throw FormatError("checkpoint parameter " + std::to_string(i) + " does not match the config");
    for (Eigen::Index j = 0; j < p.size(); ++j) p.data()[j] = std::bit_cast<float>(get_le<std::uint32_t>(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");
  return model;
}

}  // namespace gdec
