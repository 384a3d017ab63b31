#include "attmix/checkpoint.hpp"

#include <algorithm>
#include <set>

#include "attmix/error.hpp"
#include "attmix/io.hpp"

namespace attmix {
namespace {

constexpr char kMagic[4] = {'A', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPrefix = 4 + 4 + 8;

}  // namespace

std::string encode_checkpoint(const nlohmann::json& config,
                              const std::vector<NamedParam<float>>& params) {
  nlohmann::json registry = nlohmann::json::array();
  std::size_t offset = 0;
  std::set<std::string> seen;
  for (const NamedParam<float>& p : params) {
    if (!seen.insert(p.name).second) throw ContractError("duplicate parameter name '" + p.name + "'");
    registry.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", offset}});
    offset += p.tensor->size() * 4;
  }
  const std::string header = nlohmann::json{{"config", config}, {"params", registry}}.dump();
  std::vector<char> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const NamedParam<float>& p : params) {
    for (float v : p.tensor->data()) put_le<float>(out, v);
  }
  return {out.begin(), out.end()};
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("bad checkpoint magic, expected \"AMCK\"", 0);
  }
  if (bytes.size() < kPrefix) throw FormatError("truncated checkpoint prefix", bytes.size());
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kVersion) throw FormatError("unsupported checkpoint version", 4);
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPrefix) throw FormatError("truncated checkpoint header", bytes.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what(), kPrefix + e.byte);
  }
  const std::size_t payload = kPrefix + header_len;
  Checkpoint ck;
  try {
    ck.config = header.at("config");
    for (const nlohmann::json& e : header.at("params")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (payload + offset + n * 4 > bytes.size()) {
        throw FormatError("payload of '" + name + "' is truncated", bytes.size());
      }
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) values[i] = get_le<float>(bytes.data() + payload + offset + 4 * i);
      ck.order.push_back(name);
      ck.tensors.emplace(name, Tensor<float>(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint registry: ") + e.what(), kPrefix);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<NamedParam<float>>& params) {
  write_file_atomic(path, encode_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void restore_parameters(const Checkpoint& ckpt, const std::vector<NamedParam<float>>& params,
                        bool strict) {
  for (const NamedParam<float>& p : params) {
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) {
      throw ContractError("checkpoint has no parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.tensor->shape()) {
      throw ContractError("shape mismatch for parameter '" + p.name + "': checkpoint " +
                          shape_str(it->second.shape()) + " vs model " +
                          shape_str(p.tensor->shape()));
    }
  }
  if (strict && ckpt.tensors.size() != params.size()) {
    for (const auto& [name, _] : ckpt.tensors) {
      const bool used = std::any_of(params.begin(), params.end(),
                                    [&](const NamedParam<float>& p) { return p.name == name; });
      if (!used) throw ContractError("checkpoint parameter '" + name + "' has no counterpart");
    }
  }
  for (const NamedParam<float>& p : params) {
    const Tensor<float>& src = ckpt.tensors.at(p.name);
    std::copy(src.data().begin(), src.data().end(), p.tensor->data().begin());
  }
}

std::vector<std::vector<float>> snapshot(const std::vector<NamedParam<float>>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const NamedParam<float>& p : params) out.push_back(p.tensor->values());
  return out;
}

void restore(const std::vector<NamedParam<float>>& params,
             const std::vector<std::vector<float>>& values) {
  if (params.size() != values.size()) throw ContractError("snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].tensor->size()) {
      throw ContractError("snapshot size differs for '" + params[i].name + "'");
    }
    std::copy(values[i].begin(), values[i].end(), params[i].tensor->data().begin());
  }
}

}  // namespace attmix
