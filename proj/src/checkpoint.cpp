#include "tpdr/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "binary_io.hpp"
#include "json.hpp"
#include "tpdr/error.hpp"
#include "tpdr/random.hpp"

namespace tpdr {

using nlohmann::json;

namespace {

constexpr char kMagic[9] = "TPDRCKP1";

json config_to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},
          {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"shared_embedding", c.shared_embedding}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.shared_embedding = j.at("shared_embedding").get<bool>();
  return c;
}

}  // namespace

std::string fingerprint(const Checkpoint& checkpoint) {
  std::uint64_t h = fnv1a(config_to_json(checkpoint.config).dump());
  for (const auto* tower : {&checkpoint.query, &checkpoint.product}) {
    for (const auto& t : tensors(*tower)) {
      h = fnv1a(t.name, h);
      h = fnv1a(t.data.data(), t.data.size_bytes(), h);
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  json names = json::array();
  for (const auto& t : tensors(checkpoint.query)) {
    names.push_back({t.name, t.data.size()});
  }
  const json header{{"config", config_to_json(checkpoint.config)},
                    {"tokenizer_ref", checkpoint.tokenizer_ref},
                    {"step", checkpoint.step},
                    {"tensors", names}};
  detail::BinaryWriter out(path);
  out.bytes(kMagic, 8);
  out.string(header.dump());
  for (const auto* tower : {&checkpoint.query, &checkpoint.product}) {
    for (const auto& t : tensors(*tower)) out.doubles(t.data);
  }
  out.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  in.expect_magic(kMagic);
  Checkpoint ckpt;
  json names;
  try {
    const json header = json::parse(in.string());
    ckpt.config = config_from_json(header.at("config"));
    ckpt.tokenizer_ref = header.at("tokenizer_ref").get<std::string>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    names = header.at("tensors");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  try {
    ckpt.config.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ckpt.query = EncoderParams::zeros(ckpt.config);
  ckpt.product = EncoderParams::zeros(ckpt.config);
  for (auto* tower : {&ckpt.query, &ckpt.product}) {
    auto views = tensors(*tower);
    if (names.size() != views.size()) {
      throw FormatError(path.string() + ": tensor count mismatch");
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (names[i].at(0).get<std::string>() != views[i].name ||
          names[i].at(1).get<std::size_t>() != views[i].data.size()) {
        throw FormatError(path.string() + ": tensor layout mismatch at " +
                          views[i].name);
      }
      in.doubles(views[i].data);
    }
  }
  in.expect_end();
  return ckpt;
}

bool bit_identical(const EncoderParams& a, const EncoderParams& b) {
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].data.size() != tb[i].data.size() ||
        std::memcmp(ta[i].data.data(), tb[i].data.data(),
                    ta[i].data.size_bytes()) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace tpdr
