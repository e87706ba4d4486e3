#include "zofa/model_file.hpp"

#include <json.hpp>

#include "zofa/binary_io.hpp"
#include "zofa/error.hpp"

namespace zofa {

namespace {
constexpr std::string_view kMagic = "ZOFA1";
}

std::string encode_network(const Network& net) {
  net.validate();
  nlohmann::json desc;
  desc["feature_tap"] = net.feature_tap;
  desc["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json jl;
    jl["kind"] = std::string(to_string(l.kind));
    if (l.kind == LayerKind::layernorm) jl["epsilon"] = l.epsilon;
    jl["params"] = nlohmann::json::array();
    for (const auto& p : l.params) {
      jl["params"].push_back({{"name", p.name}, {"shape", p.value.shape()}, {"adapted", p.adapted}});
    }
    desc["layers"].push_back(jl);
  }
  const std::size_t f = net.source_stats ? net.feature_width() : 0;
  desc["source_stats"] = f;
  const std::string text = desc.dump();

  ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& l : net.layers)
    for (const auto& p : l.params) w.f64s(p.value.values());
  if (net.source_stats) {
    w.f64s(net.source_stats->mean.values());
    w.f64s(net.source_stats->stddev.values());
  }
  return w.buffer();
}

Network decode_network(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw IoError("not a ZOFA1 model file (bad magic)");
  const std::uint32_t len = r.u32();
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(r.bytes(len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model descriptor: ") + e.what());
  }
  Network net;
  try {
    net.feature_tap = desc.at("feature_tap").get<std::size_t>();
    for (const auto& jl : desc.at("layers")) {
      Layer l;
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      l.epsilon = jl.value("epsilon", l.kind == LayerKind::layernorm ? 1e-5 : 0.0);
      for (const auto& jp : jl.at("params")) {
        auto shape = jp.at("shape").get<std::vector<std::size_t>>();
        l.params.push_back({jp.at("name").get<std::string>(), Tensor(shape), jp.at("adapted").get<bool>()});
      }
      net.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model descriptor: ") + e.what());
  }
  for (auto& l : net.layers)
    for (auto& p : l.params) {
      auto vals = r.f64s(p.value.size());
      std::copy(vals.begin(), vals.end(), p.value.values().begin());
    }
  const auto f = desc.value("source_stats", std::size_t{0});
  if (f > 0) {
    SourceStats s;
    s.mean = Tensor::vector(r.f64s(f));
    s.stddev = Tensor::vector(r.f64s(f));
    net.source_stats = std::move(s);
  }
  if (!r.at_end()) throw IoError("trailing bytes after model payload");
  net.validate();
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) { write_file(path, encode_network(net)); }

Network load_network(const std::filesystem::path& path) { return decode_network(read_file(path)); }

}  // namespace zofa
