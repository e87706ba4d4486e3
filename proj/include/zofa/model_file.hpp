#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "zofa/network.hpp"

namespace zofa {

// Model file layout:
//   "ZOFA1"
//   u32 descriptor length, UTF-8 JSON topology descriptor
//       {"feature_tap":n,"layers":[{"kind":..,"epsilon":..,
//         "params":[{"name":..,"shape":[..],"adapted":bool},..]},..],
//        "source_stats":F}   (F = 0 when absent)
//   every parameter as little-endian f64, canonical layer-major order
//   m_s block (F f64), sigma_s block (F f64) when F > 0
std::string encode_network(const Network& net);
Network decode_network(std::string_view bytes);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace zofa
