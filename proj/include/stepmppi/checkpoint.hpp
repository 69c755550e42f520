#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "stepmppi/policy.hpp"
#include "stepmppi/rng.hpp"

namespace stepmppi {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "stepmppi-policy";
inline constexpr int kCheckpointVersion = 1;

/// 16 hex digits of the FNV-1a hash of the compact JSON dump.
inline std::string config_hash(const json& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(cfg.dump())));
  return buf;
}

struct Checkpoint {
  PolicyParams params;
  Normalization norm;
  json metadata = json::object();
  std::string hash;  ///< config hash of the training run
};

namespace detail {
inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vec json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<long>(v.size()));
}
}  // namespace detail

/// Self-describing JSON document. Doubles are written with round-trip
/// precision, so load(save(p)) is bit-exact.
inline json checkpoint_to_json(const Checkpoint& c) {
  const auto& s = c.params.shape;
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["shape"] = {{"input_dim", s.input_dim},
                {"hidden", s.hidden},
                {"output_dim", s.output_dim},
                {"cholesky_head", s.cholesky_head},
                {"activation", to_string(s.activation)}};
  j["u_min"] = detail::vec_json(c.params.u_min);
  j["u_max"] = detail::vec_json(c.params.u_max);
  j["params"] = detail::vec_json(c.params.flat());
  j["norm_mean"] = detail::vec_json(c.norm.mean);
  j["norm_std"] = detail::vec_json(c.norm.std);
  j["metadata"] = c.metadata;
  j["config_hash"] = c.hash;
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw FormatError("checkpoint: unexpected format tag");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported version " + j.at("version").dump());
    const json& sj = j.at("shape");
    PolicyShape s;
    s.input_dim = sj.at("input_dim");
    s.hidden = sj.at("hidden").get<std::vector<int>>();
    s.output_dim = sj.at("output_dim");
    s.cholesky_head = sj.at("cholesky_head");
    s.activation = activation_from_string(sj.at("activation"));
    Checkpoint c;
    c.params = PolicyParams::zeros(s, detail::json_vec(j.at("u_min")), detail::json_vec(j.at("u_max")));
    const Vec flat = detail::json_vec(j.at("params"));
    if (flat.size() != c.params.size())
      throw FormatError("checkpoint: expected " + std::to_string(c.params.size()) + " parameters, found " +
                        std::to_string(flat.size()));
    c.params.set_flat(flat);
    c.norm.mean = detail::json_vec(j.at("norm_mean"));
    c.norm.std = detail::json_vec(j.at("norm_std"));
    if (c.norm.mean.size() != s.input_dim || c.norm.std.size() != s.input_dim)
      throw FormatError("checkpoint: normalization size does not match input_dim");
    if ((c.norm.std.array() <= 0.0).any()) throw FormatError("checkpoint: normalization std must be positive");
    c.metadata = j.value("metadata", json::object());
    c.hash = j.value("config_hash", std::string());
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed document: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void checkpoint_save(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("checkpoint: cannot open '" + path + "' for writing");
  out << checkpoint_to_json(c).dump(1) << '\n';
  if (!out) throw Error("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("checkpoint: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace stepmppi
