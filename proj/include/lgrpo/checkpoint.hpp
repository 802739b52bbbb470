#pragma once

// Trainer checkpoints: step, RNG state, current and reference policies.
// A CRC-32 over the payload guards against truncated or edited files.

#include <boost/crc.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/grpo.hpp"
#include "lgrpo/policy.hpp"

namespace lgrpo {

inline constexpr const char* kCheckpointFormat = "lgrpo-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace checkpoint_detail {

inline std::string crc_hex(const std::string& s) {
  boost::crc_32_type crc;
  crc.process_bytes(s.data(), s.size());
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc.checksum());
  return buf;
}

}  // namespace checkpoint_detail

inline nlohmann::ordered_json checkpoint_json(const TrainState& s,
                                              const std::string& config_hash = "") {
  std::ostringstream rng;
  rng << s.rng;
  nlohmann::ordered_json payload;
  payload["step"] = s.step;
  payload["rng"] = rng.str();
  payload["listener_failures"] = s.listener_failures;
  payload["config_hash"] = config_hash;
  payload["policy"] = to_json(s.policy);
  payload["reference"] = to_json(s.reference);

  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  // Checksum over the key-sorted dump, which survives a parse round trip.
  j["checksum"] = checkpoint_detail::crc_hex(nlohmann::json(payload).dump());
  j["payload"] = std::move(payload);
  return j;
}

inline TrainState checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw Error("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw Error("unsupported checkpoint version");
    const auto& payload = j.at("payload");
    if (checkpoint_detail::crc_hex(payload.dump()) != j.at("checksum").get<std::string>())
      throw Error("checkpoint checksum mismatch");
    Rng rng;
    std::istringstream in(payload.at("rng").get<std::string>());
    in >> rng;
    if (!in) throw Error("bad RNG state in checkpoint");
    return TrainState(payload.at("step").get<std::int64_t>(), rng,
                      toy_policy_from_json(payload.at("policy")),
                      toy_policy_from_json(payload.at("reference")),
                      payload.at("listener_failures").get<std::int64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
}

// Writes via a temporary file and rename so a crash never leaves a partial
// checkpoint behind.
inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path,
                            const std::string& config_hash = "") {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + tmp.string() + "'");
    out << checkpoint_json(s, config_hash).dump(1) << "\n";
    if (!out) throw Error("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

// Loads a policy from either a checkpoint (its current policy) or a bare
// policy JSON file.
inline ToyPolicy load_toy_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open policy '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed policy file: ") + e.what());
  }
  if (j.contains("format")) return checkpoint_from_json(j).policy;
  return toy_policy_from_json(j);
}

}  // namespace lgrpo
