#pragma once

// Run manifest: records, per stage, the input signature it ran under and the
// content hashes of its outputs. Downstream stages refuse to start unless
// their declared upstream outputs exist with matching hashes; re-running a
// stage whose signature is unchanged is a no-op.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/common.hpp"

namespace ctrlcot {

struct StageRecord {
  std::string signature;                        // hash of config + inputs
  std::map<std::string, std::string> outputs;   // run-dir-relative path -> hash
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, StageRecord> stages;
  std::map<std::string, std::int64_t> seeds;

  nlohmann::json to_json() const {
    nlohmann::json stages_json = nlohmann::json::object();
    for (const auto& [name, record] : stages) {
      stages_json[name] = {{"signature", record.signature}, {"outputs", record.outputs}};
    }
    return nlohmann::json{{"run_id", run_id},
                          {"config_hash", config_hash},
                          {"stages", stages_json},
                          {"seeds", seeds}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.run_id = j.value("run_id", std::string());
    m.config_hash = j.value("config_hash", std::string());
    if (j.contains("stages")) {
      for (const auto& [name, record] : j["stages"].items()) {
        StageRecord r;
        r.signature = record.value("signature", std::string());
        if (record.contains("outputs"))
          r.outputs = record["outputs"].get<std::map<std::string, std::string>>();
        m.stages[name] = std::move(r);
      }
    }
    if (j.contains("seeds")) m.seeds = j["seeds"].get<std::map<std::string, std::int64_t>>();
    return m;
  }

  void save(const std::string& path) const { write_file(path, to_json().dump(2) + "\n"); }

  static RunManifest load_or_empty(const std::string& path) {
    if (!file_exists(path)) return {};
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad manifest " + path + ": " + e.what());
    }
  }

  /// True when `stage` has run and all of its recorded outputs still exist
  /// with the recorded hashes.
  bool outputs_intact(const std::string& stage, const std::string& run_dir) const {
    const auto it = stages.find(stage);
    if (it == stages.end()) return false;
    for (const auto& [rel_path, hash] : it->second.outputs) {
      const std::string path = run_dir + "/" + rel_path;
      if (!file_exists(path) || file_hash(path) != hash) return false;
    }
    return true;
  }

  /// Throws unless every upstream stage has intact outputs.
  void require_upstreams(const std::string& stage, const std::vector<std::string>& upstreams,
                         const std::string& run_dir) const {
    for (const auto& upstream : upstreams) {
      if (!outputs_intact(upstream, run_dir))
        throw StageError("stage '" + stage + "' requires upstream '" + upstream +
                         "' to have run first (missing or stale outputs in " + run_dir + ")");
    }
  }

  /// Combined hash of the upstreams' recorded output hashes, for signatures.
  std::string upstream_digest(const std::vector<std::string>& upstreams) const {
    std::string acc;
    for (const auto& upstream : upstreams) {
      const auto it = stages.find(upstream);
      if (it == stages.end()) continue;
      for (const auto& [rel_path, hash] : it->second.outputs) acc += rel_path + "=" + hash + ";";
    }
    return to_hex(fnv1a64(acc));
  }
};

}  // namespace ctrlcot
