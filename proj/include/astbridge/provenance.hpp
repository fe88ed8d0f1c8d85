#pragma once

// Provenance record stamped on every artifact: tool version, a hash of the
// effective configuration, the seed, and hashes of the inputs. No
// timestamps, so identical runs give identical bytes.

#include <cstdint>
#include <map>
#include <string>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/hash.hpp"

namespace astbridge {

inline constexpr const char* kToolName = "astbridge";
inline constexpr const char* kToolVersion = "0.1.0";

struct Provenance {
  json config = json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;

  std::string config_hash() const { return hash_string(config.dump()); }

  json to_json() const {
    return {{"tool", kToolName},
            {"version", kToolVersion},
            {"config_hash", config_hash()},
            {"config", config},
            {"seed", seed},
            {"inputs", input_hashes}};
  }
};

}  // namespace astbridge
