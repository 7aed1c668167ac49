#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onerec/numerics/optim.hpp"

namespace onerec {

// Ordered collection of named parameters; the unit of checkpointing.
class ParamRegistry {
 public:
  void add(Parameter& p);
  void add(std::vector<Parameter*> ps);
  const std::vector<Parameter*>& params() const { return params_; }
  Parameter* find(const std::string& name) const;
  size_t size() const { return params_.size(); }
  int64_t totalSize() const;

 private:
  std::vector<Parameter*> params_;
};

// Binary checkpoint container: self-describing header (format version,
// precision, config hash), one record per named parameter, and a trailing
// FNV-1a checksum of everything before it. Round-trips bit-exactly.
void saveCheckpoint(const std::string& path, const ParamRegistry& registry, uint64_t configHash);

// Loads into an existing registry; names and shapes must match exactly.
// A config-hash mismatch raises ConfigError unless force is set; checksum
// or structural corruption raises IntegrityError.
void loadCheckpoint(const std::string& path, ParamRegistry& registry, uint64_t configHash,
                    bool force = false);

uint64_t checkpointConfigHash(const std::string& path);

}  // namespace onerec
