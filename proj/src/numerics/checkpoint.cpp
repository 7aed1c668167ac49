#include "onerec/numerics/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "onerec/error.hpp"
#include "onerec/io/binary.hpp"

namespace onerec {

namespace {
constexpr char kMagic[8] = {'O', 'N', 'E', 'R', 'E', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;
}  // namespace

void ParamRegistry::add(Parameter& p) {
  if (p.name.empty()) throw ArgumentError("registered parameters must be named");
  if (find(p.name) != nullptr) throw ArgumentError("duplicate parameter name: " + p.name);
  params_.push_back(&p);
}

void ParamRegistry::add(std::vector<Parameter*> ps) {
  for (Parameter* p : ps) add(*p);
}

Parameter* ParamRegistry::find(const std::string& name) const {
  for (Parameter* p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

int64_t ParamRegistry::totalSize() const {
  int64_t n = 0;
  for (const Parameter* p : params_) n += p->value.size();
  return n;
}

void saveCheckpoint(const std::string& path, const ParamRegistry& registry, uint64_t configHash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot open checkpoint for writing: " + path);
  io::HashingWriter w(os);
  w.write(kMagic, sizeof(kMagic));
  w.writeValue(kVersion);
  w.writeValue(static_cast<uint8_t>(sizeof(Real)));
  w.writeValue(configHash);
  w.writeValue(static_cast<uint32_t>(registry.size()));
  for (const Parameter* p : registry.params()) {
    w.writeString(p->name);
    const auto& shape = p->value.shape();
    w.writeValue(static_cast<uint32_t>(shape.size()));
    for (int d : shape) w.writeValue(static_cast<int64_t>(d));
    w.write(p->value.data(), static_cast<size_t>(p->value.size()) * sizeof(Real));
  }
  w.finish();
  if (!os) throw ArgumentError("failed writing checkpoint: " + path);
}

void loadCheckpoint(const std::string& path, ParamRegistry& registry, uint64_t configHash,
                    bool force) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("checkpoint not found: " + path);
  io::HashingReader r(is, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("bad checkpoint magic in " + path);
  }
  const uint32_t version = r.readValue<uint32_t>();
  if (version != kVersion) throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  const uint8_t realBytes = r.readValue<uint8_t>();
  if (realBytes != sizeof(Real)) {
    throw IntegrityError("checkpoint precision (" + std::to_string(realBytes * 8) +
                         "-bit) does not match build (" + std::to_string(sizeof(Real) * 8) + "-bit)");
  }
  const uint64_t storedHash = r.readValue<uint64_t>();
  const uint32_t count = r.readValue<uint32_t>();
  if (count != registry.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                         std::to_string(registry.size()));
  }
  std::vector<std::pair<Parameter*, std::vector<Real>>> staged;
  staged.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.readString();
    const uint32_t rank = r.readValue<uint32_t>();
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.readValue<int64_t>());
    const int64_t n = shapeNumel(shape);
    std::vector<Real> data(static_cast<size_t>(n));
    r.read(data.data(), static_cast<size_t>(n) * sizeof(Real));
    Parameter* p = registry.find(name);
    if (p == nullptr) throw IntegrityError("checkpoint parameter '" + name + "' unknown to this model");
    if (p->value.shape() != shape) {
      throw IntegrityError("checkpoint parameter '" + name + "' has shape " + shapeStr(shape) +
                           ", model expects " + p->value.shapeStr());
    }
    staged.emplace_back(p, std::move(data));
  }
  r.verifyChecksum();
  if (storedHash != configHash && !force) {
    throw ConfigError("checkpoint config hash mismatch (stored " + std::to_string(storedHash) +
                      ", current " + std::to_string(configHash) + "); pass force to load anyway");
  }
  for (auto& [p, data] : staged) {
    p->value = Tensor(p->value.shape(), std::move(data));
  }
}

uint64_t checkpointConfigHash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("checkpoint not found: " + path);
  io::HashingReader r(is, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IntegrityError("bad checkpoint magic in " + path);
  r.readValue<uint32_t>();
  r.readValue<uint8_t>();
  return r.readValue<uint64_t>();
}

}  // namespace onerec
