#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapecodec/ad.hpp"
#include "shapecodec/fields.hpp"
#include "shapecodec/rng.hpp"

namespace shapecodec::io {

// Single-file checkpoint container: magic, u64 little-endian header length,
// JSON header (schema, stage, config snapshot, RNG state, array directory,
// content hash), then the raw little-endian float64 arrays in directory
// order. Headers dump with sorted keys, so save -> load -> save is
// byte-identical.
struct Checkpoint {
    int schema = 1;
    std::string stage;
    long long step = 0;
    long long opt_step = 0;
    nlohmann::json config;
    nlohmann::json extra;  // stage-specific metadata (latent stats, vae hash, ...)
    RandomStream::State rng{};
    std::map<std::string, ad::Mat> arrays;
    std::string content_hash;  // filled by save/load
};

void save_checkpoint(Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a 64-bit, hex encoded; covers the config dump plus array names/bytes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string content_hash(const nlohmann::json& config, const std::map<std::string, ad::Mat>& arrays);

// Raw little-endian float32 array with a JSON sidecar describing shape,
// plane order, and dtype.
void export_triplane(const fields::Triplane& t, const std::string& base_path);
void export_grid(const fields::OccupancyGrid& g, const std::string& base_path);

class JsonlLogger {
public:
    JsonlLogger() = default;
    explicit JsonlLogger(const std::string& path);
    void log(const nlohmann::json& record);
    bool open() const { return out_.is_open(); }

private:
    std::ofstream out_;
};

}  // namespace shapecodec::io
