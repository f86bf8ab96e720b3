#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "multimix/config.hpp"
#include "multimix/optim.hpp"
#include "multimix/params.hpp"

namespace multimix {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

// Every random stream is keyed by (seed, epoch, step, ...), so seed and the
// two counters are the complete RNG state.
struct Checkpoint {
    ModelConfig model;
    ParameterSet params;
    std::optional<AdamState> optimizer;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;  // completed epochs
    std::uint64_t seed = 0;
    std::string metadata = "{}";  // free-form JSON object
    DType dtype = DType::f64;
};

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// LoadError on unreadable or truncated files, VersionError on a format
// version or parameter layout mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the file bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace multimix
