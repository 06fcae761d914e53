#pragma once

#include <filesystem>
#include <string>

#include "amsf/common.hpp"
#include "amsf/params.hpp"

namespace amsf::io {

/// Binary 8-bit grayscale PGM (P5). Values clip to [0, 1] on write and map
/// back to [0, 1] on read.
void write_pgm(const std::filesystem::path& file, const Matrix& image);
Matrix read_pgm(const std::filesystem::path& file);

/// Versioned parameter container with the run's config fingerprint embedded.
void save_checkpoint(const std::filesystem::path& file, const ParamStore& store,
                     const std::string& config_fingerprint);

/// Loads into an existing store; names and shapes must match exactly.
/// Returns the fingerprint stored in the file.
std::string load_checkpoint(const std::filesystem::path& file, ParamStore& store);

/// FNV-1a 64-bit hex digest.
std::string fingerprint(const std::string& text);

}  // namespace amsf::io
