#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace spme {

/// Round-trippable decimal form (%.17g).
std::string format_double(double x);

/// 64-bit FNV-1a, rendered as 16 hex digits by hash_hex.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::uint64_t hash);

struct CsvColumn {
    std::string name;
    std::vector<double> values;
};

/// Header row plus one row per index; all columns must have equal length.
std::string render_csv(const std::vector<CsvColumn>& columns);
void write_text(const std::filesystem::path& path, std::string_view content);

}  // namespace spme
