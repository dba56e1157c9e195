#include "spme/io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace spme {

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hash_hex(std::uint64_t hash) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::string render_csv(const std::vector<CsvColumn>& columns) {
    std::string out;
    std::size_t rows = columns.empty() ? 0 : columns.front().values.size();
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].values.size() != rows) {
            throw std::invalid_argument("CSV column '" + columns[c].name + "' has " +
                                        std::to_string(columns[c].values.size()) + " rows, expected " +
                                        std::to_string(rows));
        }
        out += (c ? "," : "") + columns[c].name;
    }
    out += '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (c) out += ',';
            out += format_double(columns[c].values[r]);
        }
        out += '\n';
    }
    return out;
}

void write_text(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
    file.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!file) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace spme
