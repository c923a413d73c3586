#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnlab/rng.hpp"
#include "attnlab/version.hpp"

namespace attnlab {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// write-then-rename so readers never observe a partial artifact
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::create_directories(path.parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string hex64(std::uint64_t x) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[x & 0xf];
        x >>= 4;
    }
    return s;
}

inline std::string config_hash_of(const std::string& config_bytes) {
    return hex64(fnv1a(config_bytes));
}

// RFC-4180 quoting: quote fields containing comma, quote or newline.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// CSV with leading '#' metadata lines (version + config hash) before the header.
class CsvWriter {
public:
    CsvWriter(std::string subcommand, std::string config_hash) {
        out_ << "# attnlab v" << ATTNLAB_VERSION << " subcommand=" << subcommand
             << " config_hash=" << config_hash << "\n";
    }

    void header(const std::vector<std::string>& cols) { raw_row(cols); }

    void row(const std::vector<std::string>& cols) { raw_row(cols); }

    std::string str() const { return out_.str(); }

private:
    void raw_row(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i) out_ << ",";
            out_ << csv_field(cols[i]);
        }
        out_ << "\n";
    }
    std::ostringstream out_;
};

}  // namespace attnlab
