#pragma once

// Report plumbing for the command-line tool: a manifest section (command,
// resolved configuration, input digests, wall-clock), a human-readable
// report body, and a machine-readable key=value trailer. Reruns with the
// same flags and seed produce byte-identical trailers; the duration line
// lives in the manifest only.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "protoclr/encoder.hpp"
#include "protoclr/version.hpp"

namespace cli {

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_digest(const std::string& path) {
    return hex64(fnv1a64(protoclr::detail::read_file_bytes(path)));
}

inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Report {
public:
    explicit Report(std::string command)
        : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
        manifest_.emplace_back("command", command_);
        manifest_.emplace_back("version", protoclr::kVersion);
    }

    void config(const std::string& key, const std::string& value) {
        manifest_.emplace_back("config." + key, value);
    }
    void config(const std::string& key, double value) { config(key, format_full(value)); }
    void config(const std::string& key, long long value) { config(key, std::to_string(value)); }
    void config(const std::string& key, int value) { config(key, std::to_string(value)); }
    void config(const std::string& key, std::uint64_t value) { config(key, std::to_string(value)); }

    void input_digest(const std::string& name, const std::string& path) {
        manifest_.emplace_back("input_digest." + name, file_digest(path));
    }

    void line(const std::string& text) { body_.push_back(text); }

    template <typename... Args>
    void linef(const char* fmt, Args... args) {
        char buf[512];
        std::snprintf(buf, sizeof buf, fmt, args...);
        body_.emplace_back(buf);
    }

    void trailer(const std::string& key, const std::string& value) {
        trailer_.emplace_back(key, value);
    }
    void trailer(const std::string& key, double value) { trailer(key, format_full(value)); }
    void trailer(const std::string& key, long long value) { trailer(key, std::to_string(value)); }
    void trailer(const std::string& key, int value) { trailer(key, std::to_string(value)); }
    void trailer(const std::string& key, std::uint64_t value) { trailer(key, std::to_string(value)); }

    void print(bool pass) const {
        const auto elapsed = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count();
        std::printf("== manifest ==\n");
        for (const auto& [k, v] : manifest_) std::printf("%s=%s\n", k.c_str(), v.c_str());
        std::printf("duration_ms=%.3f\n", elapsed);
        std::printf("== report ==\n");
        for (const auto& l : body_) std::printf("%s\n", l.c_str());
        std::printf("== trailer ==\n");
        for (const auto& [k, v] : trailer_) std::printf("%s=%s\n", k.c_str(), v.c_str());
        std::printf("status=%s\n", pass ? "pass" : "fail");
        std::fflush(stdout);
    }

private:
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::pair<std::string, std::string>> manifest_;
    std::vector<std::string> body_;
    std::vector<std::pair<std::string, std::string>> trailer_;
};

// Table-style accuracy display: one decimal for means >= 10, two otherwise;
// spreads always with one decimal.
inline std::string format_mean(double mean) {
    char buf[32];
    std::snprintf(buf, sizeof buf, mean >= 10.0 ? "%.1f" : "%.2f", mean);
    return buf;
}

inline std::string format_std(double stddev) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", stddev);
    return buf;
}

} // namespace cli
