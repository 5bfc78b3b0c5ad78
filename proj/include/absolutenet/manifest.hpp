#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/config.hpp"

namespace absnet {

inline constexpr const char* kArtifactVersion = "absolutenet 0.1.0";

/// One manifest per CLI run: the command, the fully resolved configuration,
/// the seed and the produced files. Feeding the manifest back through
/// --config replays the run (bit-identical in 32-bit single-threaded mode;
/// timestamps live in comments so they do not participate).
struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    ConfigMap config;
    std::vector<std::string> outputs;

    void write(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("manifest: cannot open '" + path + "'");
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        os << "# " << kArtifactVersion << " run manifest\n";
        os << "# written_at: " << stamp << "\n";
        os << "command = " << command << "\n";
        os << "seed = " << seed << "\n";
        for (const auto& [k, v] : config.entries()) os << k << " = " << v << "\n";
        for (std::size_t i = 0; i < outputs.size(); ++i)
            os << "output" << i << " = " << outputs[i] << "\n";
    }
};

}  // namespace absnet
