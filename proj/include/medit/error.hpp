#pragma once

#include <stdexcept>
#include <string>

namespace medit {

// Config-level problems (bad file, bad key, missing path). CLI maps these
// to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Runtime failures inside the pipeline (divergence, singular solve,
// sequence too long). CLI maps these to exit code 3.
struct PipelineError : std::runtime_error {
    explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace medit
