#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

// Error taxonomy mirrors the CLI exit codes: config 1, data 2, numeric 3.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fewshot
