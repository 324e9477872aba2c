#pragma once

#include <stdexcept>
#include <string>

namespace stocfl {

// Base class for all library errors.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shapes or vector lengths do not line up.
struct dimension_error : error {
    explicit dimension_error(const std::string& msg) : error(msg) {}
};

// A parameter or input value is outside its allowed domain.
struct value_error : error {
    explicit value_error(const std::string& msg) : error(msg) {}
};

// A shard whose anchor gradient is (near-)zero cannot be normalized.
struct degenerate_shard_error : error {
    explicit degenerate_shard_error(const std::string& msg) : error(msg) {}
};

enum class idx_fault { bad_magic, truncated, count_mismatch };

// IDX file problems carry a machine-checkable fault kind.
struct idx_error : error {
    idx_fault fault;
    idx_error(idx_fault f, const std::string& msg) : error(msg), fault(f) {}
};

// Configuration file problems; line = 0 when not tied to a specific line.
struct config_error : error {
    int line;
    explicit config_error(const std::string& msg, int line_no = 0)
        : error(msg), line(line_no) {}
};

}  // namespace stocfl
