#pragma once

#include <stdexcept>
#include <string>

namespace hytwin {

/// Exception carrying a stable, machine-readable code such as
/// "CSV_MALFORMED" or "STEP_DEGENERATE". what() is "CODE: detail".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail);

    [[nodiscard]] const std::string& code() const noexcept { return code_; }
    [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

private:
    std::string code_;
    std::string detail_;
};

}  // namespace hytwin
