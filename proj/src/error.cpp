#include "hytwin/error.hpp"

namespace hytwin {

Error::Error(std::string code, const std::string& detail)
    : std::runtime_error(detail.empty() ? code : code + ": " + detail), code_(std::move(code)), detail_(detail) {}

}  // namespace hytwin
