#pragma once

#include <string_view>

namespace themis {

std::string_view version();
/// `git describe` of the source tree at configure time, or "unknown".
std::string_view git_describe();

}  // namespace themis
