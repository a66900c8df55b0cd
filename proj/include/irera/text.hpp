#pragma once

#include <string>
#include <string_view>

namespace irera::text {

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);

/// Lowercases, trims and collapses inner whitespace runs to one space.
/// Label names are compared in this form everywhere.
std::string normalize_name(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix) noexcept;

std::string sha256_hex(std::string_view data);

} // namespace irera::text
