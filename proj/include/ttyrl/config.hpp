#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace ttyrl {

// Flat `key = value` text. '#' starts a comment; blank lines are skipped.
// Later duplicates override earlier ones.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

double kv_double(const KeyValues& kv, const std::string& key, double fallback);
long long kv_int(const KeyValues& kv, const std::string& key, long long fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace ttyrl
