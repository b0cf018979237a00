#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace bladecomp {

using json = nlohmann::json;

enum class ErrorCode {
  invalid_argument,
  not_found,
  conflict,
  integrity,
  insufficient_data,
  parse,
  config,
  backend_failure,
  no_rule,
  tool_failure,
  io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Hex-encoded SHA-256.
std::string sha256_hex(std::string_view data);

// Digest of a JSON value in canonical (sorted-key, compact) form.
std::string json_digest(const json& value);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
// Lower-case and collapse internal whitespace runs to a single space.
std::string normalize_text(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
bool contains_word(std::string_view haystack, std::string_view needle);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

// Fixed-point rendering used for report tables ("%.6f").
std::string format_fixed(double value, int decimals = 6);

}  // namespace bladecomp
