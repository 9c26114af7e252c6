#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

namespace expert {

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 over length-prefixed fields, so ("ab","c") and ("a","bc") differ.
std::string field_hash(std::initializer_list<std::string_view> fields);

}  // namespace expert
