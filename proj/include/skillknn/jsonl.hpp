#pragma once

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>

/// Line-delimited JSON record helpers shared by every file format.
namespace skillknn::jsonl {

/// Calls fn(record, line_number) for each non-blank line. Lines that are not
/// JSON objects raise Error(Parse) with `source:line`.
void for_each_record(std::string_view contents, std::string_view source,
                     const std::function<void(const nlohmann::json&, std::size_t)>& fn);

/// Compact single-line dump with trailing newline. Invalid UTF-8 raises
/// Error(Validation).
std::string dump_line(const nlohmann::ordered_json& record);
std::string dump_line(const nlohmann::json& record);

/// Drops a trailing line with no newline (a torn append) from a cache file.
std::string_view complete_lines(std::string_view contents);

std::string required_string(const nlohmann::json& record, const char* field);
std::string optional_string(const nlohmann::json& record, const char* field);

}  // namespace skillknn::jsonl
