#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace skillknn {

/// Trim ends and collapse interior whitespace runs to one space.
std::string normalize_whitespace(std::string_view text);

std::string trim(std::string_view text);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Hash of several fields with unambiguous framing (length-prefixed).
std::string content_key(std::initializer_list<std::string_view> parts);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over `path`, so readers never
/// observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Uniform draw from [0, bound) by rejection on a 64-bit Mersenne Twister.
/// Unlike std::uniform_int_distribution the result is identical across
/// standard library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

/// Fisher-Yates shuffle using uniform_below.
template <typename T>
void portable_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Runs fn(i) for i in [0, count) on up to `max_workers` threads. If any
/// call throws, the exception from the lowest failing index is rethrown
/// after all workers finish.
void parallel_for(std::size_t count, std::size_t max_workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace skillknn
