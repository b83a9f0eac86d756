#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace metabalance::io {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path &path);
void write_bytes(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &text);

/// Little-endian IEEE-754 float64 encoding, independent of host byte order.
std::vector<std::uint8_t> encode_f64_le(std::span<const double> values);
/// Throws FormatError if the byte count is not a multiple of 8.
std::vector<double> decode_f64_le(std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

} // namespace metabalance::io
