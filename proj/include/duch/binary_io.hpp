#ifndef DUCH_BINARY_IO_HPP_
#define DUCH_BINARY_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace duch::io {

// Little-endian primitive writers/readers over std streams. Every on-disk
// format in this project is little-endian regardless of host order.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_f32(std::ostream& out, float v);
void write_i32(std::ostream& out, std::int32_t v);
void write_bytes(std::ostream& out, std::string_view bytes);

std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
float read_f32(std::istream& in);
std::int32_t read_i32(std::istream& in);
std::string read_bytes(std::istream& in, std::size_t n);

// Opens for binary write/read, throwing on failure (MissingFileError on read).
std::ofstream open_out(const std::filesystem::path& path);
std::ifstream open_in(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace duch::io

#endif  // DUCH_BINARY_IO_HPP_
