#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "cseg/tensor.hpp"

namespace cseg {

// Tensor snapshot: "CSEG", u32 version, u32 rank, u32 dims[rank], f32 values (all little-endian,
// row-major). Double tensors are narrowed to f32 on write.
inline constexpr std::uint32_t kSnapshotVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);

std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
std::string read_string(std::istream& is, const char* what, std::size_t max_len = 1 << 24);
void read_exact(std::istream& is, char* dst, std::size_t n, const char* what);

}  // namespace io

}  // namespace cseg
