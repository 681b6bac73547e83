#include "cseg/snapshot.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cseg {

namespace io {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> buf;
    std::memcpy(buf.data(), &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
    std::array<char, sizeof(U)> buf;
    read_exact(is, buf.data(), buf.size(), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    U v;
    std::memcpy(&v, buf.data(), sizeof(U));
    return v;
}

}  // namespace

void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError(std::string("truncated file while reading ") + what);
}

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, v); }
void write_f64(std::ostream& os, double v) { put_le(os, v); }

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, const char* what) { return get_le<std::uint64_t>(is, what); }
float read_f32(std::istream& is, const char* what) { return get_le<float>(is, what); }
double read_f64(std::istream& is, const char* what) { return get_le<double>(is, what); }

std::string read_string(std::istream& is, const char* what, std::size_t max_len) {
    const std::uint32_t n = read_u32(is, what);
    if (n > max_len) throw FormatError(std::string("implausible string length while reading ") + what);
    std::string s(n, '\0');
    read_exact(is, s.data(), n, what);
    return s;
}

}  // namespace io

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("CSEG", 4);
    io::write_u32(os, kSnapshotVersion);
    io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape().dims()) io::write_u32(os, static_cast<std::uint32_t>(d));
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    } else {
        for (float v : t.values()) io::write_f32(os, v);
    }
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    io::read_exact(is, magic, 4, "tensor magic");
    if (std::memcmp(magic, "CSEG", 4) != 0) throw FormatError("bad tensor snapshot magic");
    const std::uint32_t version = io::read_u32(is, "tensor version");
    if (version != kSnapshotVersion) {
        throw FormatError("unsupported tensor snapshot version " + std::to_string(version));
    }
    const std::uint32_t rank = io::read_u32(is, "tensor rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
        d = io::read_u32(is, "tensor dims");
        if (d == 0) throw FormatError("zero tensor dimension");
        n *= d;
        if (n > (std::size_t{1} << 32)) throw FormatError("implausible tensor size");
    }
    std::vector<float> values(n);
    if constexpr (std::endian::native == std::endian::little) {
        io::read_exact(is, reinterpret_cast<char*>(values.data()), n * sizeof(float), "tensor values");
    } else {
        for (auto& v : values) v = io::read_f32(is, "tensor values");
    }
    return Tensor(Shape(std::move(dims)), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
    if (!os) throw DataError("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return read_tensor(is);
}

}  // namespace cseg
