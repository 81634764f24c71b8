#include "geoprobe/fmat.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "geoprobe/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "FMAT I/O assumes a little-endian host");
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace geoprobe::fmat {

namespace {
constexpr std::array<char, 4> kMagic{'F', 'M', 'A', 'T'};

template <typename T>
void write_le(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw DataError("FMAT block truncated");
    return value;
}
}  // namespace

void write_block(std::ostream& out, const Block& block) {
    if (block.values.size() != block.rows * block.cols)
        throw DataError("FMAT write: value count does not match rows*cols");
    out.write(kMagic.data(), kMagic.size());
    write_le<std::uint32_t>(out, kFormatVersion);
    write_le<std::uint64_t>(out, block.rows);
    write_le<std::uint64_t>(out, block.cols);
    if (!block.values.empty())
        out.write(reinterpret_cast<const char*>(block.values.data()),
                  static_cast<std::streamsize>(block.values.size() * sizeof(float)));
    if (!out) throw DataError("FMAT write failed");
}

Block read_block(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw DataError("FMAT block: bad magic");
    const auto version = read_le<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw DataError("FMAT block: unsupported format version " + std::to_string(version));
    Block block;
    block.rows = read_le<std::uint64_t>(in);
    block.cols = read_le<std::uint64_t>(in);
    const std::uint64_t count = block.rows * block.cols;
    if (block.rows != 0 && count / block.rows != block.cols)
        throw DataError("FMAT block: dimension overflow");
    block.values.resize(count);
    if (count > 0) {
        in.read(reinterpret_cast<char*>(block.values.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw DataError("FMAT block truncated");
    }
    return block;
}

}  // namespace geoprobe::fmat
