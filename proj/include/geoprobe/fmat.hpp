#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace geoprobe::fmat {

// Dense float32 block: magic "FMAT", u32 LE format version, u64 LE rows,
// u64 LE cols, then rows*cols little-endian IEEE-754 floats row-major.

inline constexpr std::uint32_t kFormatVersion = 1;

struct Block {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<float> values;  // row-major
};

void write_block(std::ostream& out, const Block& block);
// Throws DataError on bad magic, unknown version, or truncated payload.
Block read_block(std::istream& in);

}  // namespace geoprobe::fmat
