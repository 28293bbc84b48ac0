#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cprloop {

inline constexpr int kRows = 13;
inline constexpr int kCols = 14;
inline constexpr int kCellsPerSide = kRows * kCols;      // 182
inline constexpr int kFeatureDim = 2 * kCellsPerSide;    // 364, palm then dorsum
inline constexpr int kAdcMax = 8191;                     // 13-bit
inline constexpr std::int64_t kFramePeriodUs = 70'000;   // nominal 14.3 Hz

// Row-major dense 2-D array. Dimensions are runtime values so malformed
// inputs can be represented and rejected by validation.
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool has_shape(int r, int c) const {
        return rows == r && cols == c && data.size() == static_cast<std::size_t>(r) * c;
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using CountGrid = Grid<std::uint16_t>;
using SignalGrid = Grid<double>;

}  // namespace cprloop
