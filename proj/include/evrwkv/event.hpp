#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evrwkv/tensor.hpp"

namespace evr {

struct Event {
    std::uint64_t t = 0;  // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t polarity = 1;  // -1 or +1
};

struct EventStream {
    std::vector<Event> events;  // sorted non-decreasing in t
    int width = 0;
    int height = 0;
};

struct VoxelGrid {
    Tensor data;  // (B,H,W)
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 0;
    std::int64_t dropped = 0;  // events outside [t_start, t_end]
};

enum class EventFormat { csv, binary };
enum class VoxelNorm { none, max_abs, std_nonzero };

// CSV rows are `t_us,x,y,p` with p in {-1,1} or {0,1} (0 maps to -1); an
// optional header line is skipped. Binary is little-endian "EVT1" + u16 H +
// u16 W followed by 13-byte records (u64 t, u16 x, u16 y, i8 p).
// width/height <= 0 means infer from the data (binary carries them).
EventStream parse_events(const std::string& path, EventFormat format, int width = 0,
                         int height = 0);
void write_events(const std::string& path, const EventStream& s, EventFormat format);

// Bilinear temporal binning: an event at normalized position
// tau = (t - t_start)/(t_end - t_start) * (B-1) splits its polarity between
// bins floor(tau) and floor(tau)+1 with weights (1-frac, frac), so the total
// deposited mass equals the polarity sum of in-window events.
VoxelGrid voxelize(const EventStream& s, int B, int H, int W, std::uint64_t t_start,
                   std::uint64_t t_end);
VoxelGrid voxelize(const EventStream& s, int B, int H, int W);  // window = [first t, last t]

VoxelGrid normalize_voxel(const VoxelGrid& v, VoxelNorm mode);

}  // namespace evr
