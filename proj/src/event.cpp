#include "evrwkv/event.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evr {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};

void validate_and_sort(EventStream& s, int width, int height) {
    int max_x = -1, max_y = -1;
    for (const Event& e : s.events) {
        max_x = std::max(max_x, static_cast<int>(e.x));
        max_y = std::max(max_y, static_cast<int>(e.y));
    }
    s.width = width > 0 ? width : max_x + 1;
    s.height = height > 0 ? height : max_y + 1;
    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const Event& e = s.events[i];
        if (e.x >= s.width || e.y >= s.height)
            throw std::runtime_error("event " + std::to_string(i) + ": coordinate (" +
                                     std::to_string(e.x) + "," + std::to_string(e.y) +
                                     ") outside " + std::to_string(s.width) + "x" +
                                     std::to_string(s.height));
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
}

EventStream parse_csv(const std::string& path, int width, int height) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    EventStream s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        // skip an optional header on the first line
        if (lineno == 1 && line.find_first_not_of("0123456789,-+. \t\r") != std::string::npos)
            continue;
        std::istringstream ss(line);
        std::string field;
        long long vals[4];
        for (int f = 0; f < 4; ++f) {
            if (!std::getline(ss, field, ','))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected 4 comma-separated fields");
            try {
                vals[f] = std::stoll(field);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": malformed field '" + field + "'");
            }
        }
        if (vals[0] < 0)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": negative timestamp");
        if (vals[1] < 0 || vals[2] < 0 || vals[1] > 0xffff || vals[2] > 0xffff)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": coordinate out of range");
        if (vals[3] != -1 && vals[3] != 0 && vals[3] != 1)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": polarity must be -1, 0 or 1");
        Event e;
        e.t = static_cast<std::uint64_t>(vals[0]);
        e.x = static_cast<std::uint16_t>(vals[1]);
        e.y = static_cast<std::uint16_t>(vals[2]);
        e.polarity = vals[3] <= 0 ? -1 : 1;  // 0 maps to -1
        s.events.push_back(e);
    }
    validate_and_sort(s, width, height);
    return s;
}

EventStream parse_binary(const std::string& path, int width, int height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": missing EVT1 magic header");
    std::uint16_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 2);
    in.read(reinterpret_cast<char*>(&w), 2);
    if (!in) throw std::runtime_error(path + ": truncated header");
    EventStream s;
    char rec[13];
    while (in.read(rec, 13)) {
        Event e;
        std::memcpy(&e.t, rec, 8);
        std::memcpy(&e.x, rec + 8, 2);
        std::memcpy(&e.y, rec + 10, 2);
        e.polarity = static_cast<std::int8_t>(rec[12]);
        if (e.polarity != -1 && e.polarity != 1)
            throw std::runtime_error(path + ": invalid polarity byte in record " +
                                     std::to_string(s.events.size()));
        s.events.push_back(e);
    }
    if (in.gcount() != 0) throw std::runtime_error(path + ": trailing partial record");
    validate_and_sort(s, width > 0 ? width : w, height > 0 ? height : h);
    return s;
}

}  // namespace

EventStream parse_events(const std::string& path, EventFormat format, int width, int height) {
    return format == EventFormat::csv ? parse_csv(path, width, height)
                                      : parse_binary(path, width, height);
}

void write_events(const std::string& path, const EventStream& s, EventFormat format) {
    if (format == EventFormat::csv) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << "t_us,x,y,p\n";
        for (const Event& e : s.events)
            out << e.t << "," << e.x << "," << e.y << "," << static_cast<int>(e.polarity) << "\n";
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path);
        out.write(kMagic, 4);
        std::uint16_t h = static_cast<std::uint16_t>(s.height);
        std::uint16_t w = static_cast<std::uint16_t>(s.width);
        out.write(reinterpret_cast<const char*>(&h), 2);
        out.write(reinterpret_cast<const char*>(&w), 2);
        for (const Event& e : s.events) {
            char rec[13];
            std::memcpy(rec, &e.t, 8);
            std::memcpy(rec + 8, &e.x, 2);
            std::memcpy(rec + 10, &e.y, 2);
            rec[12] = static_cast<char>(e.polarity);
            out.write(rec, 13);
        }
    }
}

VoxelGrid voxelize(const EventStream& s, int B, int H, int W, std::uint64_t t_start,
                   std::uint64_t t_end) {
    if (B < 1) throw std::invalid_argument("voxelize: B must be >= 1");
    if (t_end <= t_start) throw std::invalid_argument("voxelize: degenerate time window");
    VoxelGrid g;
    g.data = Tensor::zeros({B, H, W});
    g.t_start = t_start;
    g.t_end = t_end;
    double span = static_cast<double>(t_end - t_start);
    for (const Event& e : s.events) {
        if (e.t < t_start || e.t > t_end) {
            ++g.dropped;
            continue;
        }
        double tau = (B - 1) * (static_cast<double>(e.t - t_start) / span);
        int lo = std::min(static_cast<int>(std::floor(tau)), B - 1);
        double frac = tau - lo;
        double p = static_cast<double>(e.polarity);
        g.data.at3(lo, e.y, e.x) += p * (1.0 - frac);
        if (frac > 0.0 && lo + 1 < B) g.data.at3(lo + 1, e.y, e.x) += p * frac;
    }
    return g;
}

VoxelGrid voxelize(const EventStream& s, int B, int H, int W) {
    if (s.events.empty()) {
        VoxelGrid g;
        g.data = Tensor::zeros({B, H, W});
        g.t_end = 1;
        return g;
    }
    std::uint64_t t0 = s.events.front().t, t1 = s.events.back().t;
    if (t1 == t0) t1 = t0 + 1;  // all events land in bin 0
    return voxelize(s, B, H, W, t0, t1);
}

VoxelGrid normalize_voxel(const VoxelGrid& v, VoxelNorm mode) {
    VoxelGrid out = v;
    if (mode == VoxelNorm::none) return out;
    if (mode == VoxelNorm::max_abs) {
        double m = out.data.max_abs();
        if (m > 0.0)
            for (double& x : out.data.data) x /= m;
    } else {
        double sum = 0.0, sum2 = 0.0;
        std::int64_t n = 0;
        for (double x : out.data.data)
            if (x != 0.0) {
                sum += x;
                sum2 += x * x;
                ++n;
            }
        if (n > 0) {
            double mean = sum / n;
            double var = sum2 / n - mean * mean;
            double sd = std::sqrt(std::max(var, 0.0));
            if (sd > 0.0)
                for (double& x : out.data.data) x /= sd;
        }
    }
    return out;
}

}  // namespace evr
