#include "evrwkv/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace evr {

namespace {

[[noreturn]] void fail(const std::string& path, std::int64_t offset, const std::string& what) {
    throw std::runtime_error(path + ": byte " + std::to_string(offset) + ": " + what);
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) fail(path, in.tellg() == -1 ? 0 : static_cast<std::int64_t>(in.tellg()),
                          "unexpected end of header");
    return tok;
}

int parse_int(const std::string& tok, std::istream& in, const std::string& path,
              const std::string& what) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        fail(path, static_cast<std::int64_t>(in.tellg()), "invalid " + what + " '" + tok + "'");
    }
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string magic = next_token(in, path);
    int channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        fail(path, 0, "unsupported magic '" + magic + "' (want P5 or P6)");
    int W = parse_int(next_token(in, path), in, path, "width");
    int H = parse_int(next_token(in, path), in, path, "height");
    int maxval = parse_int(next_token(in, path), in, path, "maxval");
    if (maxval != 255)
        fail(path, static_cast<std::int64_t>(in.tellg()),
             "only 8-bit images supported (maxval 255), got " + std::to_string(maxval));
    std::int64_t data_start = static_cast<std::int64_t>(in.tellg());
    std::vector<unsigned char> buf(static_cast<std::size_t>(channels) * H * W);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        fail(path, data_start + in.gcount(), "truncated pixel data");
    Tensor out({channels, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < channels; ++c)
                out.at3(c, y, x) =
                    buf[(static_cast<std::size_t>(y) * W + x) * channels + c] / 255.0;
    return out;
}

void write_image(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
        throw std::invalid_argument("write_image: expected (3,H,W) or (1,H,W), got " +
                                    image.shape_str());
    int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
        out << (C == 3 ? "P6" : "P5") << "\n" << W << " " << H << "\n255\n";
        std::vector<unsigned char> buf(static_cast<std::size_t>(C) * H * W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    double v = std::min(1.0, std::max(0.0, image.at3(c, y, x)));
                    buf[(static_cast<std::size_t>(y) * W + x) * C + c] =
                        static_cast<unsigned char>(std::lround(v * 255.0));
                }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error(tmp + ": write failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error(path + ": atomic rename failed");
}

}  // namespace evr
