#include "image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace ldit {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
    if (w < 1 || h < 1) throw_validation("image: dimensions must be >= 1");
    data.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < data.size(); i += 3) {
        data[i] = fill[0];
        data[i + 1] = fill[1];
        data[i + 2] = fill[2];
    }
}

Rgb Image::get(int x, int y) const {
    const std::size_t off = (static_cast<std::size_t>(y) * width + x) * 3;
    return {data[off], data[off + 1], data[off + 2]};
}

void Image::set(int x, int y, Rgb c) {
    const std::size_t off = (static_cast<std::size_t>(y) * width + x) * 3;
    data[off] = c[0];
    data[off + 1] = c[1];
    data[off + 2] = c[2];
}

std::string encode_ppm(const Image& img) {
    std::ostringstream os;
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
    return os.str();
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open for writing: " + path);
    const std::string bytes = encode_ppm(img);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw_io("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw_parse(path + ": not a binary PPM (P6)");
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (!f || w < 1 || h < 1 || maxval != 255)
        throw_parse(path + ": unsupported PPM header");
    f.get();  // single whitespace after maxval
    Image img(w, h);
    f.read(reinterpret_cast<char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
    if (!f) throw_parse(path + ": truncated pixel data");
    return img;
}

Image heatmap_to_image(const std::vector<double>& values, int h, int w) {
    if (static_cast<std::size_t>(h) * w != values.size())
        throw_dimension("heatmap: value count does not match grid");
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = values[static_cast<std::size_t>(y) * w + x];
            v = std::clamp(v, 0.0, 1.0);
            // black -> red -> yellow -> white ramp
            const double r = std::clamp(3.0 * v, 0.0, 1.0);
            const double g = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
            const double b = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
            img.set(x, y,
                    {static_cast<std::uint8_t>(std::lround(255 * r)),
                     static_cast<std::uint8_t>(std::lround(255 * g)),
                     static_cast<std::uint8_t>(std::lround(255 * b))});
        }
    return img;
}

}  // namespace ldit
