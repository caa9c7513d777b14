#ifndef LDIT_IMAGE_HPP
#define LDIT_IMAGE_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ldit {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // width * height * 3

    Image() = default;
    Image(int w, int h, Rgb fill = {0, 0, 0});

    Rgb get(int x, int y) const;
    void set(int x, int y, Rgb c);
    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
};

// Binary PPM (P6), 8-bit, bit-exact round trips.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
std::string encode_ppm(const Image& img);

// Grayscale heatmap ([0,1] values, row-major h*w) rendered to an RGB
// ramp for CAM dumps.
Image heatmap_to_image(const std::vector<double>& values, int h, int w);

}  // namespace ldit

#endif  // LDIT_IMAGE_HPP
