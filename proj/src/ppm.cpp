#include "tdaa/ppm.hpp"

#include <cmath>
#include <fstream>

namespace tdaa {

void write_ppm(const Tensor& image, const std::string& path) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("write_ppm: image must be [3,H,W], got " + shape_str(image.shape));
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write ppm: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = image.data[(static_cast<size_t>(c) * h + y) * w + x];
                v = std::min(std::max(v, 0.0f), 1.0f);
                f.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
            }
    if (!f) throw IoError("short write to " + path);
}

namespace {
int next_int(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comments between header tokens.
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(in >> v)) throw IoError("malformed ppm header in " + path);
    return v;
}
}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open ppm: " + path);
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    if (magic != "P6") throw IoError("not a P6 ppm: " + path);
    const int w = next_int(f, path);
    const int h = next_int(f, path);
    const int maxval = next_int(f, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IoError("unsupported ppm geometry in " + path);
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<size_t>(f.gcount()) != bytes.size())
        throw IoError("truncated ppm payload in " + path);
    Tensor image({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                image.data[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(bytes[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0f;
    return image;
}

}  // namespace tdaa
