#include "tdaa/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "tdaa/hash.hpp"
#include "tdaa/threads.hpp"

namespace tdaa {

namespace {

constexpr int kSide = 32;
constexpr int kPixels = kSide * kSide;

const char* kClassNames[10] = {"circle",  "square", "triangle_up", "triangle_down", "cross",
                               "ring",    "h_bar",  "v_bar",       "diamond",       "checker"};

// Integer shape predicates. dx = x - cx, dy = y - cy (x is the column, y the
// row); s is the half-size. All divisions are integer divisions.
bool shape_hit(int cls, int dx, int dy, int s) {
    const int adx = std::abs(dx), ady = std::abs(dy);
    switch (cls) {
        case 0:  // circle
            return dx * dx + dy * dy <= s * s;
        case 1:  // square
            return std::max(adx, ady) <= s;
        case 2:  // triangle, apex up: half-width grows from 0 at the top edge
            return ady <= s && 2 * adx <= (dy + s);
        case 3:  // triangle, apex down
            return ady <= s && 2 * adx <= (s - dy);
        case 4:  // cross: two s/3-wide bars inside the s-box
            return adx <= s && ady <= s && (adx <= s / 3 || ady <= s / 3);
        case 5:  // ring
            return s * s / 4 <= dx * dx + dy * dy && dx * dx + dy * dy <= s * s;
        case 6:  // horizontal bar
            return ady <= s / 3 && adx <= s;
        case 7:  // vertical bar
            return adx <= s / 3 && ady <= s;
        case 8:  // diamond
            return adx + ady <= s;
        case 9: {  // checkerboard inside the s-box, cell = max(1, s/2)
            const int cell = std::max(1, s / 2);
            return adx <= s && ady <= s && ((dx + s) / cell + (dy + s) / cell) % 2 == 0;
        }
        default:
            return false;
    }
}

// Per-sample raster. Draw order is fixed and must not change: 3 background
// bytes, 3 foreground bytes, cx, cy, s, then 1024 row-major noise values
// shared by all three channels.
void render_sample(uint64_t global_seed, int split_code, int64_t index, const ShapeStyle& style,
                   float* out) {
    SplitMix64 rng(global_seed ^ (static_cast<uint64_t>(split_code) << 56) ^
                   static_cast<uint64_t>(index));
    int bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = static_cast<int>(rng.uniform_int(style.bg_lo, style.bg_hi));
    for (int c = 0; c < 3; ++c) fg[c] = static_cast<int>(rng.uniform_int(style.fg_lo, style.fg_hi));
    const int cx = static_cast<int>(rng.uniform_int(10, 21));
    const int cy = static_cast<int>(rng.uniform_int(10, 21));
    const int s = static_cast<int>(rng.uniform_int(style.size_lo, style.size_hi));
    const int cls = static_cast<int>(index % 10);
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
            const int noise = static_cast<int>(rng.uniform_int(-8, 8));
            const bool hit = shape_hit(cls, x - cx, y - cy, s);
            for (int c = 0; c < 3; ++c) {
                const int byte = std::clamp((hit ? fg[c] : bg[c]) + noise, 0, 255);
                out[static_cast<size_t>(c) * kPixels + static_cast<size_t>(y) * kSide + x] =
                    static_cast<float>(byte) / 255.0f;
            }
        }
}

int split_code_of(const std::string& split_tag) {
    if (split_tag == "train") return 1;
    if (split_tag == "test") return 2;
    throw ValueError("unknown split tag '" + split_tag + "' (expected train or test)");
}

}  // namespace

const char* shapes10_class_name(int label) {
    if (label < 0 || label > 9) throw ValueError("shapes10 label out of range");
    return kClassNames[label];
}

Tensor ImageDataset::image(int i) const {
    if (i < 0 || i >= size()) throw ValueError("dataset index " + std::to_string(i) + " out of range");
    Tensor t({3, kSide, kSide});
    std::copy_n(images.data.begin() + static_cast<int64_t>(i) * 3 * kPixels, 3 * kPixels,
                t.data.begin());
    return t;
}

void ImageDataset::validate() const {
    if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != kSide || images.dim(3) != kSide)
        throw ShapeError("dataset images must be [N,3,32,32], got " + shape_str(images.shape));
    if (size() == 0) throw ValueError("dataset is empty");
    if (static_cast<int>(labels.size()) != size())
        throw ShapeError("dataset has " + std::to_string(size()) + " images but " +
                         std::to_string(labels.size()) + " labels");
    for (float v : images.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ValueError("dataset pixel " + std::to_string(v) + " outside [0,1]");
    for (int l : labels)
        if (l < 0 || l > 9) throw ValueError("dataset label " + std::to_string(l) + " outside 0..9");
    if (source == "shapes10" || source == "shapes10b") {
        int counts[10] = {0};
        for (int l : labels) ++counts[l];
        for (int c = 0; c < 10; ++c)
            if (counts[c] != size() / 10)
                throw ValueError("shapes10 class " + std::to_string(c) + " has " +
                                 std::to_string(counts[c]) + " samples, expected exact balance");
    }
}

uint64_t ImageDataset::content_hash() const {
    // Hash the byte-level content: labels, then pixels re-quantized to bytes
    // (lossless, every pixel is k/255 by construction).
    uint64_t h = 0xCBF29CE484222325ULL;
    for (int l : labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        h = fnv1a64(&b, 1, h);
    }
    std::vector<unsigned char> bytes(images.data.size());
    for (size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(images.data[i] * 255.0f));
    return fnv1a64(bytes.data(), bytes.size(), h);
}

ImageDataset gen_shapes10(uint64_t global_seed, const std::string& split_tag, int count,
                          const ShapeStyle& style, const std::string& source_name) {
    const int split_code = split_code_of(split_tag);
    if (count <= 0 || count % 10 != 0)
        throw ValueError("shapes10 count must be a positive multiple of 10, got " +
                         std::to_string(count));
    ImageDataset ds;
    ds.images = Tensor({count, 3, kSide, kSide});
    ds.labels.resize(count);
    ds.split_tag = split_tag;
    ds.source = source_name;
    ds.seed = global_seed;
    constexpr int kChunk = 64;
    const int nchunks = (count + kChunk - 1) / kChunk;
    parallel_for(nchunks, [&](int ci) {
        for (int i = ci * kChunk; i < std::min(count, (ci + 1) * kChunk); ++i) {
            render_sample(global_seed, split_code, i, style,
                          ds.images.data.data() + static_cast<int64_t>(i) * 3 * kPixels);
            ds.labels[i] = i % 10;
        }
    });
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

namespace {
constexpr size_t kRecordBytes = 1 + 3 * 1024;
}

ImageDataset load_cifar10_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open cifar10 file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kRecordBytes != 0)
        throw IoError("cifar10 file " + path + " has length " + std::to_string(bytes.size()) +
                      ", not a positive multiple of " + std::to_string(kRecordBytes));
    const int n = static_cast<int>(bytes.size() / kRecordBytes);
    ImageDataset ds;
    ds.images = Tensor({n, 3, kSide, kSide});
    ds.labels.resize(n);
    ds.source = "cifar10";
    ds.split_tag = "train";
    for (int i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + static_cast<size_t>(i) * kRecordBytes;
        if (rec[0] > 9)
            throw IoError("cifar10 record " + std::to_string(i) + " in " + path +
                          " has label byte " + std::to_string(rec[0]));
        ds.labels[i] = rec[0];
        float* img = ds.images.data.data() + static_cast<int64_t>(i) * 3 * kPixels;
        for (size_t j = 0; j < 3 * 1024; ++j) img[j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
    return ds;
}

ImageDataset load_cifar10_files(const std::vector<std::string>& paths,
                                const std::string& split_tag) {
    if (paths.empty()) throw ValueError("no cifar10 files given");
    ImageDataset all = load_cifar10_binary(paths[0]);
    for (size_t i = 1; i < paths.size(); ++i) {
        ImageDataset part = load_cifar10_binary(paths[i]);
        Tensor merged({all.size() + part.size(), 3, kSide, kSide});
        std::copy(all.images.data.begin(), all.images.data.end(), merged.data.begin());
        std::copy(part.images.data.begin(), part.images.data.end(),
                  merged.data.begin() + all.images.numel());
        all.images = std::move(merged);
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    all.split_tag = split_tag;
    (void)split_code_of(split_tag);
    return all;
}

void save_cifar10_binary(const ImageDataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write cifar10 file: " + path);
    for (int i = 0; i < ds.size(); ++i) {
        const unsigned char label = static_cast<unsigned char>(ds.labels[i]);
        f.put(static_cast<char>(label));
        const float* img = ds.images.data.data() + static_cast<int64_t>(i) * 3 * kPixels;
        for (size_t j = 0; j < 3 * 1024; ++j)
            f.put(static_cast<char>(static_cast<unsigned char>(std::lround(img[j] * 255.0f))));
    }
    if (!f) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

AugmentParams draw_augment_params(AugmentationRng& rng) {
    AugmentParams p;
    p.side = static_cast<int>(rng.uniform_int(24, 32));
    p.ox = static_cast<int>(rng.uniform_int(0, kSide - p.side));
    p.oy = static_cast<int>(rng.uniform_int(0, kSide - p.side));
    p.flip = rng.uniform_int(0, 1) == 1;
    for (int c = 0; c < 3; ++c) p.jitter[c] = static_cast<float>(rng.uniform_real(0.8, 1.2));
    return p;
}

Tensor apply_augment(const Tensor& image, const AugmentParams& p) {
    if (image.shape != std::vector<int>{3, kSide, kSide})
        throw ShapeError("apply_augment: image must be [3,32,32], got " + shape_str(image.shape));
    if (p.side < 1 || p.side > kSide || p.ox < 0 || p.oy < 0 || p.ox + p.side > kSide ||
        p.oy + p.side > kSide)
        throw ValueError("apply_augment: crop window outside the image");
    Tensor out({3, kSide, kSide});
    for (int c = 0; c < 3; ++c) {
        const float* in = image.data.data() + static_cast<size_t>(c) * kPixels;
        float* o = out.data.data() + static_cast<size_t>(c) * kPixels;
        for (int y = 0; y < kSide; ++y) {
            const int sy = p.oy + (y * p.side) / kSide;
            for (int x = 0; x < kSide; ++x) {
                const int sx = p.ox + (x * p.side) / kSide;
                const int dx = p.flip ? (kSide - 1 - x) : x;
                float v = in[static_cast<size_t>(sy) * kSide + sx] * p.jitter[c];
                o[static_cast<size_t>(y) * kSide + dx] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, AugmentationRng& rng) {
    const AugmentParams p1 = draw_augment_params(rng);
    const AugmentParams p2 = draw_augment_params(rng);
    return {apply_augment(image, p1), apply_augment(image, p2)};
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> batch_indices(int n, int batch_size, uint64_t epoch_seed,
                                            bool shuffle) {
    if (batch_size <= 0) throw ValueError("batch_size must be positive");
    if (batch_size > n)
        throw ValueError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                         std::to_string(n));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
        SplitMix64 rng(epoch_seed);
        for (int i = n - 1; i >= 1; --i) {
            const int j = static_cast<int>(rng.next() % static_cast<uint64_t>(i + 1));
            std::swap(order[i], order[j]);
        }
    }
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

}  // namespace tdaa
