#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tdaa/rng.hpp"
#include "tdaa/tensor.hpp"

namespace tdaa {

// Ordered (image, label) collection. Images are [N,3,32,32] floats in [0,1];
// every pixel is byte-born (k/255), so datasets hash and serialize exactly.
struct ImageDataset {
    Tensor images;
    std::vector<int> labels;
    std::string split_tag;  // "train" or "test"
    std::string source;     // "shapes10", "shapes10b", "cifar10", ...
    uint64_t seed = 0;

    int size() const { return images.ndim() == 4 ? images.dim(0) : 0; }
    Tensor image(int i) const;
    void validate() const;
    uint64_t content_hash() const;
};

// Style knobs for the procedural shape dataset. Variant B is the
// style-shifted sibling used for cross-dataset experiments.
struct ShapeStyle {
    int bg_lo, bg_hi;
    int fg_lo, fg_hi;
    int size_lo, size_hi;

    static ShapeStyle variant_a() { return {0, 95, 160, 255, 6, 12}; }
    static ShapeStyle variant_b() { return {32, 127, 160, 255, 5, 10}; }
};

// Ten integer-rasterized shape classes on a 32x32 canvas; class of sample i
// is i mod 10. Fully deterministic in (global_seed, split_tag, count, style).
ImageDataset gen_shapes10(uint64_t global_seed, const std::string& split_tag, int count,
                          const ShapeStyle& style = ShapeStyle::variant_a(),
                          const std::string& source_name = "shapes10");

const char* shapes10_class_name(int label);

// CIFAR-10 binary batch format: 3073-byte records, 1 label byte + 3 planar
// 1024-byte channels.
ImageDataset load_cifar10_binary(const std::string& path);
ImageDataset load_cifar10_files(const std::vector<std::string>& paths, const std::string& split_tag);
void save_cifar10_binary(const ImageDataset& ds, const std::string& path);

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

using AugmentationRng = SplitMix64;

struct AugmentParams {
    int side = 32;   // crop side in {24..32}
    int ox = 0, oy = 0;
    bool flip = false;
    float jitter[3] = {1.0f, 1.0f, 1.0f};
};

// Draw order (fixed): side, ox, oy, flip, jitter r/g/b.
AugmentParams draw_augment_params(AugmentationRng& rng);

// Crop + nearest resize to 32, then horizontal flip, then per-channel
// multiplicative jitter clamped to [0,1].
Tensor apply_augment(const Tensor& image, const AugmentParams& p);

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, AugmentationRng& rng);

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Splits [0,n) into consecutive batches, optionally shuffled by a
// Fisher-Yates pass seeded with epoch_seed. The final short batch is kept.
std::vector<std::vector<int>> batch_indices(int n, int batch_size, uint64_t epoch_seed,
                                            bool shuffle);

}  // namespace tdaa
