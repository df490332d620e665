#pragma once

#include <cstddef>
#include <cstdint>

namespace tdaa {

// FNV-1a, 64-bit. Used for content hashes in manifests and golden-value
// tests; integrity bookkeeping, not cryptography.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace tdaa
