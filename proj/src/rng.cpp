#include "promptforge/rng.hpp"

#include <cstdio>
#include <string>

namespace promptforge {

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex_digest(std::string_view data) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(data)));
    return std::string(buf);
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view label) {
    Rng mixer(run_seed ^ fnv1a64(label));
    return mixer.next();
}

} // namespace promptforge
