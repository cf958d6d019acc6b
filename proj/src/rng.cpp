#include "cdiff/rng.hpp"

namespace cdiff {

namespace {
uint64_t mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t s = base;
  s = mix(s + 0x9e3779b97f4a7c15ULL * (a + 1));
  s = mix(s + 0x9e3779b97f4a7c15ULL * (b + 2));
  s = mix(s + 0x9e3779b97f4a7c15ULL * (c + 3));
  return s;
}

}  // namespace cdiff
