#ifndef DUALFILTER_RNG_H_
#define DUALFILTER_RNG_H_

#include <cstdint>

namespace dualfilter {

// splitmix64 finalizer; used to derive independent per-stream seeds from a
// master seed so that sweep points and sample paths are reproducible in any
// execution order.
inline std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace dualfilter

#endif  // DUALFILTER_RNG_H_
