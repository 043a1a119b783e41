#pragma once

#include <cstdint>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>

namespace streamseg {

// Error taxonomy shared across modules. Each condition named by the module
// contracts maps to one of these types so tests can assert on them.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define STREAMSEG_ERROR(NAME)                  \
  struct NAME : Error {                        \
    using Error::Error;                        \
    NAME() : Error(#NAME) {}                   \
  }

STREAMSEG_ERROR(EmptySetError);
STREAMSEG_ERROR(DimensionMismatchError);
STREAMSEG_ERROR(TooFewPointsError);
STREAMSEG_ERROR(ShapeMismatchError);
STREAMSEG_ERROR(InvalidProbabilityError);
STREAMSEG_ERROR(NotScalarError);
STREAMSEG_ERROR(NonFiniteGradientError);
STREAMSEG_ERROR(EmptyStreamError);
STREAMSEG_ERROR(FrameDescriptorMismatchError);
STREAMSEG_ERROR(EmptySeedSetError);
STREAMSEG_ERROR(EmptyFrameError);
STREAMSEG_ERROR(EmptyPseudoLabelsError);
STREAMSEG_ERROR(EmptyCorrespondencesError);
STREAMSEG_ERROR(InvalidConfigError);
STREAMSEG_ERROR(MalformedFileError);
STREAMSEG_ERROR(LabelCountMismatchError);
STREAMSEG_ERROR(MalformedLineError);
STREAMSEG_ERROR(UnknownLabelIdError);
STREAMSEG_ERROR(AllEmptyError);
STREAMSEG_ERROR(SingleClassError);
STREAMSEG_ERROR(StreamTooShortError);
STREAMSEG_ERROR(CheckpointMismatchError);
STREAMSEG_ERROR(NoGroundTruthError);

#undef STREAMSEG_ERROR

using Rng = std::mt19937_64;

// splitmix64, used to derive independent sub-seeds from one master seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used for prediction hashes and parameter checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void warn(const std::string& msg) {
  std::cerr << "[streamseg] warning: " << msg << "\n";
}

}  // namespace streamseg
