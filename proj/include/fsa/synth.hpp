#pragma once

// Planted-cluster fixtures for exercising the engine without a real model.
//
// Random numbers come from SplitMix64 so a fixture can be regenerated
// bit-for-bit in any language:
//   uniform  = (next() >> 11) * 2^-53
//   normal   = sqrt(-2 ln u1) * cos(2 pi u2), u1 drawn first (0 replaced by 2^-53)
//
// Draw order:
//   1. text embeddings, c×d normals, rows orthonormalized (modified
//      Gram-Schmidt, top to bottom)
//   2. joint projection: a d×v block of normals, rows orthonormalized the
//      same way, then transposed to v×d
//   prototypes = text · joint^T, so prototype · joint is the text row itself
//   3. tokens, row by row: x_i = separation * prototype[label_i] + n / sqrt(v),
//      n a v-vector of normals; label_i = i * clusters / L
//   4. attention, row by row: clean_i is uniform over the patches sharing
//      label_i; three spikes are drawn as (column = floor(u * L),
//      weight = -ln(1 - u')) and normalized to unit mass;
//      A_i = (1 - noise) * clean_i + noise * spikes_i
//   5. W_Q then W_K, v×v normals divided by sqrt(v)
// W_V and Proj are identities, tau = sqrt(v), no residual and no FFN.
// Requires c <= d <= v.

#include <cstdint>
#include <filesystem>

#include "fsa/attention_head.hpp"
#include "fsa/matrix.hpp"

namespace fsa {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal();

 private:
  std::uint64_t state_;
};

struct SynthSpec {
  std::size_t patches = 64;     // L
  std::size_t visual_dim = 32;  // v
  std::size_t joint_dim = 16;   // d
  std::size_t classes = 8;      // c
  std::size_t clusters = 4;
  double attention_noise = 0.4;
  double logit_separation = 4.0;
  std::uint64_t seed = 0;

  // Throws ErrorKind::Config naming the offending field.
  void validate() const;
};

inline constexpr std::size_t kNoiseSpikes = 3;

struct SynthFixture {
  Matrix tokens;
  HeadWeights weights;
  Matrix text;
  Matrix attention;
  SegmentationMap labels;
};

SynthFixture synthesize(const SynthSpec& spec);

// Writes tokens/text/attention/labels FSAT files, a weights/ directory and
// a run.cfg wired to them.
void write_fixture(const SynthFixture& fixture, const std::filesystem::path& dir);

}  // namespace fsa
