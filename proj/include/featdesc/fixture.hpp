#pragma once

#include <cstdint>
#include <string>

#include "featdesc/model.hpp"
#include "featdesc/tokenizer.hpp"

namespace featdesc::fixture {

constexpr uint64_t kDefaultSeed = 2203;

/// Paths and metadata of a generated toy fixture.
struct ToyFixture {
  std::string dir;
  ModelConfig model_config;
  std::string weights_path;
  std::string tokenizer_path;
  std::string manifest_path;  // featurizer manifest JSON
  std::string corpus_path;
  std::string config_path;  // ready-to-run pipeline config (TOML)
  std::string meta_path;    // fixture metadata incl. probe checksum
  std::string probe_checksum;
};

/// Generate the pinned toy fixture under `dir`: a 2-layer transformer
/// (d_model=16, d_mlp=32, 2 heads, vocab=64) with a character-level
/// tokenizer, two SAEs, a small corpus and a pipeline config. All content is
/// derived from `seed`; the metadata file records a checksum of the probe
/// prompt's logits taken at creation time.
///
/// The `sae_detect` featurizer carries engineered features with known
/// behavior (ResidualPost layer 0, ReLU):
///   0..5  single-character detectors for q, z, r, x, v, w; each decoder row
///         points at that character's unembedding direction, so clamping the
///         feature promotes the character
///   6     zero-encoder feature (never activates)
///   7     constant-bias feature (same activation at every position)
/// The corpus is restricted to the letters a..p, so every detector character
/// is absent from it.
ToyFixture make_toy_fixture(const std::string& dir, uint64_t seed = kDefaultSeed);

/// The toy tokenizer used by the fixture (64 symbols, one character each).
Tokenizer toy_tokenizer();

/// Token id of a single character in the toy vocabulary.
int toy_char_id(char c);

}  // namespace featdesc::fixture
