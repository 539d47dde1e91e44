#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msdnet/tensor.hpp"

namespace msdnet {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
const char* split_name(Split split);

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<std::uint8_t> hard;  // 1 for "hard" mixture samples
  int num_classes = 2;

  std::size_t size() const { return labels.size(); }
  Dataset subset(Split split) const;
  Dataset select(std::span<const std::size_t> indices) const;
  // Throws InputError on label/shape inconsistencies.
  void validate() const;
};

// Knobs of the synthetic two-class easy/hard mixture.
struct MixtureParams {
  double noise = 0.4;
  // Easy: a full-image horizontal ramp whose sign is the class.
  double ramp_amplitude = 1.0;
  // Both kinds carry a small striped patch; orientation is the class
  // (horizontal stripes = class 0, vertical = class 1).
  std::size_t patch_size = 4;
  double easy_stripe_amplitude = 1.0;
  double hard_stripe_amplitude = 0.6;
  // Hard: checkerboard patches that respond to both stripe orientations.
  std::size_t distractors = 3;
  double distractor_amplitude = 1.0;
};

// Deterministic under seed. Labels alternate before shuffling, so classes are
// balanced within one; exactly round(n * hard_fraction) samples are hard.
Dataset generate_mixture_dataset(std::size_t n, std::size_t image_size, double hard_fraction, std::uint64_t seed,
                                 const MixtureParams& params = {});

// Tags the first n_train samples Train, the next n_val Val and the rest Test.
void assign_splits(Dataset& dataset, std::size_t n_train, std::size_t n_val);

// Images: flat little-endian binary ("MSDNDATA", u32 version, u64 N, C, H, W,
// then N*C*H*W float64). Labels: CSV index,label,split,hard.
void save_dataset(const Dataset& dataset, const std::string& image_path, const std::string& label_path);
Dataset load_dataset(const std::string& image_path, const std::string& label_path);

}  // namespace msdnet
