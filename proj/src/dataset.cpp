#include "msdnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "msdnet/errors.hpp"
#include "msdnet/ops.hpp"

namespace msdnet {

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  if (indices.empty()) return out;
  out.images = select_rows(images, indices);
  for (auto i : indices) {
    out.labels.push_back(labels.at(i));
    out.splits.push_back(splits.at(i));
    out.hard.push_back(hard.at(i));
  }
  return out;
}

Dataset Dataset::subset(Split split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i) {
    if (splits[i] == split) idx.push_back(i);
  }
  return select(idx);
}

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw InputError("dataset images must be [N,C,H,W]");
  if (images.dim(0) != labels.size() || splits.size() != labels.size() || hard.size() != labels.size()) {
    throw InputError("dataset image, label, split and hard-flag counts disagree");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InputError("dataset label " + std::to_string(y) + " out of range");
  }
}

namespace {

void add_patch(double* img, std::size_t size, std::size_t top, std::size_t left, std::size_t patch, double amp,
               int pattern) {
  for (std::size_t r = 0; r < patch; ++r) {
    for (std::size_t c = 0; c < patch; ++c) {
      int parity = 0;
      switch (pattern) {
        case 0: parity = static_cast<int>(r % 2); break;        // horizontal stripes
        case 1: parity = static_cast<int>(c % 2); break;        // vertical stripes
        default: parity = static_cast<int>((r + c) % 2); break;  // checkerboard
      }
      img[(top + r) * size + left + c] += parity ? -amp : amp;
    }
  }
}

}  // namespace

Dataset generate_mixture_dataset(std::size_t n, std::size_t image_size, double hard_fraction, std::uint64_t seed,
                                 const MixtureParams& params) {
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw InputError("hard_fraction must lie in [0, 1]");
  if (n == 0) throw InputError("dataset size must be positive");
  if (image_size < params.patch_size) throw InputError("image smaller than the stripe patch");
  std::mt19937_64 rng(seed);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto n_hard = static_cast<std::size_t>(std::llround(static_cast<double>(n) * hard_fraction));
  std::vector<std::uint8_t> hard(n, 0);
  std::fill(hard.begin(), hard.begin() + static_cast<long>(n_hard), 1);
  std::shuffle(hard.begin(), hard.end(), rng);

  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor({n, 1, image_size, image_size});
  ds.labels = labels;
  ds.hard = hard;
  ds.splits.assign(n, Split::Train);

  std::normal_distribution<double> noise(0.0, params.noise);
  std::uniform_int_distribution<std::size_t> pos(0, image_size - params.patch_size);
  const std::size_t plane = image_size * image_size;
  for (std::size_t i = 0; i < n; ++i) {
    double* img = ds.images.data().data() + i * plane;
    for (std::size_t p = 0; p < plane; ++p) img[p] = noise(rng);
    const double sign = labels[i] == 0 ? 1.0 : -1.0;
    if (!hard[i]) {
      for (std::size_t r = 0; r < image_size; ++r) {
        for (std::size_t c = 0; c < image_size; ++c) {
          const double x = (2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(image_size)) - 1.0;
          img[r * image_size + c] += sign * params.ramp_amplitude * x;
        }
      }
      const std::size_t top = pos(rng), left = pos(rng);
      add_patch(img, image_size, top, left, params.patch_size, params.easy_stripe_amplitude, labels[i]);
    } else {
      const std::size_t top = pos(rng), left = pos(rng);
      add_patch(img, image_size, top, left, params.patch_size, params.hard_stripe_amplitude, labels[i]);
      for (std::size_t d = 0; d < params.distractors; ++d) {
        const std::size_t dt = pos(rng), dl = pos(rng);
        add_patch(img, image_size, dt, dl, params.patch_size, params.distractor_amplitude, 2);
      }
    }
  }
  return ds;
}

void assign_splits(Dataset& dataset, std::size_t n_train, std::size_t n_val) {
  if (n_train + n_val > dataset.size()) throw InputError("split sizes exceed the dataset");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    dataset.splits[i] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
  }
}

void save_dataset(const Dataset& dataset, const std::string& image_path, const std::string& label_path) {
  dataset.validate();
  std::ofstream bin(image_path, std::ios::binary);
  if (!bin) throw InputError("cannot write " + image_path);
  bin.write("MSDNDATA", 8);
  binio::write_u32(bin, 1);
  for (std::size_t d = 0; d < 4; ++d) binio::write_u64(bin, dataset.images.dim(d));
  for (double v : dataset.images.data()) binio::write_f64(bin, v);
  std::ofstream csv(label_path);
  if (!csv) throw InputError("cannot write " + label_path);
  csv << "index,label,split,hard\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    csv << i << ',' << dataset.labels[i] << ',' << split_name(dataset.splits[i]) << ','
        << static_cast<int>(dataset.hard[i]) << '\n';
  }
}

Dataset load_dataset(const std::string& image_path, const std::string& label_path) {
  std::ifstream bin(image_path, std::ios::binary);
  if (!bin) throw InputError("cannot open dataset images " + image_path);
  binio::expect_magic(bin, "MSDNDATA", image_path);
  if (binio::read_u32(bin) != 1) throw InputError(image_path + ": unsupported dataset version");
  Shape shape(4);
  for (auto& d : shape) d = binio::read_u64(bin);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = binio::read_f64(bin);
  Dataset ds;
  ds.images = Tensor(shape, std::move(values));

  std::ifstream csv(label_path);
  if (!csv) throw InputError("cannot open dataset labels " + label_path);
  std::string line;
  std::getline(csv, line);
  if (line != "index,label,split,hard") throw InputError(label_path + ": unexpected header");
  int max_label = 1;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string idx, label, split, hard;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, label, ',') || !std::getline(ls, split, ',') ||
        !std::getline(ls, hard)) {
      throw InputError(label_path + ": malformed row " + line);
    }
    try {
      ds.labels.push_back(std::stoi(label));
      ds.hard.push_back(static_cast<std::uint8_t>(std::stoi(hard)));
    } catch (const std::exception&) {
      throw InputError(label_path + ": malformed row " + line);
    }
    if (split == "train") {
      ds.splits.push_back(Split::Train);
    } else if (split == "val") {
      ds.splits.push_back(Split::Val);
    } else if (split == "test") {
      ds.splits.push_back(Split::Test);
    } else {
      throw InputError(label_path + ": unknown split '" + split + "'");
    }
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

}  // namespace msdnet
