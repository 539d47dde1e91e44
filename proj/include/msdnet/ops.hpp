#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "msdnet/tensor.hpp"

namespace msdnet {

enum class OpKind {
  Conv2d,
  ConcatChannels,
  SplitChannels,
  BatchNorm,
  Relu,
  AvgPool,
  Flatten,
  Linear,
  Softmax,
  CrossEntropy,
  Add,
  Scale,
  Sum,
  SelectRows,
};

const char* op_name(OpKind kind);

struct OpRecord {
  OpKind kind;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

// Reverse-mode tape. Every op given a non-null Tape* appends a record; backward()
// replays the records in reverse exactly once. Gradients accumulate into the
// inputs' grad buffers, so parameters must be zeroed between steps.
//
// A tape belongs to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(const Tensor& loss);

  std::span<const OpRecord> records() const { return records_; }
  bool consumed() const { return consumed_; }

 private:
  std::vector<OpRecord> records_;
  bool consumed_ = false;
};

enum class BnMode { Train, Eval };

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormParams identity(std::size_t channels);
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Cross-correlation over an NCHW input with an [Cout,Cin,Kh,Kw] weight.
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding, Tape* tape = nullptr);

// 3x3 stride-2 padding-1 convolution; output is ceil(H/2) x ceil(W/2).
Tensor strided_downsample_conv(const Tensor& input, const Tensor& weight, Tape* tape = nullptr);

Tensor concat_channels(std::span<const Tensor> inputs, Tape* tape = nullptr);
std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::size_t> sizes, Tape* tape = nullptr);

// Per-channel normalization over batch and spatial dims. Train mode uses batch
// statistics and updates the running estimates; eval mode uses the running estimates.
Tensor batch_norm(const Tensor& input, BatchNormParams& params, BnMode mode, Tape* tape = nullptr);
// Eval-mode normalization with the running estimates.
Tensor batch_norm(const Tensor& input, const BatchNormParams& params, Tape* tape = nullptr);

Tensor relu(const Tensor& input, Tape* tape = nullptr);

// Non-overlapping window average (stride equals window, trailing rows/cols dropped).
Tensor avg_pool(const Tensor& input, std::size_t kh, std::size_t kw, Tape* tape = nullptr);
inline Tensor avg_pool(const Tensor& input, std::size_t k, Tape* tape = nullptr) {
  return avg_pool(input, k, k, tape);
}

// [B, ...] -> [B, prod(...)]
Tensor flatten(const Tensor& input, Tape* tape = nullptr);

// y = x W^T + b with x [B,in], W [out,in], b [out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape = nullptr);

// Row-wise softmax of a [B,C] tensor.
Tensor softmax(const Tensor& logits, Tape* tape = nullptr);

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double factor, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);

// Gathers samples (axis 0) by index.
Tensor select_rows(const Tensor& input, std::span<const std::size_t> rows, Tape* tape = nullptr);

}  // namespace msdnet
