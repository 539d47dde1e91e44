#include "msdnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "msdnet/errors.hpp"

namespace msdnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride, int padding, bool floor_ok) {
  require(input.rank() == 4, "conv2d input must be NCHW, got " + shape_string(input.shape()));
  require(weight.rank() == 4, "conv2d weight must be [Cout,Cin,Kh,Kw], got " + shape_string(weight.shape()));
  require(stride >= 1, "conv2d stride must be >= 1");
  require(padding >= 0, "conv2d padding must be >= 0");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  require(weight.dim(1) == g.cin, "conv2d channel mismatch: input " + shape_string(input.shape()) +
                                      " vs weight " + shape_string(weight.shape()));
  const long span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.kh);
  const long span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.kw);
  require(span_h >= 0 && span_w >= 0, "conv2d kernel larger than padded input " + shape_string(input.shape()));
  require(floor_ok || (span_h % stride == 0 && span_w % stride == 0),
          "conv2d output size is not integral for input " + shape_string(input.shape()) + " and stride " +
              std::to_string(stride));
  g.ho = static_cast<std::size_t>(span_h / stride + 1);
  g.wo = static_cast<std::size_t>(span_w / stride + 1);
  return g;
}

// col[(c*kh + ky)*kw + kx][oy*wo + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
// Rows are ld apart, so several samples can share one wide column matrix.
void im2col(const double* x, const ConvGeometry& g, double* col, std::size_t ld) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + iy * w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx, std::size_t ld) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* dc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * g.wo;
          double* dst = dc + iy * w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor finish(Tensor out, const char* where) {
  check_finite(out, where);
  return out;
}

std::size_t plane(const Tensor& t) {
  std::size_t p = 1;
  for (std::size_t i = 2; i < t.rank(); ++i) p *= t.dim(i);
  return p;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::SplitChannels: return "split_channels";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Relu: return "relu";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::Flatten: return "flatten";
    case OpKind::Linear: return "linear";
    case OpKind::Softmax: return "softmax";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::SelectRows: return "select_rows";
  }
  return "unknown";
}

void Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  if (consumed_) throw UsageError("cannot record onto a tape that has already run backward");
  records_.push_back(OpRecord{kind, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (loss.numel() != 1) throw UsageError("backward expects a scalar loss, got " + shape_string(loss.shape()));
  const bool recorded = std::any_of(records_.begin(), records_.end(),
                                    [&](const OpRecord& r) { return r.output.is(loss); });
  if (!recorded) throw UsageError("loss was not produced by this tape");
  consumed_ = true;
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    // Outputs that never received a gradient do not influence the loss.
    if (it->output.has_grad()) it->backward();
  }
}

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor::ones({channels});
  p.beta = Tensor::zeros({channels});
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

namespace {

Tensor conv2d_impl(const Tensor& input, const Tensor& weight, int stride, int padding, bool floor_ok, Tape* tape) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding, floor_ok);
  Tensor out({g.batch, g.cout, g.ho, g.wo});
  ConstMatrixMap wmat(weight.data().data(), g.cout, g.patch());
  const std::size_t P = g.out_plane();
  // One GEMM per sample: a sample's output never depends on its batch mates.
  std::vector<double> col(g.pointwise() ? 0 : g.patch() * P);
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* xb = x + b * g.cin * g.h * g.w;
    MatrixMap yb(y + b * g.cout * P, g.cout, P);
    if (g.pointwise()) {
      yb.noalias() = wmat * ConstMatrixMap(xb, g.cin, P);
    } else {
      im2col(xb, g, col.data(), P);
      yb.noalias() = wmat * ConstMatrixMap(col.data(), g.patch(), P);
    }
  }
  if (tape) {
    tape->record(OpKind::Conv2d, {input, weight}, out, [input, weight, out, g]() mutable {
      const std::size_t P = g.out_plane();
      const double* x = input.data().data();
      const double* dy = out.grad().data();
      double* dx = input.grad().data();
      ConstMatrixMap wmat(weight.data().data(), g.cout, g.patch());
      MatrixMap dwmat(weight.grad().data(), g.cout, g.patch());
      std::vector<double> col(g.patch() * P);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double* xb = x + b * g.cin * g.h * g.w;
        ConstMatrixMap dyb(dy + b * g.cout * P, g.cout, P);
        double* dxb = dx + b * g.cin * g.h * g.w;
        if (g.pointwise()) {
          dwmat.noalias() += dyb * ConstMatrixMap(xb, g.cin, P).transpose();
          MatrixMap(dxb, g.cin, P).noalias() += wmat.transpose() * dyb;
        } else {
          im2col(xb, g, col.data(), P);
          MatrixMap colmat(col.data(), g.patch(), P);
          dwmat.noalias() += dyb * colmat.transpose();
          colmat.noalias() = wmat.transpose() * dyb;
          col2im_add(col.data(), g, dxb, P);
        }
      }
    });
  }
  return finish(out, "conv2d");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding, Tape* tape) {
  return conv2d_impl(input, weight, stride, padding, false, tape);
}

Tensor strided_downsample_conv(const Tensor& input, const Tensor& weight, Tape* tape) {
  require(weight.rank() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3,
          "strided downsample expects a 3x3 kernel, got " + shape_string(weight.shape()));
  require(input.rank() == 4 && input.dim(2) + 2 >= 3 && input.dim(3) + 2 >= 3,
          "strided downsample input smaller than the padded kernel");
  // Floor division here is what yields ceil(H/2) for odd and even H alike.
  return conv2d_impl(input, weight, 2, 1, true, tape);
}

Tensor concat_channels(std::span<const Tensor> inputs, Tape* tape) {
  require(!inputs.empty(), "concat_channels needs at least one input");
  const Tensor& first = inputs.front();
  require(first.rank() >= 2, "concat_channels input must have a channel axis");
  const std::size_t batch = first.dim(0);
  const std::size_t pl = plane(first);
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    bool same = t.rank() == first.rank() && t.dim(0) == batch;
    for (std::size_t i = 2; same && i < t.rank(); ++i) same = t.dim(i) == first.dim(i);
    require(same, "concat_channels shape mismatch: " + shape_string(t.shape()) + " vs " +
                      shape_string(first.shape()));
    channels += t.dim(1);
  }
  Shape shape = first.shape();
  shape[1] = channels;
  Tensor out(shape);
  double* y = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t offset = 0;
    for (const auto& t : inputs) {
      const std::size_t n = t.dim(1) * pl;
      const double* src = t.data().data() + b * n;
      std::copy(src, src + n, y + (b * channels * pl) + offset);
      offset += n;
    }
  }
  if (tape) {
    std::vector<Tensor> ins(inputs.begin(), inputs.end());
    tape->record(OpKind::ConcatChannels, ins, out, [ins, out, batch, channels, pl]() mutable {
      const double* dy = out.grad().data();
      for (std::size_t b = 0; b < batch; ++b) {
        std::size_t offset = 0;
        for (auto& t : ins) {
          const std::size_t n = t.dim(1) * pl;
          const double* src = dy + b * channels * pl + offset;
          double* dst = t.grad().data() + b * n;
          for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
          offset += n;
        }
      }
    });
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::size_t> sizes, Tape* tape) {
  require(input.rank() >= 2, "split_channels input must have a channel axis");
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  require(total == input.dim(1), "split_channels sizes do not sum to the channel count");
  const std::size_t batch = input.dim(0);
  const std::size_t pl = plane(input);
  std::vector<Tensor> outs;
  std::size_t offset = 0;
  for (auto s : sizes) {
    Shape shape = input.shape();
    shape[1] = s;
    Tensor out(shape);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* src = input.data().data() + b * input.dim(1) * pl + offset * pl;
      std::copy(src, src + s * pl, out.data().data() + b * s * pl);
    }
    if (tape) {
      tape->record(OpKind::SplitChannels, {input}, out, [input, out, offset, s, batch, pl]() mutable {
        const double* dy = out.grad().data();
        double* dx = input.grad().data();
        const std::size_t c = input.dim(1);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < s * pl; ++i) dx[b * c * pl + offset * pl + i] += dy[b * s * pl + i];
        }
      });
    }
    outs.push_back(out);
    offset += s;
  }
  return outs;
}

namespace {

// `stats` receives the running-estimate update in Train mode and may be null in Eval mode.
Tensor batch_norm_impl(const Tensor& input, const BatchNormParams& params, BatchNormParams* stats, BnMode mode,
                       Tape* tape) {
  require(input.rank() >= 2, "batch_norm input must have a channel axis");
  const std::size_t batch = input.dim(0), channels = input.dim(1), pl = plane(input);
  require(params.gamma.numel() == channels && params.beta.numel() == channels &&
              params.running_mean.size() == channels && params.running_var.size() == channels,
          "batch_norm parameter size does not match " + std::to_string(channels) + " channels");
  const std::size_t count = batch * pl;
  std::vector<double> mean(channels), invstd(channels);
  const double* x = input.data().data();
  if (mode == BnMode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xc = x + (b * channels + c) * pl;
        for (std::size_t i = 0; i < pl; ++i) s += xc[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xc = x + (b * channels + c) * pl;
        for (std::size_t i = 0; i < pl; ++i) v += (xc[i] - m) * (xc[i] - m);
      }
      const double biased = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
      mean[c] = m;
      invstd[c] = 1.0 / std::sqrt(biased + kBatchNormEpsilon);
      stats->running_mean[c] = (1.0 - kBatchNormMomentum) * stats->running_mean[c] + kBatchNormMomentum * m;
      stats->running_var[c] = (1.0 - kBatchNormMomentum) * stats->running_var[c] + kBatchNormMomentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = params.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(params.running_var[c] + kBatchNormEpsilon);
    }
  }
  Tensor out(input.shape());
  double* y = out.data().data();
  const double* gamma = params.gamma.data().data();
  const double* beta = params.beta.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * pl;
      const double a = gamma[c] * invstd[c];
      for (std::size_t i = 0; i < pl; ++i) y[base + i] = a * (x[base + i] - mean[c]) + beta[c];
    }
  }
  if (tape) {
    Tensor gamma_t = params.gamma, beta_t = params.beta;
    tape->record(OpKind::BatchNorm, {input, gamma_t, beta_t}, out,
                 [input, gamma_t, beta_t, out, mean, invstd, mode, batch, channels, pl]() mutable {
                   const double* x = input.data().data();
                   const double* dy = out.grad().data();
                   const double* gamma = gamma_t.data().data();
                   double* dx = input.grad().data();
                   double* dgamma = gamma_t.grad().data();
                   double* dbeta = beta_t.grad().data();
                   const double n = static_cast<double>(batch * pl);
                   for (std::size_t c = 0; c < channels; ++c) {
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     for (std::size_t b = 0; b < batch; ++b) {
                       const std::size_t base = (b * channels + c) * pl;
                       for (std::size_t i = 0; i < pl; ++i) {
                         const double xhat = (x[base + i] - mean[c]) * invstd[c];
                         sum_dy += dy[base + i];
                         sum_dy_xhat += dy[base + i] * xhat;
                       }
                     }
                     dgamma[c] += sum_dy_xhat;
                     dbeta[c] += sum_dy;
                     for (std::size_t b = 0; b < batch; ++b) {
                       const std::size_t base = (b * channels + c) * pl;
                       for (std::size_t i = 0; i < pl; ++i) {
                         if (mode == BnMode::Eval) {
                           dx[base + i] += gamma[c] * invstd[c] * dy[base + i];
                         } else {
                           const double xhat = (x[base + i] - mean[c]) * invstd[c];
                           dx[base + i] += gamma[c] * invstd[c] / n *
                                           (n * dy[base + i] - sum_dy - xhat * sum_dy_xhat);
                         }
                       }
                     }
                   }
                 });
  }
  return finish(out, "batch_norm");
}

}  // namespace

Tensor batch_norm(const Tensor& input, BatchNormParams& params, BnMode mode, Tape* tape) {
  return batch_norm_impl(input, params, &params, mode, tape);
}

Tensor batch_norm(const Tensor& input, const BatchNormParams& params, Tape* tape) {
  return batch_norm_impl(input, params, nullptr, BnMode::Eval, tape);
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out(input.shape());
  auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (tape) {
    tape->record(OpKind::Relu, {input}, out, [input, out]() mutable {
      auto x = input.data();
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor avg_pool(const Tensor& input, std::size_t kh, std::size_t kw, Tape* tape) {
  require(input.rank() == 4, "avg_pool input must be NCHW");
  require(kh >= 1 && kw >= 1, "avg_pool window must be positive");
  const std::size_t batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h >= kh && w >= kw, "avg_pool window larger than input " + shape_string(input.shape()));
  const std::size_t ho = h / kh, wo = w / kw;
  const double inv = 1.0 / static_cast<double>(kh * kw);
  Tensor out({batch, channels, ho, wo});
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) s += x[(bc * h + oy * kh + ky) * w + ox * kw + kx];
        }
        y[(bc * ho + oy) * wo + ox] = s * inv;
      }
    }
  }
  if (tape) {
    tape->record(OpKind::AvgPool, {input}, out, [input, out, batch, channels, h, w, ho, wo, kh, kw, inv]() mutable {
      const double* dy = out.grad().data();
      double* dx = input.grad().data();
      for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double g = dy[(bc * ho + oy) * wo + ox] * inv;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) dx[(bc * h + oy * kh + ky) * w + ox * kw + kx] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& input, Tape* tape) {
  require(input.rank() >= 1, "flatten of a rank-0 tensor");
  const std::size_t batch = input.dim(0);
  Tensor out(Shape{batch, input.numel() / batch},
             std::vector<double>(input.data().begin(), input.data().end()));
  if (tape) {
    tape->record(OpKind::Flatten, {input}, out, [input, out]() mutable {
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape) {
  require(input.rank() == 2, "linear input must be [B,in], got " + shape_string(input.shape()));
  require(weight.rank() == 2 && weight.dim(1) == input.dim(1),
          "linear weight " + shape_string(weight.shape()) + " does not match input " + shape_string(input.shape()));
  require(bias.numel() == weight.dim(0), "linear bias size mismatch");
  const std::size_t batch = input.dim(0), in = input.dim(1), outn = weight.dim(0);
  Tensor out({batch, outn});
  ConstMatrixMap x(input.data().data(), batch, in);
  ConstMatrixMap wm(weight.data().data(), outn, in);
  MatrixMap y(out.data().data(), batch, outn);
  // Row-by-row so each sample's result is independent of batch composition.
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < outn; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x(b, i) * wm(o, i);
      y(b, o) = s + bias.data()[o];
    }
  }
  if (tape) {
    tape->record(OpKind::Linear, {input, weight, bias}, out, [input, weight, bias, out, batch, in, outn]() mutable {
      ConstMatrixMap x(input.data().data(), batch, in);
      ConstMatrixMap wm(weight.data().data(), outn, in);
      ConstMatrixMap dy(out.grad().data(), batch, outn);
      MatrixMap(input.grad().data(), batch, in).noalias() += dy * wm;
      MatrixMap(weight.grad().data(), outn, in).noalias() += dy.transpose() * x;
      auto db = bias.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < outn; ++o) db[o] += dy(b, o);
      }
    });
  }
  return finish(out, "linear");
}

namespace {

void softmax_rows(const double* x, double* p, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* pr = p + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(xr[c] - mx);
      z += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= z;
  }
}

}  // namespace

Tensor softmax(const Tensor& logits, Tape* tape) {
  require(logits.rank() == 2, "softmax expects [B,C], got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out(logits.shape());
  softmax_rows(logits.data().data(), out.data().data(), rows, cols);
  if (tape) {
    tape->record(OpKind::Softmax, {logits}, out, [logits, out, rows, cols]() mutable {
      const double* p = out.data().data();
      const double* dy = out.grad().data();
      double* dx = logits.grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * p[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += p[r * cols + c] * (dy[r * cols + c] - dot);
      }
    });
  }
  return finish(out, "softmax");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Tape* tape) {
  require(logits.rank() == 2, "cross_entropy expects [B,C] logits, got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(cols) + ")");
    }
  }
  std::vector<double> p(rows * cols);
  softmax_rows(logits.data().data(), p.data(), rows, cols);
  const double* x = logits.data().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    loss += std::log(z) + mx - xr[labels[r]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(rows));
  if (tape) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape->record(OpKind::CrossEntropy, {logits}, out, [logits, out, ys, p = std::move(p), rows, cols]() mutable {
      const double g = out.grad()[0] / static_cast<double>(rows);
      double* dx = logits.grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
          dx[r * cols + c] += g * (p[r * cols + c] - onehot);
        }
      }
    });
  }
  return finish(out, "cross_entropy");
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "add shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  if (tape) {
    tape->record(OpKind::Add, {a, b}, out, [a, b, out]() mutable {
      auto dz = out.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dz.size(); ++i) da[i] += dz[i];
      auto db = b.grad();
      for (std::size_t i = 0; i < dz.size(); ++i) db[i] += dz[i];
    });
  }
  return finish(out, "add");
}

Tensor scale(const Tensor& a, double factor, Tape* tape) {
  Tensor out(a.shape());
  auto x = a.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = factor * x[i];
  if (tape) {
    tape->record(OpKind::Scale, {a}, out, [a, out, factor]() mutable {
      auto dz = out.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dz.size(); ++i) da[i] += factor * dz[i];
    });
  }
  return finish(out, "scale");
}

Tensor sum(const Tensor& a, Tape* tape) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tape) {
    tape->record(OpKind::Sum, {a}, out, [a, out]() mutable {
      const double g = out.grad()[0];
      for (double& d : a.grad()) d += g;
    });
  }
  return finish(out, "sum");
}

Tensor select_rows(const Tensor& input, std::span<const std::size_t> rows, Tape* tape) {
  require(input.rank() >= 1, "select_rows of a rank-0 tensor");
  require(!rows.empty(), "select_rows needs at least one row");
  const std::size_t stride = input.numel() / input.dim(0);
  Shape shape = input.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < input.dim(0), "select_rows index out of range");
    const double* src = input.data().data() + rows[i] * stride;
    std::copy(src, src + stride, out.data().data() + i * stride);
  }
  if (tape) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape->record(OpKind::SelectRows, {input}, out, [input, out, idx, stride]() mutable {
      const double* dy = out.grad().data();
      double* dx = input.grad().data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < stride; ++j) dx[idx[i] * stride + j] += dy[i * stride + j];
      }
    });
  }
  return out;
}

}  // namespace msdnet
