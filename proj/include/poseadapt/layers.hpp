// Neural network building blocks with explicit forward/backward passes:
// strided convolution, transposed convolution (both im2col + Eigen GEMM),
// and ReLU. Parameters carry their gradient buffers; optimizers walk the
// exposed Param list.
#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "poseadapt/common.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

struct Param {
  std::string name;  // layer-local ("w", "b"); models prefix group/layer
  Tensor value;
  Tensor grad;

  explicit Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  // Consumes the output gradient, accumulates parameter gradients, returns
  // the input gradient. Requires a preceding forward on the same input.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }

  void zero_grad() {
    for (Param* p : params()) p->grad.zero();
  }
};

namespace detail {

// col has (C*kh*kw) rows by (Ho*Wo) columns, row-major; column (i, j) holds
// the receptive-field patch of output position (i, j).
inline void im2col(const real* img, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int Ho, int Wo, real* col) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        real* row = col + (std::size_t(c) * kh * kw + std::size_t(di) * kw +
                           std::size_t(dj)) *
                              cols;
        for (int i = 0; i < Ho; ++i) {
          const int src_i = i * stride - pad + di;
          if (src_i < 0 || src_i >= H) {
            for (int j = 0; j < Wo; ++j) row[i * Wo + j] = 0;
            continue;
          }
          const real* src_row = img + (std::size_t(c) * H + src_i) * W;
          for (int j = 0; j < Wo; ++j) {
            const int src_j = j * stride - pad + dj;
            row[i * Wo + j] =
                (src_j >= 0 && src_j < W) ? src_row[src_j] : real(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col as a scatter-add into the image.
inline void col2im_add(const real* col, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int Ho, int Wo, real* img) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        const real* row = col + (std::size_t(c) * kh * kw +
                                 std::size_t(di) * kw + std::size_t(dj)) *
                                    cols;
        for (int i = 0; i < Ho; ++i) {
          const int dst_i = i * stride - pad + di;
          if (dst_i < 0 || dst_i >= H) continue;
          real* dst_row = img + (std::size_t(c) * H + dst_i) * W;
          for (int j = 0; j < Wo; ++j) {
            const int dst_j = j * stride - pad + dj;
            if (dst_j >= 0 && dst_j < W) dst_row[dst_j] += row[i * Wo + j];
          }
        }
      }
    }
  }
}

inline void he_init(Tensor& w, int fan_in, Rng& rng) {
  const real std = std::sqrt(real(2) / real(fan_in));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0, std);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv2d: (B, Cin, H, W) -> (B, Cout, Ho, Wo), Ho = (H + 2p - k)/s + 1.
// ---------------------------------------------------------------------------
class Conv2d : public Layer {
 public:
  Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
        w_("w", {cout, cin, k, k}), b_("b", {cout}) {
    detail::he_init(w_.value, cin * k * k, rng);
  }

  Tensor forward(const Tensor& x) override {
    POSEADAPT_CHECK(x.rank() == 4 && x.dim(1) == cin_,
                    "Conv2d: input shape mismatch");
    B_ = x.dim(0);
    H_ = x.dim(2);
    W_ = x.dim(3);
    Ho_ = (H_ + 2 * pad_ - k_) / stride_ + 1;
    Wo_ = (W_ + 2 * pad_ - k_) / stride_ + 1;
    POSEADAPT_CHECK(Ho_ > 0 && Wo_ > 0, "Conv2d: output would be empty");
    const int ckk = cin_ * k_ * k_;
    const int hw = Ho_ * Wo_;
    cols_ = Tensor({B_, ckk, hw});
    Tensor y({B_, cout_, Ho_, Wo_});
    ConstMapRM wm(w_.value.data(), cout_, ckk);
    for (int b = 0; b < B_; ++b) {
      real* col = cols_.data() + std::size_t(b) * ckk * hw;
      detail::im2col(x.data() + std::size_t(b) * cin_ * H_ * W_, cin_, H_, W_,
                     k_, k_, stride_, pad_, Ho_, Wo_, col);
      MapRM ym(y.data() + std::size_t(b) * cout_ * hw, cout_, hw);
      ym.noalias() = wm * ConstMapRM(col, ckk, hw);
      for (int c = 0; c < cout_; ++c)
        ym.row(c).array() += b_.value[std::size_t(c)];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    POSEADAPT_CHECK(dy.rank() == 4 && dy.dim(0) == B_ && dy.dim(1) == cout_ &&
                        dy.dim(2) == Ho_ && dy.dim(3) == Wo_,
                    "Conv2d: output grad shape mismatch");
    const int ckk = cin_ * k_ * k_;
    const int hw = Ho_ * Wo_;
    Tensor dx({B_, cin_, H_, W_});
    MapRM dwm(w_.grad.data(), cout_, ckk);
    ConstMapRM wm(w_.value.data(), cout_, ckk);
    MatrixRM dcol(ckk, hw);
    for (int b = 0; b < B_; ++b) {
      ConstMapRM dym(dy.data() + std::size_t(b) * cout_ * hw, cout_, hw);
      ConstMapRM colm(cols_.data() + std::size_t(b) * ckk * hw, ckk, hw);
      dwm.noalias() += dym * colm.transpose();
      // Plain sequential sum: Eigen's vectorized redux splits by the runtime
      // pointer alignment, which would make the result depend on where the
      // tensor happened to be allocated.
      for (int c = 0; c < cout_; ++c) {
        const real* row = dy.data() + (std::size_t(b) * cout_ + std::size_t(c)) * hw;
        real s = 0;
        for (int i = 0; i < hw; ++i) s += row[i];
        b_.grad[std::size_t(c)] += s;
      }
      dcol.noalias() = wm.transpose() * dym;
      detail::col2im_add(dcol.data(), cin_, H_, W_, k_, k_, stride_, pad_, Ho_,
                         Wo_, dx.data() + std::size_t(b) * cin_ * H_ * W_);
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }

 private:
  int cin_, cout_, k_, stride_, pad_;
  Param w_, b_;
  int B_ = 0, H_ = 0, W_ = 0, Ho_ = 0, Wo_ = 0;
  Tensor cols_;
};

// ---------------------------------------------------------------------------
// ConvTranspose2d: (B, Cin, H, W) -> (B, Cout, H2, W2) with
// H2 = (H - 1) * s - 2p + k. Forward is the scatter dual of a convolution
// whose im2col geometry maps the LARGER map down to (H, W).
// ---------------------------------------------------------------------------
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int cin, int cout, int k, int stride, int pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
        w_("w", {cin, cout, k, k}), b_("b", {cout}) {
    detail::he_init(w_.value, cin * k * k, rng);
  }

  Tensor forward(const Tensor& x) override {
    POSEADAPT_CHECK(x.rank() == 4 && x.dim(1) == cin_,
                    "ConvTranspose2d: input shape mismatch");
    x_ = x;  // needed for the weight gradient
    B_ = x.dim(0);
    H_ = x.dim(2);
    W_ = x.dim(3);
    H2_ = (H_ - 1) * stride_ - 2 * pad_ + k_;
    W2_ = (W_ - 1) * stride_ - 2 * pad_ + k_;
    POSEADAPT_CHECK(H2_ > 0 && W2_ > 0, "ConvTranspose2d: empty output");
    const int ckk = cout_ * k_ * k_;
    const int hw = H_ * W_;
    Tensor y({B_, cout_, H2_, W2_});
    ConstMapRM wm(w_.value.data(), cin_, ckk);
    MatrixRM coly(ckk, hw);
    for (int b = 0; b < B_; ++b) {
      ConstMapRM xm(x.data() + std::size_t(b) * cin_ * hw, cin_, hw);
      coly.noalias() = wm.transpose() * xm;
      real* yb = y.data() + std::size_t(b) * cout_ * H2_ * W2_;
      detail::col2im_add(coly.data(), cout_, H2_, W2_, k_, k_, stride_, pad_,
                         H_, W_, yb);
      for (int c = 0; c < cout_; ++c) {
        real* ch = yb + std::size_t(c) * H2_ * W2_;
        for (int i = 0; i < H2_ * W2_; ++i) ch[i] += b_.value[std::size_t(c)];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    POSEADAPT_CHECK(dy.rank() == 4 && dy.dim(0) == B_ && dy.dim(1) == cout_ &&
                        dy.dim(2) == H2_ && dy.dim(3) == W2_,
                    "ConvTranspose2d: output grad shape mismatch");
    const int ckk = cout_ * k_ * k_;
    const int hw = H_ * W_;
    Tensor dx({B_, cin_, H_, W_});
    ConstMapRM wm(w_.value.data(), cin_, ckk);
    MapRM dwm(w_.grad.data(), cin_, ckk);
    MatrixRM dcoly(ckk, hw);
    for (int b = 0; b < B_; ++b) {
      const real* dyb = dy.data() + std::size_t(b) * cout_ * H2_ * W2_;
      detail::im2col(dyb, cout_, H2_, W2_, k_, k_, stride_, pad_, H_, W_,
                     dcoly.data());
      MapRM dxm(dx.data() + std::size_t(b) * cin_ * hw, cin_, hw);
      dxm.noalias() = wm * dcoly;
      ConstMapRM xm(x_.data() + std::size_t(b) * cin_ * hw, cin_, hw);
      dwm.noalias() += xm * dcoly.transpose();
      for (int c = 0; c < cout_; ++c) {
        const real* ch = dyb + std::size_t(c) * H2_ * W2_;
        real s = 0;
        for (int i = 0; i < H2_ * W2_; ++i) s += ch[i];
        b_.grad[std::size_t(c)] += s;
      }
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }

 private:
  int cin_, cout_, k_, stride_, pad_;
  Param w_, b_;
  int B_ = 0, H_ = 0, W_ = 0, H2_ = 0, W2_ = 0;
  Tensor x_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    y_ = x;
    for (std::size_t i = 0; i < y_.numel(); ++i)
      if (y_[i] < 0) y_[i] = 0;
    return y_;
  }

  Tensor backward(const Tensor& dy) override {
    POSEADAPT_CHECK(dy.same_shape(y_), "ReLU: grad shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.numel(); ++i)
      if (y_[i] == 0) dx[i] = 0;
    return dx;
  }

 private:
  Tensor y_;
};

// A named sequential stack — the unit the model addresses as one parameter
// group member.
class Sequential {
 public:
  void add(std::string name, std::unique_ptr<Layer> layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  }

  Tensor forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }

  Tensor backward(const Tensor& dy) {
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      g = (*it)->backward(g);
    return g;
  }

  // (layer name, param) pairs in a stable order.
  std::vector<std::pair<std::string, Param*>> named_params() {
    std::vector<std::pair<std::string, Param*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (Param* p : layers_[i]->params()) out.emplace_back(names_[i], p);
    return out;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace poseadapt
