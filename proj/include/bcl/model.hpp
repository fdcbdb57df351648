#pragma once

// Two-layer tanh encoder and linear classifier head with analytic gradients.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "bcl/numeric.hpp"

namespace bcl {

enum class Split { train, query, gallery };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw Error(ErrorKind::parameter, "unknown split '" + std::string(s) + "'");
}

struct LabeledSample {
  std::int64_t id = 0;
  int label = 0;
  Split split = Split::train;
  Vec x;
};

/// z = W2 * tanh(W1 * x + b1) + b2
struct EncoderParams {
  Mat W1;  // hidden x d_in
  Vec b1;
  Mat W2;  // d_emb x hidden
  Vec b2;

  EncoderParams() = default;
  EncoderParams(std::size_t d_in, std::size_t hidden, std::size_t d_emb)
      : W1(hidden, d_in), b1(hidden, 0.0), W2(d_emb, hidden), b2(d_emb, 0.0) {
    detail::require(d_in >= 1 && hidden >= 1, ErrorKind::dimension, "encoder: empty layer");
    detail::require(d_emb >= 2, ErrorKind::dimension, "encoder: d_emb must be >= 2");
  }

  std::size_t d_in() const noexcept { return W1.cols(); }
  std::size_t hidden() const noexcept { return W1.rows(); }
  std::size_t d_emb() const noexcept { return W2.rows(); }

  void validate() const {
    detail::require(W1.rows() == b1.size() && W2.cols() == W1.rows() && W2.rows() == b2.size(),
                    ErrorKind::dimension, "encoder: inconsistent parameter shapes");
    detail::require(d_emb() >= 2, ErrorKind::dimension, "encoder: d_emb must be >= 2");
  }

  bool operator==(const EncoderParams&) const = default;
};

/// logits = W * z + b. `frozen` is set once the head stops receiving updates.
struct ClassifierParams {
  Mat W;  // K x d_emb
  Vec b;
  bool frozen = false;

  ClassifierParams() = default;
  ClassifierParams(std::size_t num_classes, std::size_t d_emb) : W(num_classes, d_emb), b(num_classes, 0.0) {
    detail::require(num_classes >= 2, ErrorKind::dimension, "classifier: K must be >= 2");
  }

  std::size_t num_classes() const noexcept { return W.rows(); }
  std::size_t d_emb() const noexcept { return W.cols(); }

  bool operator==(const ClassifierParams&) const = default;
};

struct EncoderGrads {
  Mat W1, W2;
  Vec b1, b2;

  explicit EncoderGrads(const EncoderParams& p)
      : W1(p.W1.rows(), p.W1.cols()), W2(p.W2.rows(), p.W2.cols()), b1(p.b1.size(), 0.0), b2(p.b2.size(), 0.0) {}

  void scale(double s) {
    for (double& v : W1.data()) v *= s;
    for (double& v : W2.data()) v *= s;
    for (double& v : b1) v *= s;
    for (double& v : b2) v *= s;
  }
};

struct ClassifierGrads {
  Mat W;
  Vec b;

  explicit ClassifierGrads(const ClassifierParams& c) : W(c.W.rows(), c.W.cols()), b(c.b.size(), 0.0) {}

  void scale(double s) {
    for (double& v : W.data()) v *= s;
    for (double& v : b) v *= s;
  }
};

/// Hidden activations kept from the forward pass for backprop.
struct EncoderTrace {
  Vec hidden;  // tanh(W1 x + b1)
  Vec output;
};

namespace detail {

inline void uniform_fill(Vec& v, double bound, Rng& rng) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}

inline Vec affine(const Mat& W, VecView x, VecView b) {
  require(W.cols() == x.size(), ErrorKind::dimension,
          "affine: input length " + std::to_string(x.size()) + " != " + std::to_string(W.cols()));
  require(W.rows() == b.size(), ErrorKind::dimension, "affine: bias length mismatch");
  Vec out(b.begin(), b.end());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const VecView row = W.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    out[r] += s;
  }
  return out;
}

// out += W^T g
inline void add_transposed(const Mat& W, VecView g, Vec& out) {
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const VecView row = W.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * g[r];
  }
}

// G += g x^T
inline void add_outer(Mat& G, VecView g, VecView x) {
  for (std::size_t r = 0; r < G.rows(); ++r)
    for (std::size_t c = 0; c < G.cols(); ++c) G(r, c) += g[r] * x[c];
}

}  // namespace detail

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, biases included.
inline EncoderParams init_encoder(std::size_t d_in, std::size_t hidden, std::size_t d_emb, Rng& rng) {
  EncoderParams p(d_in, hidden, d_emb);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(d_in));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  detail::uniform_fill(p.W1.data(), b1, rng);
  detail::uniform_fill(p.b1, b1, rng);
  detail::uniform_fill(p.W2.data(), b2, rng);
  detail::uniform_fill(p.b2, b2, rng);
  return p;
}

inline ClassifierParams init_classifier(std::size_t num_classes, std::size_t d_emb, Rng& rng) {
  ClassifierParams c(num_classes, d_emb);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_emb));
  detail::uniform_fill(c.W.data(), bound, rng);
  detail::uniform_fill(c.b, bound, rng);
  return c;
}

inline EncoderTrace encode_traced(const EncoderParams& p, VecView x) {
  p.validate();
  EncoderTrace t;
  t.hidden = detail::affine(p.W1, x, p.b1);
  for (double& h : t.hidden) h = std::tanh(h);
  t.output = detail::affine(p.W2, t.hidden, p.b2);
  return t;
}

inline Vec encode(const EncoderParams& p, VecView x) { return encode_traced(p, x).output; }

inline Vec classify(const ClassifierParams& c, VecView z) { return detail::affine(c.W, z, c.b); }

/// Accumulates d(upstream . encode(p, x))/d(params) into `grads`.
inline void encode_backward(const EncoderParams& p, VecView x, const EncoderTrace& trace, VecView upstream,
                            EncoderGrads& grads) {
  detail::require(upstream.size() == p.d_emb(), ErrorKind::dimension, "encode_backward: upstream length mismatch");
  detail::require(x.size() == p.d_in(), ErrorKind::dimension, "encode_backward: input length mismatch");
  detail::add_outer(grads.W2, upstream, trace.hidden);
  for (std::size_t i = 0; i < upstream.size(); ++i) grads.b2[i] += upstream[i];

  Vec pre(p.hidden(), 0.0);
  detail::add_transposed(p.W2, upstream, pre);
  for (std::size_t j = 0; j < pre.size(); ++j) pre[j] *= 1.0 - trace.hidden[j] * trace.hidden[j];
  detail::add_outer(grads.W1, pre, x);
  for (std::size_t j = 0; j < pre.size(); ++j) grads.b1[j] += pre[j];
}

inline EncoderGrads encode_backward(const EncoderParams& p, VecView x, VecView upstream) {
  EncoderGrads g(p);
  encode_backward(p, x, encode_traced(p, x), upstream, g);
  return g;
}

/// Accumulates the classifier parameter gradients (when `grads` is given) and
/// returns d(upstream . classify(c, z))/dz.
inline Vec classify_backward(const ClassifierParams& c, VecView z, VecView upstream, ClassifierGrads* grads) {
  detail::require(upstream.size() == c.num_classes(), ErrorKind::dimension,
                  "classify_backward: upstream length mismatch");
  detail::require(z.size() == c.d_emb(), ErrorKind::dimension, "classify_backward: embedding length mismatch");
  if (grads != nullptr) {
    detail::add_outer(grads->W, upstream, z);
    for (std::size_t k = 0; k < upstream.size(); ++k) grads->b[k] += upstream[k];
  }
  Vec dz(c.d_emb(), 0.0);
  detail::add_transposed(c.W, upstream, dz);
  return dz;
}

inline std::uint64_t fingerprint(const ClassifierParams& c) {
  std::uint64_t h = fnv1a(c.W.data());
  return fnv1a(c.b, h);
}

inline std::uint64_t fingerprint(const EncoderParams& p) {
  std::uint64_t h = fnv1a(p.W1.data());
  h = fnv1a(p.b1, h);
  h = fnv1a(p.W2.data(), h);
  return fnv1a(p.b2, h);
}

}  // namespace bcl
