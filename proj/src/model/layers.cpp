#include <cmath>

#include "m2f/fusion.hpp"

namespace m2f {

Linear::Linear(ParameterStore& params, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = params.add(name + ".w", Tensor::uniform({in, out}, -bound, bound, rng));
  bias = params.add(name + ".b", Tensor::zeros({out}));
}

LayerNorm::LayerNorm(ParameterStore& params, const std::string& name, std::size_t dim) {
  gain = params.add(name + ".gain", Tensor::ones({dim}));
  bias = params.add(name + ".bias", Tensor::zeros({dim}));
}

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (rng == nullptr) throw std::invalid_argument("dropout in training mode needs a random generator");
  return m2f::dropout(x, dropout, true, *rng);
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& params, const std::string& name, std::size_t d_q,
                                       std::size_t d_k, std::size_t heads, std::mt19937_64& rng)
    : d_q_(d_q), d_k_(d_k), heads_(heads) {
  if (heads == 0 || d_q % heads != 0) {
    throw std::invalid_argument(name + ": width " + std::to_string(d_q) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  query = Linear(params, name + ".q", d_q, d_q, rng);
  key = Linear(params, name + ".k", d_k, d_q, rng);
  value = Linear(params, name + ".v", d_q, d_q, rng);
  output = Linear(params, name + ".o", d_q, d_q, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                                      std::vector<Tensor>* weights) const {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != d_q_ || k.dim(1) != d_k_ ||
      v.dim(1) != d_q_) {
    throw DimensionError("attention expects q [k, " + std::to_string(d_q_) + "], key [k, " +
                         std::to_string(d_k_) + "], v [k, " + std::to_string(d_q_) + "]; got " +
                         shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (q.dim(0) != k.dim(0) || q.dim(0) != v.dim(0)) {
    throw DimensionError("attention inputs disagree on utterance count: " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const Tensor qp = query(q), kp = key(k), vp = value(v);
  const std::size_t dh = d_q_ / heads_;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = slice(qp, 1, h * dh, dh);
    const Tensor kh = slice(kp, 1, h * dh, dh);
    const Tensor vh = slice(vp, 1, h * dh, dh);
    const Tensor a = softmax(scale(matmul(qh, transpose(kh)), scale_factor), 1);
    if (weights != nullptr) weights->push_back(a);
    outs.push_back(matmul(a, vh));
  }
  return output(heads_ == 1 ? outs.front() : concat(outs, 1));
}

EncoderBlock::EncoderBlock(ParameterStore& params, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t ffn_width, std::mt19937_64& rng)
    : attention_(params, name + ".attn", dim, dim, heads, rng),
      norm1_(params, name + ".norm1", dim),
      norm2_(params, name + ".norm2", dim),
      ffn1_(params, name + ".ffn1", dim, ffn_width, rng),
      ffn2_(params, name + ".ffn2", ffn_width, dim, rng) {}

Tensor EncoderBlock::operator()(const Tensor& x, const ForwardContext& ctx) const {
  const Tensor h = norm1_(add(x, ctx.drop(attention_(x, x, x))));
  return norm2_(add(h, ctx.drop(ffn2_(gelu(ffn1_(h))))));
}

EncoderStack::EncoderStack(ParameterStore& params, const std::string& name, std::size_t n, std::size_t dim,
                           std::size_t heads, std::size_t ffn_width, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    blocks_.emplace_back(params, name + "." + std::to_string(i), dim, heads, ffn_width, rng);
  }
}

Tensor EncoderStack::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (const EncoderBlock& block : blocks_) h = add(block(h, ctx), h);
  return h;
}

FusionLayer::FusionLayer(ParameterStore& params, const std::string& name, std::size_t d_t, std::size_t d_a,
                         std::size_t d_v, std::size_t heads, bool use_audio, bool use_visual, std::mt19937_64& rng)
    : use_audio_(use_audio), use_visual_(use_visual) {
  if (!use_audio && !use_visual) throw std::invalid_argument(name + ": fusion needs an audio or visual key");
  if (use_audio) audio_ = MultiHeadAttention(params, name + ".audio", d_t, d_a, heads, rng);
  if (use_visual) visual_ = MultiHeadAttention(params, name + ".visual", d_t, d_v, heads, rng);
  const std::size_t branches = static_cast<std::size_t>(use_audio) + static_cast<std::size_t>(use_visual);
  fc_ = Linear(params, name + ".fc", branches * d_t, d_t, rng);
}

Tensor FusionLayer::operator()(const Tensor& f_a, const Tensor& f_text, const Tensor& f_v,
                               const ForwardContext& ctx) const {
  std::vector<Tensor> branches;
  if (use_audio_) branches.push_back(ctx.drop(audio_(f_text, f_a, f_text)));
  if (use_visual_) branches.push_back(ctx.drop(visual_(f_text, f_v, f_text)));
  return ctx.drop(fc_(branches.size() == 1 ? branches.front() : concat(branches, 1)));
}

Tensor sinusoidal_positions(std::size_t k, std::size_t dim) {
  std::vector<double> pe(k * dim);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double rate = std::pow(10000.0, static_cast<double>(j - j % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) / rate;
      pe[p * dim + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({k, dim}, std::move(pe));
}

std::size_t heads_for(std::size_t dim, std::size_t heads) {
  for (std::size_t h = std::min(dim, heads); h > 1; --h) {
    if (dim % h == 0) return h;
  }
  return 1;
}

}  // namespace m2f
