#include "avatar/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace avatar::nn {

Tensor randn(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

ad::Var ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name " + name);
  ad::Var v(std::move(init), true);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

ad::Var ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].second;
}

std::int64_t ParamSet::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [_, v] : items_) n += v.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : items_) v.zero_grad();
}

void ParamSet::set_trainable(bool on) {
  for (auto& [_, v] : items_) v.set_requires_grad(on);
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, v] : items_) {
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    for (double d : v.value().span()) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      for (int i = 0; i < 8; ++i) h = (h ^ ((bits >> (8 * i)) & 0xff)) * 1099511628211ULL;
    }
  }
  return h;
}

void ParamSet::assign_from(const std::vector<std::pair<std::string, Tensor>>& values) {
  if (values.size() != items_.size())
    throw std::runtime_error("parameter count mismatch: expected " + std::to_string(items_.size()) + ", got " +
                             std::to_string(values.size()));
  for (const auto& [name, t] : values) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unexpected parameter " + name);
    auto var = items_[it->second].second;
    if (var.shape() != t.shape())
      throw std::runtime_error("shape mismatch for " + name + ": " + shape_str(var.shape()) + " vs " +
                               shape_str(t.shape()));
    var.mutable_value() = t;
  }
}

std::vector<std::pair<std::string, Tensor>> ParamSet::values() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(items_.size());
  for (const auto& [name, v] : items_) out.emplace_back(name, v.value());
  return out;
}

Conv2d::Conv2d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
               double gain, bool bias)
    : stride_(stride), pad_(pad), cout_(cout) {
  const double std = gain / std::sqrt(static_cast<double>(cin * k * k));
  weight_ = ps.add(name + ".weight", randn({cout, cin, k, k}, std, rng));
  if (bias) bias_ = ps.add(name + ".bias", Tensor({cout}, 0.0));
}

Conv1d::Conv1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
               double gain, bool bias)
    : stride_(stride), pad_(pad) {
  const double std = gain / std::sqrt(static_cast<double>(cin * k));
  weight_ = ps.add(name + ".weight", randn({cout, cin, k}, std, rng));
  if (bias) bias_ = ps.add(name + ".bias", Tensor({cout}, 0.0));
}

Linear::Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double gain, bool bias) {
  const double std = gain / std::sqrt(static_cast<double>(in));
  weight_ = ps.add(name + ".weight", randn({in, out}, std, rng));
  if (bias) bias_ = ps.add(name + ".bias", Tensor({out}, 0.0));
}

ad::Var Linear::operator()(const ad::Var& x) const {
  auto y = ad::matmul(x, weight_);
  return bias_.defined() ? ad::add(y, bias_) : y;
}

GroupNorm::GroupNorm(ParamSet& ps, const std::string& name, int channels, int groups, double eps)
    : channels_(channels), groups_(groups), eps_(eps) {
  if (channels % groups != 0) throw std::invalid_argument("GroupNorm: groups must divide channels");
  gamma_ = ps.add(name + ".gamma", Tensor({channels}, 1.0));
  beta_ = ps.add(name + ".beta", Tensor({channels}, 0.0));
}

ad::Var GroupNorm::operator()(const ad::Var& x) const {
  Shape s(x.value().ndim(), 1);
  s[1] = channels_;
  auto y = ad::group_norm(x, groups_, eps_);
  return ad::add(ad::mul(y, ad::reshape(gamma_, s)), ad::reshape(beta_, s));
}

SelfAttention::SelfAttention(ParamSet& ps, const std::string& name, int channels, int heads, int head_channels,
                             Rng& rng)
    : norm_(ps, name + ".norm", channels, group_count(channels)),
      qkv_(ps, name + ".qkv", channels, 3 * heads * head_channels, 1, 1, 0, rng),
      proj_(ps, name + ".proj", heads * head_channels, channels, 1, 1, 0, rng, 0.1),
      heads_(heads),
      head_channels_(head_channels) {}

ad::Var SelfAttention::operator()(const ad::Var& x) const {
  const int hc = head_channels_;
  auto qkv = qkv_(norm_(x));
  const double inv = 1.0 / std::sqrt(static_cast<double>(hc));
  std::vector<ad::Var> outs;
  for (int h = 0; h < heads_; ++h) {
    auto q = ad::slice(qkv, 1, static_cast<std::int64_t>(h) * hc, hc);
    auto k = ad::slice(qkv, 1, static_cast<std::int64_t>(heads_ + h) * hc, hc);
    auto v = ad::slice(qkv, 1, static_cast<std::int64_t>(2 * heads_ + h) * hc, hc);
    auto attn = ad::softmax(ad::scale(ad::matmul(ad::transpose_last(q), k), inv));  // [N,Lq,Lk]
    outs.push_back(ad::matmul(v, ad::transpose_last(attn)));                         // [N,hc,Lq]
  }
  auto o = outs.size() == 1 ? outs[0] : ad::concat(outs, 1);
  return ad::add(x, proj_(o));
}

int group_count(int channels, int cap) {
  for (int g = std::min(cap, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

double clip_grad_norm(ParamSet& ps, double max_norm) {
  double sq = 0.0;
  for (auto& [_, v] : ps.items())
    if (v.has_grad())
      for (double g : v.grad().span()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& [_, v] : ps.items())
      if (v.has_grad())
        for (auto& g : v.node()->grad.vec()) g *= k;
  }
  return norm;
}

Adam::Adam(ParamSet& ps, Options opt) : ps_(&ps), opt_(opt) {
  for (const auto& [_, v] : ps.items()) {
    m_.emplace_back(v.shape(), 0.0);
    v_.emplace_back(v.shape(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  auto& items = ps_->items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    ad::Var var = items[p].second;
    if (!var.requires_grad() || !var.has_grad()) continue;
    const Tensor& g = var.grad();
    Tensor& w = var.mutable_value();
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      w[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

}  // namespace avatar::nn
