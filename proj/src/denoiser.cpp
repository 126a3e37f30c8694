#include "avatar/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avatar {

namespace {

constexpr double kResidualGain = 0.3;

// Area weights mapping `in` cells onto `out` cells, [in, out]; columns sum to 1.
Eigen::MatrixXd area_weights(int in, int out) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(in, out);
  const double step = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    const double lo = j * step, hi = (j + 1) * step;
    for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
      const double ov = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (ov > 0) w(i, j) = ov / step;
    }
  }
  return w;
}

// [c, n, n] -> [c, s*s] by separable area resampling.
Eigen::MatrixXd resample_grid(const Tensor& g, int s) {
  const int c = static_cast<int>(g.dim(0)), n = static_cast<int>(g.dim(1));
  const Eigen::MatrixXd w = area_weights(n, s);
  Eigen::MatrixXd out(c, s * s);
  for (int ch = 0; ch < c; ++ch) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        g.data() + static_cast<std::ptrdiff_t>(ch) * n * n, n, n);
    const Eigen::MatrixXd r = w.transpose() * m * w;  // [s, s]
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) out(ch, y * s + x) = r(y, x);
  }
  return out;
}

void check_finite(const ad::Var& x, const std::string& where) {
  if (!x.value().all_finite()) throw NumericalError("denoiser: non-finite activations after " + where);
}

}  // namespace

void DenoiserConfig::validate() const {
  if (channel_mult.empty() || base_channels < 1 || depth_per_level < 1)
    throw std::invalid_argument("denoiser: bad channel layout");
  if (attention_heads < 1 || head_channels < 1 || cond_dim < 1 || spade_dim < 1 || cond_side < 1)
    throw std::invalid_argument("denoiser: bad sizes");
  if (base_channels % 2 != 0) throw std::invalid_argument("denoiser: base_channels must be even");
}

DenoiserConfig DenoiserConfig::toy() { return {}; }

DenoiserConfig DenoiserConfig::paper() {
  DenoiserConfig c;
  c.base_channels = 192;
  c.channel_mult = {1, 2, 4, 8};
  c.depth_per_level = 2;
  c.attention_heads = 4;
  c.head_channels = 32;
  c.cond_dim = 1048;
  c.spade_dim = 128;
  c.cond_side = 7;
  return c;
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"base_channels", c.base_channels}, {"channel_mult", c.channel_mult},
       {"depth_per_level", c.depth_per_level}, {"attention_heads", c.attention_heads},
       {"head_channels", c.head_channels},   {"cond_dim", c.cond_dim},
       {"spade_dim", c.spade_dim},           {"cond_side", c.cond_side},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  c.base_channels = j.at("base_channels");
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.depth_per_level = j.at("depth_per_level");
  c.attention_heads = j.at("attention_heads");
  c.head_channels = j.at("head_channels");
  c.cond_dim = j.at("cond_dim");
  c.spade_dim = j.at("spade_dim");
  c.cond_side = j.at("cond_side");
  c.seed = j.at("seed");
}

ConditionTensor ConditionTensor::null(int cond_dim, int side) {
  return {Tensor({cond_dim, side, side}, 0.0), true};
}

ConditionBuilder::ConditionBuilder(const IdentityEncoderConfig& enc, int cond_dim, int side, std::uint64_t seed)
    : concat_(enc.c2 + enc.c3 + enc.c4 + enc.v_dim), cond_dim_(cond_dim), side_(side) {
  nn::Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(concat_)));
  proj_.resize(cond_dim, concat_);
  for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = n(rng);
}

ConditionTensor ConditionBuilder::build(const IdentityEmbedding& e) const {
  const int ss = side_ * side_;
  Eigen::MatrixXd cat(concat_, ss);
  int row = 0;
  for (const Tensor* g : {&e.C2, &e.C3, &e.C4}) {
    const Eigen::MatrixXd r = resample_grid(*g, side_);
    cat.middleRows(row, r.rows()) = r;
    row += static_cast<int>(r.rows());
  }
  const int vd = static_cast<int>(e.V.numel());
  for (int i = 0; i < vd; ++i) cat.row(row + i).setConstant(e.V[i]);
  row += vd;
  if (row != concat_)
    throw std::invalid_argument("condition: embedding has " + std::to_string(row) + " channels, expected " +
                                std::to_string(concat_));
  const Eigen::MatrixXd out = proj_ * cat;
  ConditionTensor c{Tensor({cond_dim_, side_, side_}), false};
  for (int ch = 0; ch < cond_dim_; ++ch)
    for (int k = 0; k < ss; ++k) c.grid[ch * ss + k] = out(ch, k);
  c.null_flag = std::all_of(c.grid.vec().begin(), c.grid.vec().end(), [](double v) { return v == 0.0; });
  return c;
}

Tensor stack_conditions(const std::vector<ConditionTensor>& cs) {
  if (cs.empty()) throw std::invalid_argument("stack_conditions: empty batch");
  Shape s = cs[0].grid.shape();
  const std::int64_t per = cs[0].grid.numel();
  Tensor out({static_cast<std::int64_t>(cs.size()), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (cs[i].grid.shape() != s) throw std::invalid_argument("stack_conditions: mixed shapes");
    std::copy(cs[i].grid.vec().begin(), cs[i].grid.vec().end(), out.data() + i * per);
  }
  return out;
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out[n * dim + i] = std::cos(t[n] * freq);
      out[n * dim + half + i] = std::sin(t[n] * freq);
    }
  return out;
}

ad::Var Denoiser::Spade::operator()(const ad::Var& x, const ad::Var& c) const {
  auto h = ad::relu(shared(c));
  auto g = gamma(h), b = beta(h);
  return ad::add(ad::mul(ad::group_norm(x, groups, 1e-6), ad::add_scalar(g, 1.0)), b);
}

Denoiser::Spade Denoiser::make_spade(const std::string& name, int channels, nn::Rng& rng) {
  Spade s;
  s.shared = nn::Conv1d(params_, name + ".shared", cfg_.cond_dim, cfg_.spade_dim, 3, 1, 1, rng);
  s.gamma = nn::Conv1d(params_, name + ".gamma", cfg_.spade_dim, channels, 3, 1, 1, rng, 0.3);
  s.beta = nn::Conv1d(params_, name + ".beta", cfg_.spade_dim, channels, 3, 1, 1, rng, 0.3);
  s.groups = nn::group_count(channels);
  return s;
}

Denoiser::ResBlock Denoiser::make_block(const std::string& name, int cin, int cout, nn::Rng& rng) {
  ResBlock b;
  b.s1 = make_spade(name + ".spade1", cin, rng);
  b.c1 = nn::Conv1d(params_, name + ".conv1", cin, cout, 3, 1, 1, rng);
  b.temb = nn::Linear(params_, name + ".temb", 4 * cfg_.base_channels, cout, rng);
  b.s2 = make_spade(name + ".spade2", cout, rng);
  b.c2 = nn::Conv1d(params_, name + ".conv2", cout, cout, 3, 1, 1, rng, kResidualGain);
  if (cin != cout) {
    b.skip = nn::Conv1d(params_, name + ".skip", cin, cout, 1, 1, 0, rng);
    b.has_skip = true;
  }
  return b;
}

Denoiser::Denoiser(DenoiserConfig cfg, int latent_length) : cfg_(std::move(cfg)), length_(latent_length) {
  cfg_.validate();
  if (latent_length < 1) throw std::invalid_argument("denoiser: latent length must be positive");
  const int levels = static_cast<int>(cfg_.channel_mult.size());
  const int mult = 1 << (levels - 1);
  padded_ = (length_ + mult - 1) / mult * mult;

  nn::Rng rng(cfg_.seed);
  const int base = cfg_.base_channels, tdim = 4 * base;
  t1_ = nn::Linear(params_, "time.fc1", base, tdim, rng);
  t2_ = nn::Linear(params_, "time.fc2", tdim, tdim, rng);
  conv_in_ = nn::Conv1d(params_, "conv_in", 1, base, 3, 1, 1, rng);

  auto attn_at = [&](int level) { return level >= levels - 2; };
  std::vector<int> skip_ch{base};
  int ch = base;
  for (int i = 0; i < levels; ++i) {
    Level lv;
    const int out = base * cfg_.channel_mult[i];
    for (int d = 0; d < cfg_.depth_per_level; ++d) {
      const std::string nm = "down" + std::to_string(i) + "." + std::to_string(d);
      lv.blocks.push_back(make_block(nm, ch, out, rng));
      ch = out;
      if (attn_at(i))
        lv.attn.emplace_back(params_, nm + ".attn", ch, cfg_.attention_heads, cfg_.head_channels, rng);
      skip_ch.push_back(ch);
    }
    if (i + 1 < levels) {
      lv.resample = nn::Conv1d(params_, "down" + std::to_string(i) + ".down", ch, ch, 3, 2, 1, rng);
      lv.has_resample = true;
      skip_ch.push_back(ch);
    }
    down_.push_back(std::move(lv));
  }

  mid1_ = make_block("mid.block1", ch, ch, rng);
  mid_attn_ = nn::SelfAttention(params_, "mid.attn", ch, cfg_.attention_heads, cfg_.head_channels, rng);
  mid2_ = make_block("mid.block2", ch, ch, rng);

  for (int i = levels - 1; i >= 0; --i) {
    Level lv;
    const int out = base * cfg_.channel_mult[i];
    for (int d = 0; d <= cfg_.depth_per_level; ++d) {
      const std::string nm = "up" + std::to_string(i) + "." + std::to_string(d);
      const int sc = skip_ch.back();
      skip_ch.pop_back();
      lv.blocks.push_back(make_block(nm, ch + sc, out, rng));
      ch = out;
      if (attn_at(i))
        lv.attn.emplace_back(params_, nm + ".attn", ch, cfg_.attention_heads, cfg_.head_channels, rng);
    }
    if (i > 0) {
      lv.resample = nn::Conv1d(params_, "up" + std::to_string(i) + ".up", ch, ch, 3, 1, 1, rng);
      lv.has_resample = true;
    }
    up_.push_back(std::move(lv));
  }

  norm_out_ = nn::GroupNorm(params_, "norm_out", ch, nn::group_count(ch));
  conv_out_ = nn::Conv1d(params_, "conv_out", ch, 1, 3, 1, 1, rng, 0.3);
}

ad::Var Denoiser::cond_at(const ad::Var& cond_seq, std::int64_t len) const {
  const std::int64_t n = cond_seq.dim(0), cd = cond_seq.dim(1), s = cond_seq.dim(2);
  const Eigen::MatrixXd w = area_weights(static_cast<int>(s), static_cast<int>(len));
  Tensor wt({s, len});
  for (std::int64_t i = 0; i < s; ++i)
    for (std::int64_t j = 0; j < len; ++j) wt[i * len + j] = w(i, j);
  auto flat = ad::matmul(ad::reshape(cond_seq, {n * cd, s}), ad::constant(wt));
  return ad::reshape(flat, {n, cd, len});
}

ad::Var Denoiser::run_block(const ResBlock& b, const ad::Var& x, const ad::Var& temb, const ad::Var& c) const {
  auto h = b.c1(ad::silu(b.s1(x, c)));
  auto t = b.temb(temb);
  h = ad::add(h, ad::reshape(t, {t.dim(0), t.dim(1), 1}));
  h = b.c2(ad::silu(b.s2(h, c)));
  return ad::add(b.has_skip ? b.skip(x) : x, h);
}

ad::Var Denoiser::forward(const ad::Var& z, const std::vector<int>& t, const ad::Var& cond) const {
  if (z.value().ndim() != 2 || z.dim(1) != length_)
    throw std::invalid_argument("denoiser: expected latent [N," + std::to_string(length_) + "], got " +
                                shape_str(z.shape()));
  const std::int64_t n = z.dim(0);
  if (static_cast<std::int64_t>(t.size()) != n) throw std::invalid_argument("denoiser: one timestep per item");
  for (int ti : t)
    if (ti < 0) throw std::invalid_argument("denoiser: negative timestep");
  const Shape cs{n, cfg_.cond_dim, cfg_.cond_side, cfg_.cond_side};
  if (cond.shape() != cs)
    throw std::invalid_argument("denoiser: condition must be " + shape_str(cs) + ", got " + shape_str(cond.shape()));

  auto seq = ad::reshape(cond, {n, cfg_.cond_dim, cfg_.cond_side * cfg_.cond_side});
  std::vector<std::pair<std::int64_t, ad::Var>> cache;
  auto c_for = [&](std::int64_t len) {
    for (auto& [l, v] : cache)
      if (l == len) return v;
    cache.emplace_back(len, cond_at(seq, len));
    return cache.back().second;
  };

  auto temb = t2_(ad::silu(t1_(ad::constant(timestep_embedding(t, cfg_.base_channels)))));
  temb = ad::silu(temb);

  auto x = ad::reshape(z, {n, 1, length_});
  if (padded_ > length_) x = ad::concat({x, ad::constant(Tensor({n, 1, padded_ - length_}, 0.0))}, 2);
  x = conv_in_(x);
  std::vector<ad::Var> skips{x};
  for (std::size_t i = 0; i < down_.size(); ++i) {
    const Level& lv = down_[i];
    for (std::size_t d = 0; d < lv.blocks.size(); ++d) {
      x = run_block(lv.blocks[d], x, temb, c_for(x.dim(2)));
      if (!lv.attn.empty()) x = lv.attn[d](x);
      skips.push_back(x);
    }
    if (lv.has_resample) {
      x = lv.resample(x);
      skips.push_back(x);
    }
    check_finite(x, "down level " + std::to_string(i));
  }

  x = run_block(mid1_, x, temb, c_for(x.dim(2)));
  x = mid_attn_(x);
  x = run_block(mid2_, x, temb, c_for(x.dim(2)));
  check_finite(x, "middle block");

  for (std::size_t k = 0; k < up_.size(); ++k) {
    const Level& lv = up_[k];
    for (std::size_t d = 0; d < lv.blocks.size(); ++d) {
      x = ad::concat({x, skips.back()}, 1);
      skips.pop_back();
      x = run_block(lv.blocks[d], x, temb, c_for(x.dim(2)));
      if (!lv.attn.empty()) x = lv.attn[d](x);
    }
    if (lv.has_resample) x = lv.resample(ad::upsample_nearest(x, 2));
    check_finite(x, "up level " + std::to_string(up_.size() - 1 - k));
  }

  x = conv_out_(ad::silu(norm_out_(x)));
  if (padded_ > length_) x = ad::slice(x, 2, 0, length_);
  x = ad::reshape(x, {n, length_});
  check_finite(x, "output head");
  return x;
}

std::vector<double> Denoiser::predict_eps(std::span<const double> z, int t, const ConditionTensor& cond) const {
  ad::NoGradGuard ng;
  Tensor zt({1, length_});
  if (static_cast<int>(z.size()) != length_) throw std::invalid_argument("denoiser: latent length mismatch");
  std::copy(z.begin(), z.end(), zt.data());
  auto out = forward(ad::constant(zt), {t}, ad::constant(stack_conditions({cond})));
  return out.value().vec();
}

io::Archive Denoiser::to_archive() const {
  io::Archive a;
  a.meta = {{"kind", "denoiser"}, {"config", cfg_}, {"latent_length", length_}};
  a.arrays = params_.values();
  return a;
}

Denoiser Denoiser::from_archive(const io::Archive& a) {
  if (a.meta.value("kind", "") != "denoiser") throw io::FormatError("archive is not a denoiser");
  Denoiser d(a.meta.at("config").get<DenoiserConfig>(), a.meta.at("latent_length").get<int>());
  d.params_.assign_from(a.arrays);
  return d;
}

}  // namespace avatar
