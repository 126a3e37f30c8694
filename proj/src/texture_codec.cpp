#include "avatar/texture_codec.hpp"

#include <cmath>
#include <stdexcept>

namespace avatar {

namespace {

constexpr double kResidualGain = 0.3;

ad::Var flat_spatial(const ad::Var& x) { return ad::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}); }

}  // namespace

void CodecConfig::validate() const {
  if (channel_mult.size() < 2) throw std::invalid_argument("codec: need at least two resolution levels");
  if (resolution <= 0 || resolution % downsample_factor != 0)
    throw std::invalid_argument("codec: resolution " + std::to_string(resolution) + " is not divisible by f=" +
                                std::to_string(downsample_factor));
  if (downsample_factor != (1 << (channel_mult.size() - 1)))
    throw std::invalid_argument("codec: f must equal 2^(levels-1)");
  if (latent_channels < 1 || base_channels < 1 || res_blocks < 1) throw std::invalid_argument("codec: bad sizes");
}

CodecConfig CodecConfig::toy() { return {}; }

CodecConfig CodecConfig::paper() {
  CodecConfig c;
  c.resolution = 512;
  c.base_channels = 128;
  c.res_blocks = 2;
  c.attention_resolution = 32;
  return c;
}

void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = {{"resolution", c.resolution},
       {"downsample_factor", c.downsample_factor},
       {"latent_channels", c.latent_channels},
       {"base_channels", c.base_channels},
       {"channel_mult", c.channel_mult},
       {"res_blocks", c.res_blocks},
       {"attention_resolution", c.attention_resolution},
       {"attention_heads", c.attention_heads},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CodecConfig& c) {
  c.resolution = j.at("resolution");
  c.downsample_factor = j.at("downsample_factor");
  c.latent_channels = j.at("latent_channels");
  c.base_channels = j.at("base_channels");
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.res_blocks = j.at("res_blocks");
  c.attention_resolution = j.at("attention_resolution");
  c.attention_heads = j.at("attention_heads");
  c.seed = j.at("seed");
}

TextureCodec::ResBlock TextureCodec::make_block(const std::string& name, int cin, int cout, nn::Rng& rng) {
  ResBlock b;
  b.n1 = nn::GroupNorm(params_, name + ".n1", cin, nn::group_count(cin));
  b.c1 = nn::Conv2d(params_, name + ".c1", cin, cout, 3, 1, 1, rng);
  b.n2 = nn::GroupNorm(params_, name + ".n2", cout, nn::group_count(cout));
  b.c2 = nn::Conv2d(params_, name + ".c2", cout, cout, 3, 1, 1, rng, kResidualGain);
  if (cin != cout) {
    b.skip = nn::Conv2d(params_, name + ".skip", cin, cout, 1, 1, 0, rng);
    b.has_skip = true;
  }
  return b;
}

ad::Var TextureCodec::ResBlock::operator()(const ad::Var& x) const {
  auto h = c1(ad::silu(n1(x)));
  h = c2(ad::silu(n2(h)));
  return ad::add(has_skip ? skip(x) : x, h);
}

ad::Var TextureCodec::attend(const nn::SelfAttention& a, const ad::Var& x) const {
  return ad::reshape(a(flat_spatial(x)), x.shape());
}

TextureCodec::TextureCodec(CodecConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  nn::Rng rng(cfg_.seed);
  const int L = static_cast<int>(cfg_.channel_mult.size());
  std::vector<int> ch(L);
  for (int i = 0; i < L; ++i) ch[i] = cfg_.base_channels * cfg_.channel_mult[i];
  const int heads = cfg_.attention_heads;
  auto make_attn = [&](const std::string& name, int c) {
    return nn::SelfAttention(params_, name, c, heads, c / heads, rng);
  };

  // encoder
  for (int k = 0; k < 3; ++k) {
    const std::string n = "enc.branch" + std::to_string(k);
    heads_[k].conv_in = nn::Conv2d(params_, n + ".conv_in", 3, ch[0], 3, 1, 1, rng);
    heads_[k].down = nn::Conv2d(params_, n + ".down", ch[0], ch[0], 3, 2, 1, rng);
  }
  int res = cfg_.resolution / 2, cur = ch[0];
  for (int i = 1; i < L; ++i) {
    Level lv;
    for (int b = 0; b < cfg_.res_blocks; ++b) {
      const std::string n = "enc.l" + std::to_string(i) + ".b" + std::to_string(b);
      lv.blocks.push_back(make_block(n, cur, ch[i], rng));
      cur = ch[i];
      if (res == cfg_.attention_resolution) lv.attn.push_back(make_attn(n + ".attn", cur));
    }
    if (i < L - 1) {
      lv.resample = nn::Conv2d(params_, "enc.l" + std::to_string(i) + ".down", cur, cur, 3, 2, 1, rng);
      lv.has_resample = true;
      res /= 2;
    }
    enc_levels_.push_back(std::move(lv));
  }
  enc_mid1_ = make_block("enc.mid1", cur, cur, rng);
  enc_mid_attn_ = make_attn("enc.mid.attn", cur);
  enc_mid2_ = make_block("enc.mid2", cur, cur, rng);
  enc_norm_out_ = nn::GroupNorm(params_, "enc.norm_out", cur, nn::group_count(cur));
  enc_out_ = nn::Conv2d(params_, "enc.conv_out", cur, cfg_.latent_channels, 3, 1, 1, rng);

  // decoder
  decoder_first_param_ = params_.items().size();
  dec_in_ = nn::Conv2d(params_, "dec.conv_in", cfg_.latent_channels, cur, 3, 1, 1, rng);
  dec_mid1_ = make_block("dec.mid1", cur, cur, rng);
  dec_mid_attn_ = make_attn("dec.mid.attn", cur);
  dec_mid2_ = make_block("dec.mid2", cur, cur, rng);
  for (int i = L - 1; i >= 1; --i) {
    Level lv;
    for (int b = 0; b < cfg_.res_blocks; ++b) {
      const std::string n = "dec.l" + std::to_string(i) + ".b" + std::to_string(b);
      lv.blocks.push_back(make_block(n, cur, ch[i], rng));
      cur = ch[i];
      if (res == cfg_.attention_resolution) lv.attn.push_back(make_attn(n + ".attn", cur));
    }
    if (i > 1) {
      lv.resample = nn::Conv2d(params_, "dec.l" + std::to_string(i) + ".up", cur, cur, 3, 1, 1, rng);
      lv.has_resample = true;
      res *= 2;
    }
    dec_levels_.push_back(std::move(lv));
  }
  for (int k = 0; k < 3; ++k) {
    const std::string n = "dec.branch" + std::to_string(k);
    heads_[k].up = nn::Conv2d(params_, n + ".up", cur, ch[0], 3, 1, 1, rng);
    heads_[k].norm = nn::GroupNorm(params_, n + ".norm", ch[0], nn::group_count(ch[0]));
    heads_[k].conv_out = nn::Conv2d(params_, n + ".conv_out", ch[0], 3, 3, 1, 1, rng);
  }
}

ad::Var TextureCodec::encode(const ad::Var& maps) const {
  if (maps.value().ndim() != 4 || maps.dim(1) != 9 || maps.dim(2) != cfg_.resolution ||
      maps.dim(3) != cfg_.resolution)
    throw std::invalid_argument("codec: expected [N,9," + std::to_string(cfg_.resolution) + "," +
                                std::to_string(cfg_.resolution) + "] maps, got " + shape_str(maps.shape()));
  ad::Var h;
  for (int k = 0; k < 3; ++k) {
    auto x = ad::add_scalar(ad::slice(maps, 1, 3 * k, 3), -0.5);
    auto b = heads_[k].down(ad::silu(heads_[k].conv_in(x)));
    h = h.defined() ? ad::add(h, b) : b;
  }
  for (const auto& lv : enc_levels_) {
    for (std::size_t b = 0; b < lv.blocks.size(); ++b) {
      h = lv.blocks[b](h);
      if (!lv.attn.empty()) h = attend(lv.attn[b], h);
    }
    if (lv.has_resample) h = lv.resample(h);
  }
  h = enc_mid2_(attend(enc_mid_attn_, enc_mid1_(h)));
  h = enc_out_(ad::silu(enc_norm_out_(h)));
  return ad::scale(h, latent_scale_);
}

ad::Var TextureCodec::decode(const ad::Var& latent) const {
  const int s = cfg_.latent_side();
  if (latent.value().ndim() != 4 || latent.dim(1) != cfg_.latent_channels || latent.dim(2) != s || latent.dim(3) != s)
    throw std::invalid_argument("codec: expected latent [N," + std::to_string(cfg_.latent_channels) + "," +
                                std::to_string(s) + "," + std::to_string(s) + "], got " + shape_str(latent.shape()));
  auto h = dec_in_(ad::scale(latent, 1.0 / latent_scale_));
  h = dec_mid2_(attend(dec_mid_attn_, dec_mid1_(h)));
  for (const auto& lv : dec_levels_) {
    for (std::size_t b = 0; b < lv.blocks.size(); ++b) {
      h = lv.blocks[b](h);
      if (!lv.attn.empty()) h = attend(lv.attn[b], h);
    }
    if (lv.has_resample) h = lv.resample(ad::upsample_nearest(h, 2));
  }
  std::vector<ad::Var> outs;
  for (int k = 0; k < 3; ++k) {
    auto u = heads_[k].up(ad::upsample_nearest(h, 2));
    outs.push_back(ad::sigmoid(heads_[k].conv_out(ad::silu(heads_[k].norm(u)))));
  }
  return ad::concat(outs, 1);
}

Tensor TextureCodec::encode(const ReflectanceTriplet& x) const {
  ad::NoGradGuard ng;
  auto z = encode(ad::constant(stack_triplets({x}))).value();
  return z.reshaped({z.dim(1), z.dim(2), z.dim(3)});
}

ReflectanceTriplet TextureCodec::decode(const Tensor& grid) const {
  ad::NoGradGuard ng;
  if (grid.ndim() != 3) throw std::invalid_argument("codec: latent grid must be [c,h,w], got " + shape_str(grid.shape()));
  auto maps = decode(ad::constant(grid.reshaped({1, grid.dim(0), grid.dim(1), grid.dim(2)}))).value();
  return triplet_at(maps, 0);
}

std::vector<ad::Var> TextureCodec::decoder_params() const {
  std::vector<ad::Var> out;
  for (std::size_t i = decoder_first_param_; i < params_.items().size(); ++i) out.push_back(params_.items()[i].second);
  return out;
}

void TextureCodec::calibrate_scale(const std::vector<ReflectanceTriplet>& samples) {
  if (samples.empty()) throw std::invalid_argument("codec: calibration needs samples");
  const double prev = latent_scale_;
  latent_scale_ = 1.0;
  double s = 0.0, s2 = 0.0;
  std::int64_t n = 0;
  for (const auto& x : samples) {
    const Tensor z = encode(x);
    for (double v : z.vec()) {
      s += v;
      s2 += v * v;
      ++n;
    }
  }
  const double mean = s / n;
  const double sd = std::sqrt(std::max(0.0, s2 / n - mean * mean));
  latent_scale_ = sd > 1e-12 ? 1.0 / sd : prev;
}

io::Archive TextureCodec::to_archive() const {
  io::Archive a;
  a.meta = {{"kind", "texture_codec"}, {"config", cfg_}, {"latent_scale", latent_scale_}};
  a.arrays = params_.values();
  return a;
}

TextureCodec TextureCodec::from_archive(const io::Archive& a) {
  if (a.meta.value("kind", "") != "texture_codec") throw io::FormatError("archive is not a texture codec");
  TextureCodec c(a.meta.at("config").get<CodecConfig>());
  c.params_.assign_from(a.arrays);
  c.latent_scale_ = a.meta.at("latent_scale");
  return c;
}

BranchedDiscriminator::BranchedDiscriminator(int base, std::uint64_t seed) {
  nn::Rng rng(seed);
  b1a_ = nn::Conv2d(params_, "d.b1a", 6, base, 4, 2, 1, rng);
  b1b_ = nn::Conv2d(params_, "d.b1b", base, 2 * base, 4, 2, 1, rng);
  b2a_ = nn::Conv2d(params_, "d.b2a", 3, base, 4, 2, 1, rng);
  b2b_ = nn::Conv2d(params_, "d.b2b", base, 2 * base, 4, 2, 1, rng);
  shared_ = nn::Conv2d(params_, "d.shared", 2 * base, 1, 3, 1, 1, rng);
}

ad::Var BranchedDiscriminator::operator()(const ad::Var& maps) const {
  auto x1 = ad::add_scalar(ad::slice(maps, 1, 0, 6), -0.5);
  auto x2 = ad::add_scalar(ad::slice(maps, 1, 6, 3), -0.5);
  auto h1 = ad::leaky_relu(b1b_(ad::leaky_relu(b1a_(x1), 0.2)), 0.2);
  auto h2 = ad::leaky_relu(b2b_(ad::leaky_relu(b2a_(x2), 0.2)), 0.2);
  return shared_(ad::add(h1, h2));
}

void to_json(nlohmann::json& j, const AeTrainConfig& c) {
  j = {{"lr", c.lr},
       {"batch_size", c.batch_size},
       {"perceptual_weight", c.perceptual_weight},
       {"adversarial_weight", c.adversarial_weight},
       {"adversarial_start", c.adversarial_start},
       {"adversarial", c.adversarial},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AeTrainConfig& c) {
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  c.perceptual_weight = j.at("perceptual_weight");
  c.adversarial_weight = j.at("adversarial_weight");
  c.adversarial_start = j.at("adversarial_start");
  c.adversarial = j.at("adversarial");
  c.seed = j.at("seed");
}

AeTrainer::AeTrainer(TextureCodec& codec, const IdentityEncoder& perceptual, AeTrainConfig cfg)
    : codec_(&codec),
      percep_(&perceptual),
      cfg_(cfg),
      disc_(codec.config().base_channels, cfg.seed),
      opt_g_(codec.params(), {cfg.lr, 0.5, 0.9, 1e-8}),
      opt_d_(disc_.params(), {cfg.lr, 0.5, 0.9, 1e-8}) {
  if (codec.config().resolution % perceptual.config().input_size != 0)
    throw std::invalid_argument("ae trainer: map resolution must be a multiple of the perceptual input size");
}

ad::Var AeTrainer::perceptual_loss(const ad::Var& recon, const ad::Var& target) const {
  const int factor = codec_->config().resolution / percep_->config().input_size;
  ad::Var total;
  for (int k = 0; k < 3; ++k) {
    auto r = ad::slice(recon, 1, 3 * k, 3);
    auto t = ad::slice(target, 1, 3 * k, 3);
    if (factor > 1) {
      r = ad::avg_pool(r, factor);
      t = ad::avg_pool(t, factor);
    }
    std::vector<ad::Var> ft;
    {
      ad::NoGradGuard ng;
      ft = percep_->features(t);
    }
    const auto fr = percep_->features(r);
    for (std::size_t j = 0; j < fr.size(); ++j) {
      auto term = ad::mean(ad::square(ad::sub(fr[j], ad::constant(ft[j].value()))));
      total = total.defined() ? ad::add(total, term) : term;
    }
  }
  return ad::scale(total, 1.0 / 3.0);
}

AeLosses AeTrainer::step(const std::vector<ReflectanceTriplet>& batch) {
  const bool adv_on = cfg_.adversarial && step_ >= cfg_.adversarial_start;
  auto x = ad::constant(stack_triplets(batch));
  auto recon = codec_->decode(codec_->encode(x));
  auto rec = ad::mean(ad::abs(ad::sub(recon, x)));
  auto per = ad::scale(perceptual_loss(recon, x), cfg_.perceptual_weight);
  auto total = ad::add(rec, per);
  AeLosses out;
  if (adv_on) {
    auto g_adv = ad::scale(ad::neg(ad::mean(disc_(recon))), cfg_.adversarial_weight);
    out.adversarial = g_adv.item();
    total = ad::add(total, g_adv);
  }
  out.reconstruction = rec.item();
  out.perceptual = per.item();
  out.total = total.item();
  if (!std::isfinite(out.total))
    throw NumericalError("ae training: non-finite loss at step " + std::to_string(step_) + " (rec " +
                             std::to_string(out.reconstruction) + ", perceptual " + std::to_string(out.perceptual) +
                             ")");
  codec_->params().zero_grad();
  ad::backward(total);
  opt_g_.step();
  codec_->params().zero_grad();

  if (adv_on) {
    disc_.params().zero_grad();
    auto fake = ad::constant(recon.value());
    auto d_loss = ad::add(ad::mean(ad::relu(ad::add_scalar(ad::neg(disc_(x)), 1.0))),
                          ad::mean(ad::relu(ad::add_scalar(disc_(fake), 1.0))));
    out.discriminator = d_loss.item();
    ad::backward(d_loss);
    opt_d_.step();
    disc_.params().zero_grad();
  }
  ++step_;
  return out;
}

AeLosses AeTrainer::evaluate(const std::vector<ReflectanceTriplet>& batch) const {
  ad::NoGradGuard ng;
  auto x = ad::constant(stack_triplets(batch));
  auto recon = codec_->decode(codec_->encode(x));
  AeLosses out;
  out.reconstruction = ad::mean(ad::abs(ad::sub(recon, x))).item();
  out.perceptual = cfg_.perceptual_weight * perceptual_loss(recon, x).item();
  out.total = out.reconstruction + out.perceptual;
  return out;
}

Tensor stack_triplets(const std::vector<ReflectanceTriplet>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_triplets: empty batch");
  const auto h = xs[0].height(), w = xs[0].width();
  Tensor out({static_cast<std::int64_t>(xs.size()), 9, h, w});
  const std::int64_t per = 9 * h * w;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    if (xs[n].height() != h || xs[n].width() != w) throw std::invalid_argument("stack_triplets: mixed resolutions");
    const Tensor s = xs[n].stacked();
    std::copy(s.vec().begin(), s.vec().end(), out.vec().begin() + static_cast<std::int64_t>(n) * per);
  }
  return out;
}

ReflectanceTriplet triplet_at(const Tensor& stacked, std::int64_t n) {
  const auto h = stacked.dim(2), w = stacked.dim(3), per = 9 * h * w;
  Tensor one({9, h, w}, std::vector<double>(stacked.vec().begin() + n * per, stacked.vec().begin() + (n + 1) * per));
  return ReflectanceTriplet::from_stacked(one);
}

}  // namespace avatar
