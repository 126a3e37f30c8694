#include "avatar/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace avatar {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> w{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// valid-mode separable blur of an H x W plane
std::vector<double> blur(const double* x, std::int64_t H, std::int64_t W) {
  static const auto w = gaussian_taps();
  const std::int64_t oh = H - kWin + 1, ow = W - kWin + 1;
  std::vector<double> rows(static_cast<std::size_t>(H * ow), 0.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x0 = 0; x0 < ow; ++x0) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += w[k] * x[y * W + x0 + k];
      rows[y * ow + x0] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
  for (std::int64_t y0 = 0; y0 < oh; ++y0)
    for (std::int64_t x0 = 0; x0 < ow; ++x0) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += w[k] * rows[(y0 + k) * ow + x0];
      out[y0 * ow + x0] = acc;
    }
  return out;
}

double ssim_plane(const double* a, const double* b, std::int64_t H, std::int64_t W) {
  const auto n = static_cast<std::size_t>(H * W);
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = blur(a, H, W), mu_b = blur(b, H, W);
  const auto s_aa = blur(aa.data(), H, W), s_bb = blur(bb.data(), H, W), s_ab = blur(ab.data(), H, W);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i], vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    acc += ((2 * mu_a[i] * mu_b[i] + kC1) * (2 * cov + kC2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
  }
  return acc / static_cast<double>(mu_a.size());
}

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  if (a.numel() == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

MapMetric map_metric(const Tensor& p, const Tensor& g) { return {mse(p, g), psnr(p, g), ssim(p, g)}; }

double fit_similarity(const AvatarModel& m, const EvalTarget& target, const GuidanceTarget& gt, const Pose& pose,
                      const ConditionTensor& cond, const GuidanceConfig& cfg, bool guided, std::uint64_t seed) {
  const auto z = sample_latent(m, cond, cfg, seed, guided ? &gt : nullptr, &pose);
  return identity_similarity(m.encoder(), m.render(z, pose), target.image);
}

struct Prepared {
  GuidanceTarget target;
  Pose pose;
  ConditionTensor cond;
};

Prepared prepare(const AvatarModel& m, const EvalTarget& t) {
  auto gt = make_target(m, t.image, t.landmarks);
  const auto pose = estimate_pose(t.image, m.basis()).pose;
  auto cond = m.condition(gt.embedding);
  return {std::move(gt), pose, std::move(cond)};
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "mse");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

double ssim(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "ssim");
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("ssim: expected [H,W] or [C,H,W]");
  const std::int64_t H = a.dim(a.ndim() - 2), W = a.dim(a.ndim() - 1);
  const std::int64_t C = a.ndim() == 3 ? a.dim(0) : 1;
  if (H < kWin || W < kWin) throw std::invalid_argument("ssim: images must be at least 11 x 11");
  double acc = 0.0;
  for (std::int64_t c = 0; c < C; ++c) acc += ssim_plane(a.data() + c * H * W, b.data() + c * H * W, H, W);
  return acc / static_cast<double>(C);
}

MetricReport map_metrics(const ReflectanceTriplet& pred, const ReflectanceTriplet& gt) {
  MetricReport r;
  r.diffuse = map_metric(pred.diffuse, gt.diffuse);
  r.specular = map_metric(pred.specular, gt.specular);
  r.normals = map_metric(pred.normals, gt.normals);
  r.mean.mse = (r.diffuse.mse + r.specular.mse + r.normals.mse) / 3.0;
  r.mean.psnr = (r.diffuse.psnr + r.specular.psnr + r.normals.psnr) / 3.0;
  r.mean.ssim = (r.diffuse.ssim + r.specular.ssim + r.normals.ssim) / 3.0;
  return r;
}

Stats summarize(const std::vector<double>& v) {
  if (v.empty()) return {};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
}

double identity_similarity(const IdentityEncoder& enc, const Tensor& image, const Tensor& target) {
  return cosine_similarity(enc.embed(image).V, enc.embed(target).V);
}

std::vector<double> identity_preservation(const IdentityEncoder& enc, const std::vector<Tensor>& renders,
                                          const std::vector<Tensor>& targets) {
  if (renders.size() != targets.size())
    throw std::invalid_argument("identity preservation: need one render per target");
  std::vector<double> out;
  out.reserve(renders.size());
  for (std::size_t i = 0; i < renders.size(); ++i) out.push_back(identity_similarity(enc, renders[i], targets[i]));
  return out;
}

Separability separability(const std::vector<double>& same, const std::vector<double>& diff) {
  if (same.empty() || diff.empty()) throw std::invalid_argument("separability: pair lists must be non-empty");
  Separability s{summarize(same).mean, summarize(diff).mean, 0.0};
  s.gap = s.mean_same - s.mean_diff;
  return s;
}

std::vector<AblationArm> standard_arms() {
  return {{"Label Only", 1.0, false}, {"CFG (w=2)", 2.0, false}, {"CFG (w=9)", 9.0, false}, {"Guidance", 1.0, true}};
}

std::vector<ArmResult> run_ablation(const AvatarModel& m, const std::vector<EvalTarget>& targets,
                                    const std::vector<AblationArm>& arms, const GuidanceConfig& base,
                                    std::uint64_t seed) {
  if (targets.empty() || arms.empty()) throw std::invalid_argument("ablation: need targets and arms");
  std::vector<ArmResult> out;
  for (const auto& a : arms) out.push_back({a.name, {}, {}});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto p = prepare(m, targets[i]);
    for (std::size_t k = 0; k < arms.size(); ++k) {
      GuidanceConfig cfg = base;
      cfg.cfg_scale = arms[k].cfg_scale;
      if (!arms[k].guided) cfg.scale = 0.0;
      out[k].similarity.push_back(fit_similarity(m, targets[i], p.target, p.pose, p.cond, cfg, arms[k].guided, seed + i));
    }
  }
  for (auto& r : out) r.stats = summarize(r.similarity);
  return out;
}

std::vector<SweepRow> guidance_scale_sweep(const AvatarModel& m, const std::vector<EvalTarget>& targets,
                                           const std::vector<double>& scales, const GuidanceConfig& base,
                                           std::uint64_t seed) {
  if (scales.empty()) throw std::invalid_argument("sweep: scales must be non-empty");
  if (targets.empty()) throw std::invalid_argument("sweep: need at least one target");
  std::vector<std::vector<double>> sims(scales.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto p = prepare(m, targets[i]);
    for (std::size_t k = 0; k < scales.size(); ++k) {
      GuidanceConfig cfg = base;
      cfg.scale = scales[k];
      sims[k].push_back(fit_similarity(m, targets[i], p.target, p.pose, p.cond, cfg, true, seed + i));
    }
  }
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < scales.size(); ++k) rows.push_back({scales[k], summarize(sims[k])});
  return rows;
}

void to_json(nlohmann::json& j, const MapMetric& m) {
  // JSON has no infinity; the sentinel is the string "inf"
  j = {{"mse", m.mse}, {"ssim", m.ssim}};
  if (std::isinf(m.psnr))
    j["psnr"] = "inf";
  else
    j["psnr"] = m.psnr;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"diffuse", r.diffuse}, {"specular", r.specular}, {"normals", r.normals}, {"mean", r.mean}};
  if (r.identity) j["identity"] = *r.identity;
}

void to_json(nlohmann::json& j, const ArmResult& r) {
  j = {{"name", r.name}, {"mean", r.stats.mean}, {"std", r.stats.stddev}, {"similarity", r.similarity}};
}

void to_json(nlohmann::json& j, const SweepRow& r) {
  j = {{"scale", r.scale}, {"mean", r.similarity.mean}, {"std", r.similarity.stddev}};
}

std::string ablation_csv(const std::vector<ArmResult>& arms) {
  std::ostringstream os;
  os.precision(17);
  os << "arm,mean_similarity,std\n";
  for (const auto& a : arms) os << '"' << a.name << "\"," << a.stats.mean << ',' << a.stats.stddev << '\n';
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "scale,mean_similarity,std\n";
  for (const auto& r : rows) os << r.scale << ',' << r.similarity.mean << ',' << r.similarity.stddev << '\n';
  return os.str();
}

}  // namespace avatar
