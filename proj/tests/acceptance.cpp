// Acceptance suite: one PASS/FAIL line per criterion, then a summary.
// Trains the toy model from scratch (timed smoke runs, then the denoiser
// continued to the preset length), so a full run takes about ten minutes.
#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>

#include "avatar/dataset.hpp"
#include "avatar/metrics.hpp"
#include "avatar/renderer.hpp"
#include "avatar/run_config.hpp"
#include "avatar/sampling.hpp"
#include "avatar/training.hpp"
#include "gradcheck.hpp"
#include "ssim_reference.hpp"

using namespace avatar;
using clk = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kUnseenSeedOffset = 1000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::map<int, std::pair<std::string, Outcome>> results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  results[id] = {name, {pass, detail}};
  std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = from; i < from + n; ++i) s += v[i];
  return s / static_cast<double>(n);
}

// ------------------------------------------------------------ criteria

void schedule_round_trip() {
  const auto s = NoiseSchedule::build_linear(1000, 0.0015, 0.0195);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> td(0, 999);
  const auto t0 = clk::now();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto z0 = gaussian(97, rng);
    const auto eps = gaussian(97, rng);
    const int t = td(rng);
    const auto back = estimate_z0(q_sample(z0, t, eps, s), eps, t, s);
    for (std::size_t i = 0; i < z0.size(); ++i)
      worst = std::max(worst, std::abs(back[i] - z0[i]) / std::max(1.0, std::abs(z0[i])));
  }
  const double secs = seconds_since(t0);
  report(1, "q_sample/estimate_z0 round trip", worst <= 1e-6 && secs < 1.0,
         fmt("100 cases, max err %.2e (<= 1e-6), %.3fs (< 1s)", worst, secs));
}

void schedule_oracle() {
  using big = boost::multiprecision::cpp_dec_float_50;
  const auto s = NoiseSchedule::build_linear(1000, 0.0015, 0.0195);
  big prod = 1;
  double worst = 0.0;
  bool decreasing = true;
  for (int t = 0; t < 1000; ++t) {
    const big beta = big(0.0015) + (big(0.0195) - big(0.0015)) * big(t) / big(999);
    prod *= (big(1) - beta);
    worst = std::max(worst, static_cast<double>(abs((big(s.alpha_bar(t)) - prod) / prod)));
    if (t > 0 && !(s.alpha_bar(t) < s.alpha_bar(t - 1))) decreasing = false;
  }
  report(2, "T=1000 linear schedule", decreasing && worst <= 1e-12,
         fmt("alpha_bar strictly decreasing: %s, rel err vs 50-digit oracle %.2e (<= 1e-12)", decreasing ? "yes" : "no",
             worst));
}

void dropout_rate() {
  nn::Rng rng(2024);
  const auto d = condition_dropout(10000, 0.1, rng);
  const double rate = static_cast<double>(std::count(d.begin(), d.end(), true)) / 10000.0;
  report(9, "CFG dropout rate", rate >= 0.09 && rate <= 0.11, fmt("p=0.1 over 1e4 draws: %.4f (in [0.09, 0.11])", rate));
}

void metric_checks() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.2, 0.8), n(-0.1, 0.1);
  Tensor a({3, 32, 32}), b({3, 32, 32});
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    a[i] = u(rng);
    b[i] = std::clamp(a[i] + n(rng), 0.0, 1.0);
  }
  Tensor shifted = a;
  for (auto& v : shifted.vec()) v += 0.1;
  const double p = psnr(a, shifted);
  const double same = ssim(a, a);
  double ref = 0.0;
  for (int c = 0; c < 3; ++c) ref += testing::reference_ssim_plane(a.data() + c * 1024, b.data() + c * 1024, 32, 32) / 3;
  const double diff = std::abs(ssim(a, b) - ref);
  const bool ok = std::abs(p - 20.0) <= 1e-9 && std::abs(same - 1.0) <= 1e-12 && diff <= 1e-6;
  report(11, "metrics", ok,
         fmt("0.1 offset PSNR %.9f dB (20), SSIM(x,x) %.15f (1), |SSIM - reference| %.2e (<= 1e-6)", p, same, diff));
}

void shape_checks(const ShapeBasis& basis) {
  std::vector<double> zid(basis.n_id(), 0.0), zex(basis.n_expr(), 0.0);
  const Mesh mean = basis.mean_mesh();
  const bool exact_mean = decode_shape(zid, zex, basis).vertices == mean.vertices;

  std::mt19937_64 rng(5);
  const auto a_id = gaussian(basis.n_id(), rng), b_id = gaussian(basis.n_id(), rng);
  const auto a_ex = gaussian(basis.n_expr(), rng), b_ex = gaussian(basis.n_expr(), rng);
  std::vector<double> s_id(a_id.size()), s_ex(a_ex.size());
  for (std::size_t i = 0; i < s_id.size(); ++i) s_id[i] = a_id[i] + b_id[i];
  for (std::size_t i = 0; i < s_ex.size(); ++i) s_ex[i] = a_ex[i] + b_ex[i];
  const Mesh ma = decode_shape(a_id, a_ex, basis), mb = decode_shape(b_id, b_ex, basis);
  const Mesh ms = decode_shape(s_id, s_ex, basis);
  const double sup = (ms.vertices - ma.vertices - mb.vertices + mean.vertices).cwiseAbs().maxCoeff();
  const double self = vertex_l1_distance(ma, ma);
  report(5, "shape model", exact_mean && sup <= 1e-9 && self == 0.0,
         fmt("zero coefficients give the mean exactly: %s, superposition err %.2e (<= 1e-9), L_verts(x,x) = %g",
             exact_mean ? "yes" : "no", sup, self));
}

ReflectanceTriplet random_maps(int size, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8), t(-0.25, 0.25);
  ReflectanceTriplet m = ReflectanceTriplet::constant(size, 0.0, 0.0);
  for (auto& v : m.diffuse.vec()) v = u(rng);
  for (auto& v : m.specular.vec()) v = u(rng);
  const int plane = size * size;
  for (int i = 0; i < plane; ++i) {
    Eigen::Vector3d n(t(rng), t(rng), 1.0);
    n.normalize();
    for (int c = 0; c < 3; ++c) m.normals[c * plane + i] = 0.5 * (n[c] + 1.0);
  }
  return m;
}

double renderer_gradcheck(const ShapeBasis& basis) {
  const auto mesh = basis.mean_mesh();
  const auto maps = random_maps(8, 4);
  Pose pose;
  pose.rotation = {0.1, -0.15, 0.05};
  const auto raster = rasterize(mesh, pose, 16);
  ad::Var A(maps.diffuse), S(maps.specular), N(maps.normals);
  ad::Var ill(Tensor::from(std::vector<double>{0.2, 0.15, 0.1, 0.5, 0.45, 0.4, 0.3, 0.4, 1.0}));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor wts({3, 16, 16});
  for (auto& v : wts.vec()) v = u(rng);
  auto f = [&] { return ad::sum(ad::mul(shade(raster, A, S, N, ill), ad::constant(wts))); };
  double worst = 0.0;
  for (auto* leaf : {&ill, &A, &S, &N}) worst = std::max(worst, testing::gradcheck(f, *leaf, {}, 1e-6, 1e-6).max_rel_err);
  return worst;
}

double guidance_gradcheck(const AvatarModel& m, const Dataset& data, int index) {
  const auto& smp = data.samples[index];
  const auto target = make_target(m, smp.image, observed_landmarks(smp.mesh(data.basis), data.basis, smp.pose));
  const auto cond = m.condition(target.embedding);
  const auto cfg = GuidanceConfig::toy();
  const auto& l = m.layout();
  const int t = 400;
  std::mt19937_64 rng(31);
  const auto z = gaussian(l.total(), rng);
  Raster raster;
  {
    ad::NoGradGuard ng;
    const auto eps = predict_eps(m, ad::constant(Tensor::from(z)), t, cond, 1.0).value().vec();
    raster = m.raster_for(m.decode(ad::constant(Tensor::from(estimate_z0(z, eps, t, m.schedule())))), smp.pose);
  }
  ad::Var zv(Tensor::from(z), true);
  ad::backward(guidance_objective(m, zv, t, cond, target, smp.pose, cfg, &raster));
  const auto grad = zv.grad().vec();
  auto eval = [&](const std::vector<double>& zz) {
    ad::NoGradGuard ng;
    return guidance_objective(m, ad::constant(Tensor::from(zz)), t, cond, target, smp.pose, cfg, &raster).item();
  };
  const std::vector<std::size_t> probes{0,
                                        17,
                                        l.tex_len - 1,
                                        l.shape_id_offset(),
                                        l.shape_id_offset() + 7,
                                        l.shape_expr_offset() + 3,
                                        l.ill_offset(),
                                        l.ill_offset() + 5};
  double worst = 0.0;
  const double h = 1e-5;
  for (auto i : probes) {
    auto zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const double fd = (eval(zp) - eval(zm)) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

double masked_mse(const ReflectanceTriplet& a, const ReflectanceTriplet& b, const Tensor& mask, bool known) {
  const std::int64_t plane = mask.numel();
  double se = 0.0;
  std::int64_t n = 0;
  for (const auto& [x, y] : {std::pair{&a.diffuse, &b.diffuse}, {&a.specular, &b.specular}, {&a.normals, &b.normals}})
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < plane; ++i)
        if ((mask[i] > 0.5) == known) {
          const double d = (*x)[c * plane + i] - (*y)[c * plane + i];
          se += d * d;
          ++n;
        }
  return se / static_cast<double>(n);
}

}  // namespace

int main() {
  const auto t_all = clk::now();
  schedule_round_trip();
  schedule_oracle();
  dropout_rate();
  metric_checks();

  const ModelConfig cfg = ModelConfig::toy();
  const Dataset data = generate_dataset(DatasetConfig::toy(), cfg.layout, cfg.build_basis(), cfg.encoder);
  shape_checks(data.basis);

  // train on every image; evaluation targets are 32 identities the model never saw
  std::vector<int> train;
  for (const auto& s : data.samples) train.push_back(s.index);
  DatasetConfig unseen_cfg = DatasetConfig::toy();
  unseen_cfg.seed += kUnseenSeedOffset;
  unseen_cfg.count = 32;
  unseen_cfg.samples_per_identity = 1;
  const Dataset unseen = generate_dataset(unseen_cfg, cfg.layout, data.basis, cfg.encoder);
  std::vector<int> held;
  for (const auto& s : unseen.samples) held.push_back(s.index);

  // ---- smoke training, then the denoiser continued to the preset length
  const RunConfig preset = RunConfig::toy();
  const RunSettings& run = preset.run;
  const auto t_smoke = clk::now();
  TextureCodec codec(cfg.codec);
  const auto ae = train_codec(codec, data, train, preset.ae, run.ae_steps);
  const double t_ae = seconds_since(t_smoke);
  AvatarModel model(cfg, codec, data.encoder, data.basis);
  LdmTrainer trainer(model, data, preset.ldm);
  const auto ldm = train_denoiser(trainer, train, 200);
  const double t_train = seconds_since(t_smoke);
  {
    std::vector<double> rec, noise;
    for (const auto& l : ae) rec.push_back(l.reconstruction);
    for (const auto& r : ldm) noise.push_back(r.noise);
    const double drop_ae = 1.0 - window_mean(rec, rec.size() - 10, 10) / window_mean(rec, 0, 10);
    const double drop_ldm = 1.0 - window_mean(noise, noise.size() - 10, 10) / window_mean(noise, 0, 10);
    report(8, "smoke training", ae.size() == 200 && drop_ae >= 0.2 && drop_ldm >= 0.2 && t_train < 600.0,
           fmt("AE reconstruction -%.0f%% in %zu steps, LDM noise loss -%.0f%% in 200 steps (each >= 20%%), "
               "%.0fs + %.0fs (< 600s)",
               100 * drop_ae, ae.size(), 100 * drop_ldm, t_ae, t_train - t_ae));
  }
  const auto t_more = clk::now();
  train_denoiser(trainer, train, run.ldm_steps - static_cast<int>(trainer.steps()));
  std::printf("       denoiser continued to %d steps in %.0fs\n", run.ldm_steps, seconds_since(t_more));

  // ---- determinism and speed of plain DDIM
  {
    auto g = GuidanceConfig::toy();
    g.scale = 0.0;
    const auto cond = model.condition(unseen.samples[held[0]].embedding);
    const auto t0 = clk::now();
    const auto a = sample_latent(model, cond, g, 11);
    const double secs = seconds_since(t0);
    const auto b = sample_latent(model, cond, g, 11);
    const bool same = a.values() == b.values();
    report(3, "DDIM eta=0 determinism", same && secs < 10.0,
           fmt("two runs bit-identical: %s, %d steps in %.2fs (< 10s)", same ? "yes" : "no", g.steps, secs));
  }

  // ---- gradients
  {
    const double r = renderer_gradcheck(data.basis);
    const double g = guidance_gradcheck(model, unseen, held[1]);
    report(4, "gradient checks", r <= 1e-3 && g <= 1e-2,
           fmt("renderer max rel err %.2e (<= 1e-3), grad_z G on 8 probes %.2e (<= 1e-2)", r, g));
  }

  // ---- CFG degeneracies and runnable arms
  {
    std::mt19937_64 rng(12);
    const auto c = gaussian(64, rng), u = gaussian(64, rng);
    const bool w0 = cfg_eps(c, u, 0.0) == u, w1 = cfg_eps(c, u, 1.0) == c;
    const auto& smp = unseen.samples[held[2]];
    auto g = GuidanceConfig::toy();
    g.steps = 10;
    const auto arms = run_ablation(model, {{smp.image, std::nullopt}}, standard_arms(), g, 3);
    bool finite = arms.size() == 4;
    std::string names;
    for (const auto& a : arms) {
      finite = finite && std::isfinite(a.stats.mean);
      names += (names.empty() ? "" : ", ") + a.name;
    }
    report(6, "CFG degeneracies and ablation arms", w0 && w1 && finite,
           fmt("w=0 exact: %s, w=1 exact: %s, arms run: %s", w0 ? "yes" : "no", w1 ? "yes" : "no", names.c_str()));
  }

  // ---- ablation
  {
    std::vector<EvalTarget> targets;
    for (int i : held) {
      const auto& s = unseen.samples[i];
      targets.push_back({s.image, observed_landmarks(s.mesh(unseen.basis), unseen.basis, s.pose)});
    }
    const auto t1 = clk::now();
    const auto arms = run_ablation(model, targets, standard_arms(), GuidanceConfig::toy(), 1000);
    const double t_abl = seconds_since(t1);
    std::map<std::string, double> mean;
    std::string table;
    for (const auto& a : arms) {
      mean[a.name] = a.stats.mean;
      table += fmt("%s%s %.3f", table.empty() ? "" : ", ", a.name.c_str(), a.stats.mean);
    }
    const double lo = mean["Label Only"], c2 = mean["CFG (w=2)"], gd = mean["Guidance"];
    report(7, "toy ablation", gd > c2 && c2 >= lo && gd - lo >= 0.15,
           fmt("%zu unseen identities: %s; Guidance - Label Only = %.3f (>= 0.15); ablation %.0fs",
               targets.size(), table.c_str(), gd - lo, t_abl));
  }

  // ---- texture completion
  {
    const auto& first = unseen.samples[held[0]];
    const std::int64_t R = first.maps.height();
    const auto g = GuidanceConfig::toy();
    const auto cond0 = model.condition(first.embedding);
    Tensor full({R, R}), empty({R, R}), half({R, R});
    full.fill(1.0);
    for (std::int64_t y = 0; y < R; ++y)
      for (std::int64_t x = 0; x < R / 2; ++x) half[y * R + x] = 1.0;
    const bool full_ok =
        complete_texture(model, first.maps, full, cond0, g, 5) == model.codec().decode(model.codec().encode(first.maps));
    const bool empty_ok =
        complete_texture(model, first.maps, empty, cond0, g, 5) == model.decode(sample_latent(model, cond0, g, 5)).maps;

    struct Paired {
      double mse_id = 0.0, mse_null = 0.0, known_psnr = INFINITY;
      int wins = 0;
    };
    const int runs = 8;
    auto paired = [&](const Dataset& d, const std::vector<int>& idx) {
      Paired p;
      for (int k = 0; k < runs; ++k) {
        const auto& s = d.samples[idx[k]];
        const auto with_id = complete_texture(model, s.maps, half, model.condition(s.embedding), g, 700 + k);
        const auto with_null = complete_texture(model, s.maps, half, model.null_condition(), g, 700 + k);
        const double a = masked_mse(with_id, s.maps, half, false), b = masked_mse(with_null, s.maps, half, false);
        p.mse_id += a / runs;
        p.mse_null += b / runs;
        p.wins += a < b;
        p.known_psnr = std::min(p.known_psnr, -10.0 * std::log10(masked_mse(with_id, s.maps, half, true)));
      }
      return p;
    };
    const Paired u = paired(unseen, held);
    // same runs on training identities, for reference only
    const Paired t = paired(data, train);
    report(10, "texture completion", full_ok && empty_ok && u.mse_id < u.mse_null,
           fmt("full mask exact: %s, empty mask exact: %s, unseen identities: masked MSE identity %.5f vs null %.5f "
               "(%d/%d paired wins), worst known-region PSNR %.1f dB; not counted, training identities: %.5f vs %.5f "
               "(%d/%d)",
               full_ok ? "yes" : "no", empty_ok ? "yes" : "no", u.mse_id, u.mse_null, u.wins, runs, u.known_psnr,
               t.mse_id, t.mse_null, t.wins, runs));
  }

  int passed = 0;
  std::printf("\nsummary (%.0fs)\n", seconds_since(t_all));
  for (const auto& [id, r] : results) {
    passed += r.second.pass;
    std::printf("  %2d %-36s %s\n", id, r.first.c_str(), r.second.pass ? "PASS" : "FAIL");
  }
  std::printf("%d/%zu criteria pass\n", passed, results.size());
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}
