// avatar: dataset generation, two-phase training, sampling, fitting,
// completion and evaluation from the command line.
#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "avatar/artifacts.hpp"
#include "avatar/metrics.hpp"
#include "avatar/plot.hpp"
#include "avatar/run_config.hpp"

namespace fs = std::filesystem;
using namespace avatar;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kInput = 3, kNumerical = 4 };

// A required file or directory is absent or unreadable.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string preset = "toy";
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> cfg_scale, grad_scale;
  std::string out, checkpoint, dataset, image, landmarks, maps, mask, table;
  std::string scales = "0,30,60,90";
};

std::string number_text(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RunConfig resolve_config(const Options& o) {
  RunConfig c = RunConfig::from_preset(o.preset);
  if (!o.config.empty()) {
    if (!fs::is_regular_file(o.config)) throw ConfigError("config file not found: " + o.config);
    c.apply(parse_overrides(io::read_text(o.config)));
  }
  std::map<std::string, std::string> flags;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    if (!flags.emplace(s.substr(0, eq), s.substr(eq + 1)).second)
      throw ConfigError("--set names '" + s.substr(0, eq) + "' twice");
  }
  if (o.seed) flags["run.seed"] = std::to_string(*o.seed);
  if (o.steps) flags["guidance.steps"] = std::to_string(*o.steps);
  if (o.cfg_scale) flags["guidance.cfg_scale"] = number_text(*o.cfg_scale);
  if (o.grad_scale) flags["guidance.scale"] = number_text(*o.grad_scale);
  if (!flags.empty()) c.apply(flags);
  return c;
}

int thread_count() {
  const char* e = std::getenv("AVATAR_THREADS");
  if (!e || !*e) return omp_get_max_threads();
  int n = 0;
  const auto r = std::from_chars(e, e + std::strlen(e), n);
  if (r.ec != std::errc() || *r.ptr != '\0' || n < 1)
    throw ConfigError(std::string("AVATAR_THREADS must be a positive integer, got '") + e + "'");
  omp_set_num_threads(n);
  return n;
}

// Git-style hash of a directory: SHA-1 over "<blob hash> <relative path>"
// lines of every regular file in path order.
std::string tree_hash(const fs::path& dir, std::map<std::string, std::string>* files = nullptr) {
  std::vector<std::pair<std::string, fs::path>> entries;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "run.json") continue;
    entries.emplace_back(rel, e.path());
  }
  std::sort(entries.begin(), entries.end());
  std::string listing;
  for (const auto& [rel, p] : entries) {
    const auto h = io::git_blob_hash(p);
    listing += h + ' ' + rel + '\n';
    if (files) (*files)[rel] = h;
  }
  return io::sha1_hex(listing);
}

std::string path_hash(const fs::path& p) { return fs::is_directory(p) ? tree_hash(p) : io::git_blob_hash(p); }

struct Run {
  std::string command;
  RunConfig cfg;
  fs::path out;
  int threads = 1;
  json inputs = json::object();

  void input(const std::string& name, const fs::path& p) {
    inputs[name] = {{"path", p.string()}, {"hash", path_hash(p)}};
  }

  // run.json plus config.txt (loadable again with --config).
  void finish(const json& results) const {
    std::string overrides;
    for (const auto& [k, v] : cfg.flatten()) overrides += k + " = " + v + "\n";
    io::write_text(out / "config.txt", overrides);
    std::map<std::string, std::string> files;
    const auto content = tree_hash(out, &files);
    json manifest = {{"command", command},
                     {"preset", cfg.preset},
                     {"config", cfg.to_json()},
                     {"config_hash", io::sha1_hex(cfg.to_json().dump())},
                     {"threads", threads},
                     {"inputs", inputs},
                     {"results", results},
                     {"file_count", files.size()},
                     {"content_hash", content}};
    if (files.size() <= 64) manifest["files"] = files;
    io::write_text(out / "run.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << out.string() << " (content " << content.substr(0, 12) << ")\n";
  }
};

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

Dataset open_dataset(const Options& o, const RunConfig& cfg) {
  if (o.dataset.empty()) throw ConfigError("--dataset is required");
  if (!fs::exists(fs::path(o.dataset) / "manifest.json"))
    throw InputError("no dataset at " + o.dataset + "; create one with `avatar make-dataset`");
  Dataset d = load_dataset(o.dataset);
  if (d.config.render_size != cfg.model.render_size || d.config.map_resolution != cfg.model.codec.resolution ||
      json(d.layout) != json(cfg.model.layout))
    throw ConfigError("dataset at " + o.dataset + " was made with different sizes than preset '" + cfg.preset +
                      "'; pass the same --preset/--set used for make-dataset");
  return d;
}

AvatarModel open_model(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint (a train-ldm output directory) is required");
  const fs::path dir = o.checkpoint;
  if (!fs::exists(dir / "denoiser.avtr")) {
    if (fs::exists(dir / "codec.avtr"))
      throw InputError(dir.string() + " holds only an autoencoder; run `avatar train-ldm` on it first");
    throw InputError("no trained model in " + dir.string() + "; run `avatar train-ldm` first");
  }
  return AvatarModel::load(dir);
}

Tensor read_image(const std::string& path, int size) {
  if (path.empty()) throw ConfigError("--image is required");
  if (!fs::is_regular_file(path)) throw InputError("image not found: " + path);
  Tensor img = io::read_png(path);
  if (img.ndim() != 3 || img.dim(0) != 3 || img.dim(1) != size || img.dim(2) != size)
    throw InputError("image " + path + " is " + shape_str(img.shape()) + ", the model needs an RGB " +
                     std::to_string(size) + "x" + std::to_string(size) + " PNG");
  return img;
}

std::vector<int> holdout(const Dataset& d, const RunConfig& cfg) {
  auto v = split_dataset(d, cfg.run.holdout_fraction).validation;
  if (cfg.run.eval_targets > 0 && static_cast<int>(v.size()) > cfg.run.eval_targets) v.resize(cfg.run.eval_targets);
  if (v.empty()) throw ConfigError("the held-out split is empty; raise dataset.count or run.holdout_fraction");
  return v;
}

std::vector<EvalTarget> eval_targets(const Dataset& d, const std::vector<int>& idx) {
  std::vector<EvalTarget> t;
  for (int i : idx) {
    const auto& s = d.samples[i];
    t.push_back({s.image, observed_landmarks(s.mesh(d.basis), d.basis, s.pose)});
  }
  return t;
}

json pose_json(const Pose& p) {
  return {{"rotation", p.rotation}, {"translation", p.translation}, {"scale", p.scale}};
}

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t n) {
  n = std::min(n, v.size() - from);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[from + i];
  return n ? s / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------- commands

json cmd_make_dataset(const Options&, Run& run) {
  const auto& c = run.cfg;
  const Dataset d = generate_dataset(c.dataset, c.model.layout, c.model.build_basis(), c.model.encoder);
  save_dataset(d, run.out);
  std::cout << "dataset: " << d.size() << " samples\n";
  return {{"samples", d.size()}, {"checksum", dataset_checksum(d)}};
}

json cmd_train_ae(const Options& o, Run& run) {
  const auto& c = run.cfg;
  const Dataset d = open_dataset(o, c);
  run.input("dataset", o.dataset);
  const auto split = split_dataset(d, c.run.holdout_fraction);
  TextureCodec codec(c.model.codec);
  std::ofstream log(run.out / "ae_log.txt");
  const auto losses = train_codec(codec, d, split.train, c.ae, c.run.ae_steps, &log, c.run.log_every);
  io::save_archive(run.out / "codec.avtr", codec.to_archive());

  std::vector<double> rec, psnr;
  for (const auto& l : losses) rec.push_back(l.reconstruction);
  for (int i : split.validation) {
    const auto& maps = d.samples[i].maps;
    psnr.push_back(map_metrics(codec.decode(codec.encode(maps)), maps).mean.psnr);
  }
  json r = {{"steps", losses.size()},
            {"train_items", split.train.size()},
            {"latent_scale", codec.latent_scale()},
            {"validation_psnr", psnr.empty() ? 0.0 : summarize(psnr).mean}};
  if (!rec.empty()) {
    r["reconstruction_first10"] = window_mean(rec, 0, 10);
    r["reconstruction_last10"] = window_mean(rec, rec.size() - std::min<std::size_t>(10, rec.size()), 10);
  }
  std::cout << "train-ae: " << losses.size() << " steps, validation PSNR " << r["validation_psnr"].get<double>()
            << " dB\n";
  return r;
}

json cmd_train_ldm(const Options& o, Run& run) {
  const auto& c = run.cfg;
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint (a train-ae output directory) is required");
  const fs::path ck = o.checkpoint;
  if (!fs::exists(ck / "codec.avtr"))
    throw InputError("no autoencoder checkpoint in " + ck.string() + "; run `avatar train-ae` first");
  const Dataset d = open_dataset(o, c);
  run.input("dataset", o.dataset);
  run.input("checkpoint", ck / "codec.avtr");
  TextureCodec codec = TextureCodec::from_archive(io::load_archive(ck / "codec.avtr"));
  if (json(codec.config()) != json(c.model.codec))
    throw ConfigError("the autoencoder in " + ck.string() + " was trained with a different codec configuration");
  AvatarModel model(c.model, std::move(codec), d.encoder, d.basis);
  const auto split = split_dataset(d, c.run.holdout_fraction);
  LdmTrainer trainer(model, d, c.ldm);
  std::ofstream log(run.out / "ldm_log.txt");
  const int steps = c.ldm_step_count(static_cast<int>(split.train.size()));
  const auto reports = train_denoiser(trainer, split.train, steps, &log, c.run.log_every);
  model.save(run.out);

  std::vector<double> noise;
  for (const auto& r : reports) noise.push_back(r.noise);
  json r = {{"steps", steps}, {"train_items", split.train.size()}};
  if (!noise.empty()) {
    r["noise_first10"] = window_mean(noise, 0, 10);
    r["noise_last10"] = window_mean(noise, noise.size() - std::min<std::size_t>(10, noise.size()), 10);
  }
  std::cout << "train-ldm: " << steps << " steps\n";
  return r;
}

json cmd_sample(const Options& o, Run& run) {
  const auto m = open_model(o);
  run.input("checkpoint", o.checkpoint);
  const auto& c = run.cfg;
  const auto zs = sample_unconditional(m, c.run.samples, c.run.seed, c.guidance.steps);
  const Pose front;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    write_avatar(run.out / name, m, zs[i], &front);
  }
  std::cout << "sample: " << zs.size() << " avatars\n";
  return {{"samples", zs.size()}};
}

json cmd_fit(const Options& o, Run& run) {
  const auto m = open_model(o);
  run.input("checkpoint", o.checkpoint);
  const Tensor img = read_image(o.image, m.config().render_size);
  run.input("image", o.image);
  std::optional<Tensor> lms;
  if (!o.landmarks.empty()) {
    if (!fs::is_regular_file(o.landmarks)) throw InputError("landmarks not found: " + o.landmarks);
    lms = io::load_npy(o.landmarks);
    run.input("landmarks", o.landmarks);
  }
  const auto r = guided_sample(m, img, run.cfg.guidance, run.cfg.run.seed, lms);
  for (const auto& w : r.trace.warnings) std::cerr << "warning: " << w << '\n';
  write_avatar(run.out, m, r.latent, &r.pose);
  const double sim = identity_similarity(m.encoder(), m.render(r.latent, r.pose), img);
  std::cout << "fit: identity similarity " << sim << '\n';
  return {{"pose", pose_json(r.pose)},
          {"pose_singular", r.pose_singular},
          {"warnings", r.trace.warnings},
          {"guidance", r.trace.guidance},
          {"identity_similarity", sim}};
}

json cmd_complete(const Options& o, Run& run) {
  const auto m = open_model(o);
  run.input("checkpoint", o.checkpoint);
  if (o.maps.empty() || o.mask.empty()) throw ConfigError("--maps and --mask are required");
  if (!fs::is_directory(o.maps)) throw InputError("maps directory not found: " + o.maps);
  if (!fs::is_regular_file(o.mask)) throw InputError("mask not found: " + o.mask);
  const auto partial = read_maps(o.maps);
  run.input("maps", o.maps);
  run.input("mask", o.mask);
  const Tensor raw = io::read_png(o.mask);
  const std::int64_t h = raw.dim(1), w = raw.dim(2);
  Tensor mask({h, w});
  double known = 0.0;
  for (std::int64_t i = 0; i < h * w; ++i) known += mask[i] = raw[i] >= 0.5 ? 1.0 : 0.0;

  ConditionTensor cond = m.null_condition();
  if (!o.image.empty()) {
    cond = m.condition(m.encoder().embed(read_image(o.image, m.config().render_size)));
    run.input("image", o.image);
  }
  const auto out = complete_texture(m, partial, mask, cond, run.cfg.guidance, run.cfg.run.seed);
  write_maps(run.out, out);

  json psnr_known = json::object();
  const std::pair<const char*, const Tensor ReflectanceTriplet::*> maps[] = {
      {"diffuse", &ReflectanceTriplet::diffuse},
      {"specular", &ReflectanceTriplet::specular},
      {"normals", &ReflectanceTriplet::normals}};
  for (const auto& [name, field] : maps) {
    const Tensor& a = out.*field;
    const Tensor& b = partial.*field;
    double se = 0.0;
    std::int64_t n = 0;
    for (std::int64_t ch = 0; ch < a.dim(0); ++ch)
      for (std::int64_t i = 0; i < h * w; ++i)
        if (mask[i] > 0.5) {
          const double d = a[ch * h * w + i] - b[ch * h * w + i];
          se += d * d;
          ++n;
        }
    if (n) psnr_known[name] = se > 0 ? json(10.0 * std::log10(static_cast<double>(n) / se)) : json("inf");
  }
  std::cout << "complete: known fraction " << known / static_cast<double>(h * w) << '\n';
  return {{"known_fraction", known / static_cast<double>(h * w)},
          {"identity_conditioned", !o.image.empty()},
          {"known_region_psnr", psnr_known}};
}

json cmd_eval(const Options& o, Run& run) {
  const auto m = open_model(o);
  const auto& c = run.cfg;
  const Dataset d = open_dataset(o, c);
  run.input("checkpoint", o.checkpoint);
  run.input("dataset", o.dataset);
  const auto idx = holdout(d, c);
  const auto arms = run_ablation(m, eval_targets(d, idx), standard_arms(), c.guidance, c.run.seed);
  io::write_text(run.out / "ablation.csv", ablation_csv(arms));

  std::vector<double> psnr, ssim_v;
  for (int i : idx) {
    const auto& maps = d.samples[i].maps;
    const auto r = map_metrics(m.codec().decode(m.codec().encode(maps)), maps);
    psnr.push_back(r.mean.psnr);
    ssim_v.push_back(r.mean.ssim);
  }
  // how well the identity features tell held-out identities apart
  std::vector<double> same, diff;
  auto cosine = [](const Tensor& a, const Tensor& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::int64_t k = 0; k < a.numel(); ++k) ab += a[k] * b[k], aa += a[k] * a[k], bb += b[k] * b[k];
    return ab / std::sqrt(aa * bb + 1e-300);
  };
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const auto& sa = d.samples[idx[a]];
      const auto& sb = d.samples[idx[b]];
      (sa.identity == sb.identity ? same : diff).push_back(cosine(sa.embedding.V, sb.embedding.V));
    }
  json sep = nullptr;
  if (!same.empty() && !diff.empty()) {
    const auto s = separability(same, diff);
    sep = {{"mean_same", s.mean_same}, {"mean_diff", s.mean_diff}, {"gap", s.gap}};
  }
  for (const auto& a : arms) std::printf("%-12s %.4f +- %.4f\n", a.name.c_str(), a.stats.mean, a.stats.stddev);
  return {{"targets", idx.size()},
          {"ablation", arms},
          {"reconstruction", {{"psnr", summarize(psnr).mean}, {"ssim", summarize(ssim_v).mean}}},
          {"separability", sep}};
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double x = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), x);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size() || x < 0)
      throw ConfigError("--scales expects comma separated non-negative numbers, got '" + text + "'");
    v.push_back(x);
  }
  if (v.empty()) throw ConfigError("--scales is empty");
  return v;
}

json cmd_sweep(const Options& o, Run& run) {
  const auto scales = parse_scales(o.scales);
  const auto m = open_model(o);
  const auto& c = run.cfg;
  const Dataset d = open_dataset(o, c);
  run.input("checkpoint", o.checkpoint);
  run.input("dataset", o.dataset);
  const auto idx = holdout(d, c);
  const auto rows = guidance_scale_sweep(m, eval_targets(d, idx), scales, c.guidance, c.run.seed);
  io::write_text(run.out / "sweep.csv", sweep_csv(rows));
  for (const auto& r : rows) std::printf("s=%-8g %.4f +- %.4f\n", r.scale, r.similarity.mean, r.similarity.stddev);
  return {{"targets", idx.size()}, {"rows", rows}};
}

json cmd_plot(const Options& o, Run& run) {
  if (o.table.empty()) throw ConfigError("a CSV or log file to plot is required");
  if (!fs::is_regular_file(o.table)) throw InputError("table not found: " + o.table);
  run.input("table", o.table);
  const auto t = parse_table(io::read_text(o.table));
  const auto name = fs::path(o.table).stem().string() + ".png";
  io::write_png(run.out / name, plot_table(t));
  return {{"chart", name}, {"rows", t.rows.size()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identity-conditioned avatar generation: shape, reflectance maps and illumination"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 failure, 2 usage or config error, 3 missing or damaged input, 4 numerical failure.\n"
             "AVATAR_THREADS sets the worker thread count.");
  Options o;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--preset", o.preset, "toy or paper")->capture_default_str();
    sc->add_option("--config", o.config, "key = value file applied over the preset");
    sc->add_option("--set", o.sets, "key=value override applied last (repeatable)");
    sc->add_option("--seed", o.seed, "run.seed");
    sc->add_option("--out", o.out, "output directory")->required();
  };
  auto model_flags = [&](CLI::App* sc) {
    sc->add_option("--checkpoint", o.checkpoint, "trained model directory");
    sc->add_option("--steps", o.steps, "guidance.steps");
    sc->add_option("--cfg-scale", o.cfg_scale, "guidance.cfg_scale");
    sc->add_option("--grad-scale", o.grad_scale, "guidance.scale");
  };

  using Handler = json (*)(const Options&, Run&);
  std::vector<std::pair<CLI::App*, Handler>> commands;
  auto add = [&](const char* name, const char* help, Handler h) {
    auto* sc = app.add_subcommand(name, help);
    common(sc);
    commands.emplace_back(sc, h);
    return sc;
  };

  add("make-dataset", "generate the synthetic face dataset", cmd_make_dataset);
  auto* ae = add("train-ae", "train the branched reflectance autoencoder", cmd_train_ae);
  ae->add_option("--dataset", o.dataset, "make-dataset output")->required();
  auto* ldm = add("train-ldm", "train the latent denoiser on top of a train-ae checkpoint", cmd_train_ldm);
  ldm->add_option("--dataset", o.dataset, "make-dataset output")->required();
  ldm->add_option("--checkpoint", o.checkpoint, "train-ae output")->required();
  auto* smp = add("sample", "unconditional avatars", cmd_sample);
  model_flags(smp);
  auto* fit = add("fit", "identity-guided fit to one face image", cmd_fit);
  model_flags(fit);
  fit->add_option("--image", o.image, "RGB PNG at the model render size")->required();
  fit->add_option("--landmarks", o.landmarks, ".npy with 2L observed landmark coordinates");
  auto* cmp = add("complete", "fill the unknown part of partial reflectance maps", cmd_complete);
  model_flags(cmp);
  cmp->add_option("--maps", o.maps, "directory with diffuse/specular/normals PNGs")->required();
  cmp->add_option("--mask", o.mask, "PNG, white where the maps are known")->required();
  cmp->add_option("--image", o.image, "face image for identity conditioning (null condition when absent)");
  auto* ev = add("eval", "ablation, reconstruction and separability on held-out samples", cmd_eval);
  model_flags(ev);
  ev->add_option("--dataset", o.dataset, "make-dataset output")->required();
  auto* sw = add("sweep", "identity similarity against the guidance scale", cmd_sweep);
  model_flags(sw);
  sw->add_option("--dataset", o.dataset, "make-dataset output")->required();
  sw->add_option("--scales", o.scales, "comma separated guidance scales")->capture_default_str();
  auto* pl = add("plot", "PNG chart from a CSV or training log", cmd_plot);
  pl->add_option("table", o.table, "CSV or whitespace separated log")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  for (const auto& [sc, handler] : commands) {
    if (!sc->parsed()) continue;
    try {
      Run run;
      run.command = sc->get_name();
      run.threads = thread_count();
      run.cfg = resolve_config(o);
      run.out = require_out(o);
      const json results = handler(o, run);
      run.finish(results);
      return kOk;
    } catch (const ConfigError& e) {
      std::cerr << "error (config): " << e.what() << '\n';
      return kUsage;
    } catch (const InputError& e) {
      std::cerr << "error (input): " << e.what() << '\n';
      return kInput;
    } catch (const io::FormatError& e) {
      std::cerr << "error (input): " << e.what() << '\n';
      return kInput;
    } catch (const NumericalError& e) {
      std::cerr << "error (numerical): " << e.what() << '\n';
      return kNumerical;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error (usage): " << e.what() << '\n';
      return kUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kFailure;
    }
  }
  return kUsage;
}
