#include "avatar/model.hpp"

#include <stdexcept>

#include "avatar/io.hpp"

namespace avatar {

namespace fs = std::filesystem;

namespace {

constexpr int kModelVersion = 1;

ad::Var channels(const ad::Var& maps, int first) {
  const std::int64_t r = maps.dim(2);
  return ad::reshape(ad::slice(maps, 1, first, 3), {3, r, r});
}

}  // namespace

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  c.T = j.at("T");
  c.beta_start = j.at("beta_start");
  c.beta_end = j.at("beta_end");
}

void ModelConfig::validate() const {
  layout.validate();
  codec.validate();
  denoiser.validate();
  const auto side = static_cast<std::size_t>(codec.latent_side());
  if (layout.tex_grid != GridShape{side, side, static_cast<std::size_t>(codec.latent_channels)})
    throw std::invalid_argument("model: texture latent grid does not match the codec");
  if (render_size != encoder.input_size)
    throw std::invalid_argument("model: render size must equal the identity encoder input size");
  if (denoiser.cond_side != encoder.grid(4))
    throw std::invalid_argument("model: conditioning side must equal the C4 grid side");
  if (layout.ill_len != 9) throw std::invalid_argument("model: illumination slice must hold 9 values");
}

ShapeBasis ModelConfig::build_basis() const {
  return build_synthetic_basis(basis_vertices, static_cast<int>(layout.shape_id_len),
                               static_cast<int>(layout.shape_expr_len), basis_seed, landmarks);
}

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.layout = LatentLayout::paper();
  c.codec = CodecConfig::paper();
  c.encoder = IdentityEncoderConfig::paper();
  c.denoiser = DenoiserConfig::paper();
  c.basis_vertices = 64 * 64;
  c.render_size = 112;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"preset", c.preset},
       {"layout", c.layout},
       {"codec", c.codec},
       {"encoder", c.encoder},
       {"denoiser", c.denoiser},
       {"schedule", c.schedule},
       {"basis_vertices", c.basis_vertices},
       {"landmarks", c.landmarks},
       {"basis_seed", c.basis_seed},
       {"condition_seed", c.condition_seed},
       {"render_size", c.render_size}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.preset = j.at("preset");
  c.layout = j.at("layout").get<LatentLayout>();
  c.codec = j.at("codec").get<CodecConfig>();
  c.encoder = j.at("encoder").get<IdentityEncoderConfig>();
  c.denoiser = j.at("denoiser").get<DenoiserConfig>();
  c.schedule = j.at("schedule").get<ScheduleConfig>();
  c.basis_vertices = j.at("basis_vertices");
  c.landmarks = j.at("landmarks");
  c.basis_seed = j.at("basis_seed");
  c.condition_seed = j.at("condition_seed");
  c.render_size = j.at("render_size");
}

AvatarModel::AvatarModel(ModelConfig cfg, TextureCodec codec, IdentityEncoder encoder, ShapeBasis basis)
    : cfg_(std::move(cfg)),
      codec_(TextureCodec::from_archive(codec.to_archive())),  // copies share parameter nodes; freeze our own
      encoder_(std::move(encoder)),
      basis_(std::move(basis)),
      denoiser_(cfg_.denoiser, static_cast<int>(cfg_.layout.total())),
      schedule_(cfg_.schedule.build()),
      conditions_(cfg_.encoder, cfg_.denoiser.cond_dim, cfg_.denoiser.cond_side, cfg_.condition_seed) {
  cfg_.validate();
  if (basis_.n_id() != static_cast<int>(cfg_.layout.shape_id_len) ||
      basis_.n_expr() != static_cast<int>(cfg_.layout.shape_expr_len))
    throw std::invalid_argument("model: basis does not match the latent layout");
  codec_.params().set_trainable(false);
}

ConditionTensor AvatarModel::null_condition() const {
  return ConditionTensor::null(cfg_.denoiser.cond_dim, cfg_.denoiser.cond_side);
}

AvatarLatent AvatarModel::encode_avatar(const ReflectanceTriplet& maps, std::span<const double> shape_id,
                                        std::span<const double> shape_expr, std::span<const double> ill) const {
  const Tensor tex = codec_.encode(maps);
  return pack(tex.span(), shape_id, shape_expr, ill, cfg_.layout);
}

DecodedVars AvatarModel::decode(const ad::Var& z0) const {
  const auto& l = cfg_.layout;
  if (z0.numel() != static_cast<std::int64_t>(l.total()))
    throw std::invalid_argument("model: latent has " + std::to_string(z0.numel()) + " entries, layout needs " +
                                std::to_string(l.total()));
  auto flat = ad::reshape(z0, {z0.numel()});
  auto tex = ad::reshape(ad::slice(flat, 0, 0, static_cast<std::int64_t>(l.tex_len)),
                         {1, static_cast<std::int64_t>(l.tex_grid.c), static_cast<std::int64_t>(l.tex_grid.h),
                          static_cast<std::int64_t>(l.tex_grid.w)});
  auto maps = codec_.decode(tex);
  DecodedVars d;
  d.diffuse = channels(maps, 0);
  d.specular = channels(maps, 3);
  d.normals = channels(maps, 6);
  d.shape_id = ad::slice(flat, 0, static_cast<std::int64_t>(l.shape_id_offset()), static_cast<std::int64_t>(l.shape_id_len));
  d.shape_expr =
      ad::slice(flat, 0, static_cast<std::int64_t>(l.shape_expr_offset()), static_cast<std::int64_t>(l.shape_expr_len));
  d.ill = ad::slice(flat, 0, static_cast<std::int64_t>(l.ill_offset()), static_cast<std::int64_t>(l.ill_len));
  return d;
}

Raster AvatarModel::raster_for(const DecodedVars& d, const Pose& pose) const {
  const Mesh mesh = decode_shape(d.shape_id.value().span(), d.shape_expr.value().span(), basis_);
  return rasterize(mesh, pose, cfg_.render_size);
}

ad::Var AvatarModel::render(const DecodedVars& d, const Pose& pose, bool* degenerate) const {
  const Raster raster = raster_for(d, pose);
  if (degenerate) *degenerate = raster.covered() == 0;
  return render(d, raster);
}

ad::Var AvatarModel::render(const DecodedVars& d, const Raster& raster) const {
  return shade(raster, d.diffuse, d.specular, d.normals, d.ill);
}

ad::Var AvatarModel::landmarks(const DecodedVars& d, const Pose& pose) const {
  return project_landmarks(decode_vertices(d.shape_id, d.shape_expr, basis_, true), pose);
}

Avatar AvatarModel::decode(const AvatarLatent& z) const {
  if (!(z.layout() == cfg_.layout)) throw std::invalid_argument("model: latent layout differs from the model's");
  const auto& g = cfg_.layout.tex_grid;
  Tensor grid({static_cast<std::int64_t>(g.c), static_cast<std::int64_t>(g.h), static_cast<std::int64_t>(g.w)});
  std::copy(z.tex().begin(), z.tex().end(), grid.data());
  return {codec_.decode(grid), decode_shape(z.shape_id(), z.shape_expr(), basis_), Illumination::from_vector(z.ill())};
}

Tensor AvatarModel::render(const AvatarLatent& z, const Pose& pose) const {
  const Avatar a = decode(z);
  return avatar::render(a.mesh, a.maps, a.ill, pose, cfg_.render_size).image;
}

void AvatarModel::save(const fs::path& dir) const {
  fs::create_directories(dir);
  io::save_archive(dir / "codec.avtr", codec_.to_archive());
  io::save_archive(dir / "encoder.avtr", encoder_.to_archive());
  io::save_archive(dir / "basis.avtr", basis_to_archive(basis_));
  io::save_archive(dir / "denoiser.avtr", denoiser_.to_archive());
  io::write_text(dir / "model.json",
                 nlohmann::json{{"format", "avatar-model"}, {"version", kModelVersion}, {"config", cfg_}}.dump(2));
}

AvatarModel AvatarModel::load(const fs::path& dir) {
  for (const char* f : {"model.json", "codec.avtr", "encoder.avtr", "basis.avtr", "denoiser.avtr"})
    if (!fs::exists(dir / f)) throw io::FormatError("model: missing " + (dir / f).string());
  const auto meta = nlohmann::json::parse(io::read_text(dir / "model.json"));
  if (meta.value("version", -1) != kModelVersion) throw io::FormatError("model: unsupported model.json version");
  AvatarModel m(meta.at("config").get<ModelConfig>(), TextureCodec::from_archive(io::load_archive(dir / "codec.avtr")),
                IdentityEncoder::from_archive(io::load_archive(dir / "encoder.avtr")),
                basis_from_archive(io::load_archive(dir / "basis.avtr")));
  m.denoiser_ = Denoiser::from_archive(io::load_archive(dir / "denoiser.avtr"));
  return m;
}

Tensor observed_landmarks(const Mesh& mesh, const ShapeBasis& basis, const Pose& pose) {
  const Eigen::MatrixX2d p = project_landmarks(landmarks3d(mesh, basis), pose);
  Tensor out({p.rows() * 2});
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    out[2 * k] = p(k, 0);
    out[2 * k + 1] = p(k, 1);
  }
  return out;
}

}  // namespace avatar
