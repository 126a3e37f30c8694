#pragma once
// Reconstruction metrics (MSE/PSNR/SSIM), identity similarity statistics and
// the drivers for the conditioning ablation and the guidance-scale sweep.
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/sampling.hpp"

namespace avatar {

struct MapMetric {
  double mse = 0.0;
  double psnr = 0.0;  // +inf when mse == 0
  double ssim = 0.0;
};

struct MetricReport {
  MapMetric diffuse, specular, normals, mean;
  std::optional<double> identity;  // cosine similarity when images were compared
};

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(1 / mse) for data in [0,1].
double psnr(const Tensor& a, const Tensor& b);
/// Mean SSIM over channels of [C,H,W] (or [H,W]) data with range 1: 11-tap
/// Gaussian window, sigma 1.5, K1 0.01, K2 0.03, valid windows only.
double ssim(const Tensor& a, const Tensor& b);

MetricReport map_metrics(const ReflectanceTriplet& pred, const ReflectanceTriplet& gt);

struct Stats {
  double mean = 0.0, stddev = 0.0;
};
Stats summarize(const std::vector<double>& v);

/// cos(embed(image).V, embed(target).V)
double identity_similarity(const IdentityEncoder& enc, const Tensor& image, const Tensor& target);
std::vector<double> identity_preservation(const IdentityEncoder& enc, const std::vector<Tensor>& renders,
                                          const std::vector<Tensor>& targets);

struct Separability {
  double mean_same = 0.0, mean_diff = 0.0, gap = 0.0;
};
Separability separability(const std::vector<double>& same, const std::vector<double>& diff);

/// A target for the fitting experiments.
struct EvalTarget {
  Tensor image;
  std::optional<Tensor> landmarks;
};

struct AblationArm {
  std::string name;
  double cfg_scale = 1.0;
  bool guided = false;
};

/// Label Only, CFG (w=2), CFG (w=9), Guidance.
std::vector<AblationArm> standard_arms();

struct ArmResult {
  std::string name;
  std::vector<double> similarity;  // one per target
  Stats stats;
};

/// Every arm samples from the target's identity embedding with the same seed
/// per target; the result is rendered under the pose estimated from the target.
std::vector<ArmResult> run_ablation(const AvatarModel& m, const std::vector<EvalTarget>& targets,
                                    const std::vector<AblationArm>& arms, const GuidanceConfig& base,
                                    std::uint64_t seed);

struct SweepRow {
  double scale = 0.0;
  Stats similarity;
};

std::vector<SweepRow> guidance_scale_sweep(const AvatarModel& m, const std::vector<EvalTarget>& targets,
                                           const std::vector<double>& scales, const GuidanceConfig& base,
                                           std::uint64_t seed);

void to_json(nlohmann::json& j, const MapMetric& m);
void to_json(nlohmann::json& j, const MetricReport& r);
void to_json(nlohmann::json& j, const ArmResult& r);
void to_json(nlohmann::json& j, const SweepRow& r);

/// CSV with a header row; the first column is the x value.
std::string ablation_csv(const std::vector<ArmResult>& arms);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace avatar
