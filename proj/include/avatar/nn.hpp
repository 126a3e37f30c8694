#pragma once

// Parameter containers, the handful of layer types the models are built
// from, and the Adam optimizer.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "avatar/autodiff.hpp"

namespace avatar::nn {

using Rng = std::mt19937_64;

Tensor randn(Shape shape, double stddev, Rng& rng);

class ParamSet {
 public:
  ad::Var add(const std::string& name, Tensor init);
  ad::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, ad::Var>>& items() const { return items_; }
  std::int64_t scalar_count() const;

  void zero_grad();
  void set_trainable(bool on);
  /// Order-sensitive FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

  /// Copies values from `other` by name; shapes must agree and every name must exist.
  void assign_from(const std::vector<std::pair<std::string, Tensor>>& values);
  std::vector<std::pair<std::string, Tensor>> values() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
         double gain = 1.0, bool bias = true);
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight_, bias_, stride_, pad_); }
  int out_channels() const { return cout_; }

 private:
  ad::Var weight_, bias_;
  int stride_ = 1, pad_ = 0, cout_ = 0;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
         double gain = 1.0, bool bias = true);
  ad::Var operator()(const ad::Var& x) const { return ad::conv1d(x, weight_, bias_, stride_, pad_); }
  const ad::Var& weight() const { return weight_; }
  const ad::Var& bias() const { return bias_; }

 private:
  ad::Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

/// y[N,out] = x[N,in] W + b
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double gain = 1.0, bool bias = true);
  ad::Var operator()(const ad::Var& x) const;

 private:
  ad::Var weight_, bias_;
};

/// Group normalization with a per-channel affine; input [N,C,...].
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamSet& ps, const std::string& name, int channels, int groups, double eps = 1e-6);
  ad::Var operator()(const ad::Var& x) const;

 private:
  ad::Var gamma_, beta_;
  int channels_ = 0, groups_ = 1;
  double eps_ = 1e-6;
};

/// Multi-head self-attention over [N,C,L] (2-D maps are flattened by the
/// caller), with pre-normalization and a residual connection.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamSet& ps, const std::string& name, int channels, int heads, int head_channels, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;

 private:
  GroupNorm norm_;
  Conv1d qkv_, proj_;
  int heads_ = 1, head_channels_ = 0;
};

/// Largest divisor of `channels` that is at most `cap`.
int group_count(int channels, int cap = 8);

/// Scales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(ParamSet& ps, double max_norm);

class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };
  Adam(ParamSet& ps, Options opt);
  void step();
  std::int64_t steps() const { return t_; }
  Options& options() { return opt_; }

 private:
  ParamSet* ps_;
  Options opt_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace avatar::nn
