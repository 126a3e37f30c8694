#include "avatar/latent_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avatar {

void LatentLayout::validate() const {
  if (tex_grid.size() != tex_len)
    throw std::invalid_argument("latent layout: tex grid " + std::to_string(tex_grid.h) + "x" +
                                std::to_string(tex_grid.w) + "x" + std::to_string(tex_grid.c) +
                                " does not hold tex_len " + std::to_string(tex_len));
  if (total() == 0) throw std::invalid_argument("latent layout: empty");
}

LatentLayout LatentLayout::paper() {
  return {.tex_len = 4096, .shape_id_len = 158, .shape_expr_len = 25, .ill_len = 9, .tex_grid = {64, 64, 1}};
}

LatentLayout LatentLayout::toy() {
  return {.tex_len = 64, .shape_id_len = 16, .shape_expr_len = 8, .ill_len = 9, .tex_grid = {8, 8, 1}};
}

void to_json(nlohmann::json& j, const LatentLayout& l) {
  j = nlohmann::json{{"tex_len", l.tex_len},
                     {"shape_id_len", l.shape_id_len},
                     {"shape_expr_len", l.shape_expr_len},
                     {"ill_len", l.ill_len},
                     {"tex_grid", {l.tex_grid.h, l.tex_grid.w, l.tex_grid.c}}};
}

void from_json(const nlohmann::json& j, LatentLayout& l) {
  j.at("tex_len").get_to(l.tex_len);
  j.at("shape_id_len").get_to(l.shape_id_len);
  j.at("shape_expr_len").get_to(l.shape_expr_len);
  j.at("ill_len").get_to(l.ill_len);
  const auto& g = j.at("tex_grid");
  l.tex_grid = {g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()};
  l.validate();
}

AvatarLatent::AvatarLatent(LatentLayout layout, std::vector<double> values)
    : layout_(layout), values_(std::move(values)) {
  layout_.validate();
  if (values_.size() != layout_.total())
    throw std::invalid_argument("latent has " + std::to_string(values_.size()) + " values, layout needs " +
                                std::to_string(layout_.total()));
  if (!std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); }))
    throw std::invalid_argument("latent contains non-finite values");
}

AvatarLatent pack(std::span<const double> tex, std::span<const double> shape_id, std::span<const double> shape_expr,
                  std::span<const double> ill, const LatentLayout& layout) {
  layout.validate();
  auto expect = [](std::span<const double> part, std::size_t n, const char* name) {
    if (part.size() != n)
      throw std::invalid_argument(std::string("pack: part '") + name + "' has " + std::to_string(part.size()) +
                                  " entries, layout expects " + std::to_string(n));
  };
  expect(tex, layout.tex_len, "z_tex");
  expect(shape_id, layout.shape_id_len, "z_shp_i");
  expect(shape_expr, layout.shape_expr_len, "z_shp_e");
  expect(ill, layout.ill_len, "z_ill");
  std::vector<double> v;
  v.reserve(layout.total());
  v.insert(v.end(), tex.begin(), tex.end());
  v.insert(v.end(), shape_id.begin(), shape_id.end());
  v.insert(v.end(), shape_expr.begin(), shape_expr.end());
  v.insert(v.end(), ill.begin(), ill.end());
  return AvatarLatent(layout, std::move(v));
}

LatentParts unpack(const AvatarLatent& z) {
  auto vec = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };
  return {vec(z.tex()), vec(z.shape_id()), vec(z.shape_expr()), vec(z.ill())};
}

}  // namespace avatar
