#include "avatar/run_config.hpp"

#include <charconv>
#include <sstream>

namespace avatar {

namespace {

using nlohmann::json;

json settings_json(const RunSettings& r) {
  return {{"seed", r.seed},
          {"ae_steps", r.ae_steps},
          {"ldm_steps", r.ldm_steps},
          {"ldm_epochs", r.ldm_epochs},
          {"log_every", r.log_every},
          {"samples", r.samples},
          {"eval_targets", r.eval_targets},
          {"holdout_fraction", r.holdout_fraction}};
}

RunSettings settings_from(const json& j) {
  RunSettings r;
  r.seed = j.at("seed");
  r.ae_steps = j.at("ae_steps");
  r.ldm_steps = j.at("ldm_steps");
  r.ldm_epochs = j.at("ldm_epochs");
  r.log_every = j.at("log_every");
  r.samples = j.at("samples");
  r.eval_targets = j.at("eval_targets");
  r.holdout_fraction = j.at("holdout_fraction");
  return r;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

void flatten_into(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten_into(*it, key, out);
    } else if (it->is_array()) {
      std::string s;
      for (std::size_t i = 0; i < it->size(); ++i) s += (i ? "," : "") + scalar_text((*it)[i]);
      out[key] = s;
    } else {
      out[key] = scalar_text(*it);
    }
  }
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* b = text.data();
  const auto* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || text.empty())
    throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
  return v;
}

json parse_like(const std::string& key, const json& like, const std::string& text) {
  if (like.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + text + "'");
  }
  if (like.is_number_unsigned()) return parse_number<std::uint64_t>(key, text);
  if (like.is_number_integer()) return parse_number<std::int64_t>(key, text);
  if (like.is_number_float()) return parse_number<double>(key, text);
  if (like.is_string()) return text;
  throw ConfigError("config: '" + key + "' cannot be set from text");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

RunConfig RunConfig::toy() {
  RunConfig c;
  c.dataset = DatasetConfig::toy();
  c.guidance = GuidanceConfig::toy();
  c.ldm = LdmTrainConfig::toy();
  c.ae.batch_size = 4;
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.preset = "paper";
  c.model = ModelConfig::paper();
  c.dataset = DatasetConfig::paper();
  c.ldm = LdmTrainConfig::paper();
  c.guidance = GuidanceConfig::paper();
  c.run.ldm_epochs = 800;
  c.run.ae_steps = 20000;
  return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw ConfigError("config: unknown preset '" + name + "' (expected toy or paper)");
}

json RunConfig::to_json() const {
  return {{"preset", preset}, {"model", model},       {"dataset", dataset}, {"ae", ae},
          {"ldm", ldm},       {"guidance", guidance}, {"run", settings_json(run)}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.preset = j.at("preset");
    c.model = j.at("model").get<ModelConfig>();
    c.dataset = j.at("dataset").get<DatasetConfig>();
    c.ae = j.at("ae").get<AeTrainConfig>();
    c.ldm = j.at("ldm").get<LdmTrainConfig>();
    c.guidance = j.at("guidance").get<GuidanceConfig>();
    c.run = settings_from(j.at("run"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

std::map<std::string, std::string> RunConfig::flatten() const {
  std::map<std::string, std::string> out;
  auto j = to_json();
  j.erase("preset");
  flatten_into(j, "", out);
  return out;
}

void RunConfig::apply(const std::map<std::string, std::string>& overrides) {
  json j = to_json();
  for (const auto& [key, text] : overrides) {
    std::string ptr = "/" + key;
    for (auto& ch : ptr)
      if (ch == '.') ch = '/';
    const json::json_pointer p(ptr);
    if (key == "preset") throw ConfigError("config: the preset is chosen with --preset, not as a key");
    if (key.empty() || !j.contains(p)) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = j[p];
    if (slot.is_object()) throw ConfigError("config: '" + key + "' names a group, not a value");
    if (slot.is_array()) {
      json arr = json::array();
      const json like = slot.empty() ? json(0.0) : slot[0];
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) arr.push_back(parse_like(key, like, trim(item)));
      slot = arr;
    } else {
      slot = parse_like(key, slot, text);
    }
  }
  RunConfig next = from_json(j);
  try {
    next.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  *this = std::move(next);
}

void RunConfig::validate() const {
  model.validate();
  guidance.validate();
  if (dataset.render_size != model.render_size)
    throw ConfigError("config: dataset.render_size must equal model.render_size");
  if (dataset.map_resolution != model.codec.resolution)
    throw ConfigError("config: dataset.map_resolution must equal model.codec.resolution");
  if (ae.batch_size < 1 || ldm.batch_size < 1) throw ConfigError("config: batch sizes must be positive");
  if (run.ae_steps < 0 || run.ldm_steps < 0 || run.ldm_epochs < 0) throw ConfigError("config: step counts must be >= 0");
  if (!(run.holdout_fraction > 0.0 && run.holdout_fraction < 1.0))
    throw ConfigError("config: run.holdout_fraction must lie in (0,1)");
  if (run.samples < 1) throw ConfigError("config: run.samples must be positive");
  if (run.eval_targets < 0) throw ConfigError("config: run.eval_targets must be >= 0");
}

int RunConfig::ldm_step_count(int n_train) const {
  if (run.ldm_epochs <= 0) return run.ldm_steps;
  const int per_epoch = (n_train + ldm.batch_size - 1) / ldm.batch_size;
  return run.ldm_epochs * std::max(per_epoch, 1);
}

std::map<std::string, std::string> parse_overrides(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(n) + " has no '='");
    const std::string key = trim(line.substr(0, eq));
    if (out.count(key)) throw ConfigError("config: key '" + key + "' is set twice");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace avatar
