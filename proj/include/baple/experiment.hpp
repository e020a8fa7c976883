#pragma once

#include <cstdlib>
#include <set>
#include <json.hpp>

#include "baple/eval.hpp"
#include "baple/finetune.hpp"

namespace baple {

using Json = nlohmann::json;

enum class AttackMode { baple, badnets_pl, wanet_pl, fiba_pl, badnets_ft, wanet_ft, fiba_ft, clean_pl, clean_ft };

inline constexpr std::array<std::string_view, 9> kModeNames = {"baple",    "badnets_pl", "wanet_pl", "fiba_pl", "badnets_ft",
                                                              "wanet_ft", "fiba_ft",    "clean_pl", "clean_ft"};

inline std::string_view mode_name(AttackMode m) { return kModeNames[static_cast<std::size_t>(m)]; }

inline AttackMode parse_mode(std::string_view s) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i)
    if (kModeNames[i] == s) return static_cast<AttackMode>(i);
  throw ConfigError("attack.mode", "unknown mode '" + std::string(s) + "'");
}

inline bool is_finetune(AttackMode m) {
  return m == AttackMode::badnets_ft || m == AttackMode::wanet_ft || m == AttackMode::fiba_ft || m == AttackMode::clean_ft;
}
inline bool is_clean(AttackMode m) { return m == AttackMode::clean_pl || m == AttackMode::clean_ft; }

// Display name used in comparison tables, e.g. "BadNets_PL".
inline std::string method_label(AttackMode m) {
  switch (m) {
    case AttackMode::baple: return "BAPLe";
    case AttackMode::badnets_pl: return "BadNets_PL";
    case AttackMode::wanet_pl: return "WaNet_PL";
    case AttackMode::fiba_pl: return "FIBA_PL";
    case AttackMode::badnets_ft: return "BadNets_FT";
    case AttackMode::wanet_ft: return "WaNet_FT";
    case AttackMode::fiba_ft: return "FIBA_FT";
    case AttackMode::clean_pl: return "Clean_PL";
    case AttackMode::clean_ft: return "Clean_FT";
  }
  return "?";
}

inline int table_rank(AttackMode m) {
  static constexpr std::array<int, 9> rank = {8, 5, 6, 7, 1, 2, 3, 4, 0};
  return rank[static_cast<std::size_t>(m)];
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: $BAPLE_OUT_ROOT or ./out

  DatasetSpec data;
  int shots = 32;

  EncoderConfig encoder;
  PretrainConfig pretrain;
  std::string encoder_checkpoint;

  double poison_ratio = 0.05;
  LabelId target = 0;

  std::string patch_kind = "symbol";  // symbol | noise | file
  std::string patch_file;
  int patch_size = 24;
  std::string patch_location = "bottom-left";
  double epsilon_255 = 8.0;
  bool use_patch = true;
  bool use_noise = true;
  int badnets_size = 24;
  std::string badnets_location = "bottom-left";
  int wanet_grid = 4;
  double wanet_strength = 0.5;
  double fiba_blend = 0.15;
  double fiba_radius = 0.1;

  AttackMode mode = AttackMode::baple;
  AttackConfig attack;  // seed, epsilon, patch and use_noise are filled in from the sections above
  FinetuneConfig finetune;

  bool exclude_true_target = false;
  bool export_features = true;
  int export_limit = 600;

  std::string ablation_axis = "epsilon";
  Json ablation_values = Json::array({0, 8, 32});
  std::vector<std::uint64_t> repeat_seeds{0, 1, 2};

  double epsilon() const { return epsilon_255 / 255.0; }
};

namespace detail {

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"num_classes", c.data.num_classes}, {"height", c.data.height},
               {"width", c.data.width},             {"channels", c.data.channels},
               {"samples_per_class", c.data.samples_per_class}, {"test_per_class", c.data.test_per_class},
               {"seed", c.data.seed},               {"noise_level", c.data.noise_level},
               {"shots", c.shots}};
  j["model"] = {{"feature_dim", c.encoder.feature_dim},
                {"embed_dim", c.encoder.embed_dim},
                {"image_hidden", c.encoder.image_hidden},
                {"text_token_hidden", c.encoder.text_token_hidden},
                {"text_hidden", c.encoder.text_hidden},
                {"logit_scale", c.encoder.logit_scale},
                {"checkpoint", c.encoder_checkpoint},
                {"pretrain",
                 {{"templates", c.pretrain.templates},
                  {"epochs", c.pretrain.epochs},
                  {"batch_size", c.pretrain.batch_size},
                  {"learning_rate", c.pretrain.learning_rate},
                  {"seed", c.pretrain.seed}}}};
  j["poison"] = {{"ratio", c.poison_ratio}, {"target", c.target}};
  j["trigger"] = {{"patch",
                   {{"kind", c.patch_kind},
                    {"file", c.patch_file},
                    {"size", c.patch_size},
                    {"location", c.patch_location},
                    {"enabled", c.use_patch}}},
                  {"epsilon_255", c.epsilon_255},
                  {"noise_enabled", c.use_noise},
                  {"badnets", {{"size", c.badnets_size}, {"location", c.badnets_location}}},
                  {"wanet", {{"grid", c.wanet_grid}, {"strength", c.wanet_strength}}},
                  {"fiba", {{"blend", c.fiba_blend}, {"radius", c.fiba_radius}}}};
  const auto& a = c.attack;
  j["attack"] = {{"mode", std::string(mode_name(c.mode))},
                 {"lambda_clean", a.lambda_clean},
                 {"lambda_poison", a.lambda_poison},
                 {"prompt_lr", a.prompt_lr},
                 {"noise_lr", a.noise_lr},
                 {"epochs", a.epochs},
                 {"batch_size", a.batch_size},
                 {"prompt_length", a.prompt_length},
                 {"prompt_init_std", a.prompt_init_std},
                 {"keep_template", a.keep_template},
                 {"optimizer", std::string(nn::optimizer_name(a.optimizer))}};
  const auto& f = c.finetune;
  j["finetune"] = {{"learning_rate", f.learning_rate}, {"epochs", f.epochs},
                   {"batch_size", f.batch_size},       {"lambda_clean", f.lambda_clean},
                   {"lambda_poison", f.lambda_poison}, {"optimizer", std::string(nn::optimizer_name(f.optimizer))},
                   {"template", f.template_pattern}};
  j["eval"] = {{"exclude_true_target", c.exclude_true_target},
               {"export_features", c.export_features},
               {"export_limit", c.export_limit}};
  j["ablation"] = {{"axis", c.ablation_axis}, {"values", c.ablation_values}, {"seeds", c.repeat_seeds}};
  return j;
}

inline std::string kind_of(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Overlays `user` onto `base`; every key in `user` must already exist in `base` with a compatible type.
inline void merge_strict(Json& base, const Json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(p, "unknown key");
    Json& slot = base[it.key()];
    const Json& v = it.value();
    if (slot.is_object()) {
      merge_strict(slot, v, p);
      continue;
    }
    const bool ok = (slot.is_boolean() && v.is_boolean()) || (slot.is_number_integer() && v.is_number_integer()) ||
                    (slot.is_number_float() && v.is_number()) || (slot.is_string() && v.is_string()) ||
                    (slot.is_array() && v.is_array());
    if (!ok) throw ConfigError(p, "expected " + kind_of(slot) + ", got " + kind_of(v));
    if (slot.is_number_float()) slot = v.get<double>();
    else slot = v;
  }
}

template <class T>
T get_at(const Json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  c.seed = get_at<std::uint64_t>(j["seed"], "seed");
  c.output_dir = j["output_dir"];
  const Json& d = j["data"];
  c.data.num_classes = d["num_classes"];
  c.data.height = d["height"];
  c.data.width = d["width"];
  c.data.channels = d["channels"];
  c.data.samples_per_class = d["samples_per_class"];
  c.data.test_per_class = d["test_per_class"];
  c.data.seed = get_at<std::uint64_t>(d["seed"], "data.seed");
  c.data.noise_level = d["noise_level"];
  c.shots = d["shots"];
  const Json& m = j["model"];
  c.encoder.image_height = c.data.height;
  c.encoder.image_width = c.data.width;
  c.encoder.image_channels = c.data.channels;
  c.encoder.feature_dim = m["feature_dim"];
  c.encoder.embed_dim = m["embed_dim"];
  c.encoder.image_hidden = get_at<std::vector<int>>(m["image_hidden"], "model.image_hidden");
  c.encoder.text_token_hidden = m["text_token_hidden"];
  c.encoder.text_hidden = get_at<std::vector<int>>(m["text_hidden"], "model.text_hidden");
  c.encoder.logit_scale = m["logit_scale"];
  c.encoder_checkpoint = m["checkpoint"];
  const Json& p = m["pretrain"];
  c.pretrain.templates = get_at<std::vector<std::string>>(p["templates"], "model.pretrain.templates");
  c.pretrain.epochs = p["epochs"];
  c.pretrain.batch_size = p["batch_size"];
  c.pretrain.learning_rate = p["learning_rate"];
  c.pretrain.seed = get_at<std::uint64_t>(p["seed"], "model.pretrain.seed");
  c.poison_ratio = j["poison"]["ratio"];
  c.target = j["poison"]["target"];
  const Json& t = j["trigger"];
  c.patch_kind = t["patch"]["kind"];
  c.patch_file = t["patch"]["file"];
  c.patch_size = t["patch"]["size"];
  c.patch_location = t["patch"]["location"];
  c.use_patch = t["patch"]["enabled"];
  c.epsilon_255 = t["epsilon_255"];
  c.use_noise = t["noise_enabled"];
  c.badnets_size = t["badnets"]["size"];
  c.badnets_location = t["badnets"]["location"];
  c.wanet_grid = t["wanet"]["grid"];
  c.wanet_strength = t["wanet"]["strength"];
  c.fiba_blend = t["fiba"]["blend"];
  c.fiba_radius = t["fiba"]["radius"];
  const Json& a = j["attack"];
  c.mode = parse_mode(a["mode"].get<std::string>());
  c.attack.lambda_clean = a["lambda_clean"];
  c.attack.lambda_poison = a["lambda_poison"];
  c.attack.prompt_lr = a["prompt_lr"];
  c.attack.noise_lr = a["noise_lr"];
  c.attack.epochs = a["epochs"];
  c.attack.batch_size = a["batch_size"];
  c.attack.prompt_length = a["prompt_length"];
  c.attack.prompt_init_std = a["prompt_init_std"];
  c.attack.keep_template = a["keep_template"];
  try {
    c.attack.optimizer = nn::parse_optimizer(a["optimizer"]);
  } catch (const Error& e) {
    throw ConfigError("attack.optimizer", e.what());
  }
  const Json& f = j["finetune"];
  c.finetune.learning_rate = f["learning_rate"];
  c.finetune.epochs = f["epochs"];
  c.finetune.batch_size = f["batch_size"];
  c.finetune.lambda_clean = f["lambda_clean"];
  c.finetune.lambda_poison = f["lambda_poison"];
  try {
    c.finetune.optimizer = nn::parse_optimizer(f["optimizer"]);
  } catch (const Error& e) {
    throw ConfigError("finetune.optimizer", e.what());
  }
  c.finetune.template_pattern = f["template"];
  const Json& e = j["eval"];
  c.exclude_true_target = e["exclude_true_target"];
  c.export_features = e["export_features"];
  c.export_limit = e["export_limit"];
  c.ablation_axis = j["ablation"]["axis"];
  c.ablation_values = j["ablation"]["values"];
  c.repeat_seeds = get_at<std::vector<std::uint64_t>>(j["ablation"]["seeds"], "ablation.seeds");
  return c;
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) { return detail::config_to_json(c); }

inline void validate(const ExperimentConfig& c) {
  c.data.validate();
  c.encoder.validate();
  if (c.shots < 1) throw ConfigError("data.shots", "must be >= 1");
  if (c.shots > c.data.samples_per_class)
    throw ConfigError("data.shots", "exceeds data.samples_per_class (" + std::to_string(c.data.samples_per_class) + ")");
  if (!(c.poison_ratio >= 0 && c.poison_ratio <= 1)) throw ConfigError("poison.ratio", "must lie in [0,1]");
  if (c.target < 0 || c.target >= c.data.num_classes) throw ConfigError("poison.target", "outside [0, num_classes)");
  if (c.patch_kind != "symbol" && c.patch_kind != "noise" && c.patch_kind != "file")
    throw ConfigError("trigger.patch.kind", "must be symbol, noise or file");
  if (c.patch_kind == "file" && c.patch_file.empty()) throw ConfigError("trigger.patch.file", "required for kind=file");
  if (c.patch_size < 1 || c.patch_size > std::min(c.data.height, c.data.width))
    throw ConfigError("trigger.patch.size", "must lie in [1, min(height, width)]");
  if (c.badnets_size < 1 || c.badnets_size > std::min(c.data.height, c.data.width))
    throw ConfigError("trigger.badnets.size", "must lie in [1, min(height, width)]");
  (void)parse_anchor(c.patch_location);
  try {
    (void)parse_anchor(c.badnets_location);
  } catch (const ConfigError&) {
    throw ConfigError("trigger.badnets.location", "unknown anchor '" + c.badnets_location + "'");
  }
  if (!(c.epsilon_255 >= 0)) throw ConfigError("trigger.epsilon_255", "must be >= 0");
  if (c.wanet_grid < 2) throw ConfigError("trigger.wanet.grid", "must be >= 2");
  if (!(c.wanet_strength >= 0)) throw ConfigError("trigger.wanet.strength", "must be >= 0");
  if (!(c.fiba_blend >= 0 && c.fiba_blend <= 1)) throw ConfigError("trigger.fiba.blend", "must lie in [0,1]");
  if (!(c.fiba_radius > 0 && c.fiba_radius <= 0.5)) throw ConfigError("trigger.fiba.radius", "must lie in (0, 0.5]");
  c.attack.validate();
  c.finetune.validate();
  if (c.export_limit < 0) throw ConfigError("eval.export_limit", "must be >= 0");
  if (c.repeat_seeds.empty()) throw ConfigError("ablation.seeds", "at least one seed required");
}

inline ExperimentConfig config_from_json(const Json& user) {
  Json merged = to_json(ExperimentConfig{});
  detail::merge_strict(merged, user, "");
  ExperimentConfig c;
  try {
    c = detail::config_from_json(merged);
  } catch (const Json::exception& e) {
    throw ConfigError("<config>", e.what());
  }
  validate(c);
  return c;
}

inline Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(where, std::string("invalid JSON: ") + e.what());
  }
}

// Applies "a.b.c=value" overrides; values parse as JSON and fall back to plain strings.
inline void apply_override(Json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }
  Json* node = &user;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty path segment");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = Json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json user = Json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("<config>", "cannot open config file '" + file.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    user = parse_json_text(ss.str(), file.string());
  }
  for (const auto& o : overrides) apply_override(user, o);
  return config_from_json(user);
}

inline std::string effective_config_text(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

// Identifies the experiment; the output location and repeat-seed list do not participate.
inline std::string config_fingerprint(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  j["ablation"].erase("seeds");
  return fingerprint_of(j.dump());
}

inline Json* json_at(Json& j, const std::string& dotted) {
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

// Fingerprint with the given dotted fields and the seed removed; equal across an ablation grid.
inline std::string base_fingerprint(const ExperimentConfig& c, const std::vector<std::string>& varying) {
  Json j = to_json(c);
  j.erase("output_dir");
  j.erase("seed");
  j.erase("ablation");
  for (const auto& path : varying)
    if (Json* node = json_at(j, path)) *node = nullptr;
  return fingerprint_of(j.dump());
}

inline std::string dataset_fingerprint(const ExperimentConfig& c) { return c.data.fingerprint(); }

inline std::filesystem::path output_root(const ExperimentConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("BAPLE_OUT_ROOT"); env && *env) return env;
  return "out";
}

// ---------------------------------------------------------------------------
// Workspace: dataset splits plus the frozen pretrained encoder.

struct Workspace {
  Dataset train;
  Dataset test;
  DualEncoder encoder;
  std::string key;
};

inline std::string workspace_key(const ExperimentConfig& c) {
  Json j = to_json(c);
  return fingerprint_of(j["data"].dump() + j["model"].dump());
}

inline Workspace build_workspace(const ExperimentConfig& c) {
  Workspace w;
  w.train = generate_synthetic_dataset(c.data, Split::train);
  w.test = generate_synthetic_dataset(c.data, Split::test);
  if (!c.encoder_checkpoint.empty()) {
    w.encoder = load_artifact<DualEncoder>(c.encoder_checkpoint);
    if (w.encoder.class_names != w.train.class_names)
      throw FormatError("encoder checkpoint class names do not match the dataset");
    check_image_shape(w.encoder.config, w.train.images.front());
  } else {
    w.encoder = pretrain_contrastive(w.train, &w.test, c.encoder, c.pretrain);
  }
  w.encoder.frozen = true;
  w.key = workspace_key(c);
  return w;
}

// ---------------------------------------------------------------------------
// Trigger construction

inline PatchSpec configured_patch(const ExperimentConfig& c) {
  PatchSpec p;
  p.anchor = parse_anchor(c.patch_location);
  if (c.patch_kind == "symbol") {
    p.patch = symbol_patch(c.patch_size, c.data.channels);
  } else if (c.patch_kind == "noise") {
    p.patch = noise_patch(c.patch_size, c.data.channels, mix_seed(c.seed, 41));
  } else {
    p.patch = load_pnm(c.patch_file);
    if (p.patch.channels == 1 && c.data.channels == 3) {
      Image rgb(p.patch.height, p.patch.width, 3);
      for (int r = 0; r < rgb.height; ++r)
        for (int col = 0; col < rgb.width; ++col)
          for (int ch = 0; ch < 3; ++ch) rgb.at(r, col, ch) = p.patch.at(r, col, 0);
      p.patch = std::move(rgb);
    }
  }
  return p;
}

inline AttackConfig configured_attack(const ExperimentConfig& c) {
  AttackConfig a = c.attack;
  a.seed = mix_seed(c.seed, 3);
  a.epsilon = c.use_noise ? c.epsilon() : 0.0;
  a.use_noise = c.use_noise;
  if (c.use_patch) a.patch = configured_patch(c);
  else a.patch.reset();
  return a;
}

inline FixedTrigger baseline_trigger(const ExperimentConfig& c, AttackMode m) {
  const std::uint64_t s = mix_seed(c.seed, 4);
  switch (m) {
    case AttackMode::badnets_pl:
    case AttackMode::badnets_ft: {
      const BadNetsSpec spec{c.badnets_size, parse_anchor(c.badnets_location), s};
      const PatchSpec patch = badnets_patch(spec, c.data.channels);
      return [patch](const Image& x) { return apply_patch(x, patch); };
    }
    case AttackMode::wanet_pl:
    case AttackMode::wanet_ft: {
      const WarpField field = make_warp_field(c.data.height, c.data.width, c.wanet_grid, c.wanet_strength, s);
      return [field](const Image& x) { return wanet_trigger(x, field); };
    }
    case AttackMode::fiba_pl:
    case AttackMode::fiba_ft: {
      FibaSpec spec;
      spec.reference = fiba_reference(c.data.height, c.data.width, c.data.channels, s);
      spec.blend = c.fiba_blend;
      spec.radius = c.fiba_radius;
      return [spec](const Image& x) { return fiba_trigger(x, spec); };
    }
    default: return {};
  }
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineResult {
  AttackMode mode = AttackMode::baple;
  EvalReport report;
  PoisonPlan plan;
  std::optional<AttackResult> attack;
  std::optional<FinetuneResult> finetune;
  FixedTrigger trigger;  // empty for clean modes
  std::vector<std::string> warnings;
  std::string fingerprint;
  std::string dataset_fingerprint;

  const DualEncoder& encoder(const Workspace& w) const { return finetune ? finetune->encoder : w.encoder; }
  ClassPromptSet prompts(const Workspace& w) const {
    const DualEncoder& enc = encoder(w);
    if (attack) return ClassPromptSet::learnable(std::make_shared<PromptState>(attack->prompt), enc, attack->config.keep_template);
    return ClassPromptSet::handcrafted(enc, finetune ? std::string_view(finetune_template) : kDefaultTemplate);
  }
  std::string finetune_template = std::string(kDefaultTemplate);
  const std::vector<EpochTrace>& trace() const {
    static const std::vector<EpochTrace> none;
    if (attack) return attack->trace;
    if (finetune) return finetune->trace;
    return none;
  }
};

inline PipelineResult run_pipeline(const Workspace& w, const ExperimentConfig& c) {
  validate(c);
  PipelineResult r;
  r.mode = c.mode;
  r.fingerprint = config_fingerprint(c);
  r.dataset_fingerprint = dataset_fingerprint(c);
  const FewShotSubset subset = sample_few_shot(w.train, c.shots, mix_seed(c.seed, 1));
  r.plan = make_poison_plan(subset, is_clean(c.mode) ? 0.0 : c.poison_ratio, c.target, mix_seed(c.seed, 2));
  r.warnings = r.plan.warnings;

  if (is_finetune(c.mode)) {
    FinetuneConfig fc = c.finetune;
    fc.seed = mix_seed(c.seed, 3);
    r.trigger = baseline_trigger(c, c.mode);
    r.finetune = run_finetune_attack(w.encoder, w.train, r.plan, r.trigger, fc);
    r.finetune_template = fc.template_pattern;
  } else {
    const AttackConfig ac = configured_attack(c);
    if (c.mode == AttackMode::baple) {
      r.attack = run_baple(w.encoder, w.train, r.plan, ac);
      r.trigger = learned_trigger(*r.attack);
    } else {
      r.trigger = baseline_trigger(c, c.mode);
      r.attack = run_prompt_attack(w.encoder, w.train, r.plan, ac, r.trigger ? PoisonTrigger{r.trigger} : PoisonTrigger{FixedTrigger{}});
    }
  }
  const auto prompts = r.prompts(w);
  r.report = evaluate(r.encoder(w), prompts, w.test, is_clean(c.mode) ? nullptr : &r.trigger, c.target,
                      c.exclude_true_target);
  r.report.fingerprint = r.fingerprint;
  r.report.seed = c.seed;
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps and ablations

struct MetricsRow {
  std::string method;
  std::string axis;   // empty for plain runs
  std::string value;  // axis value as text
  std::uint64_t seed = 0;
  LabelId target = 0;
  double ca = 0.0;
  std::optional<double> ba;
  std::string fingerprint;
  std::string base_fingerprint;
  std::string dataset_fingerprint;
};

inline MetricsRow row_of(const PipelineResult& r, const ExperimentConfig& c) {
  return {method_label(r.mode), "", "", c.seed, c.target, r.report.ca, r.report.ba, r.fingerprint,
          base_fingerprint(c, {}), r.dataset_fingerprint};
}

struct SweepResult {
  std::vector<MetricsRow> rows;
  double mean_ca = 0.0;
  std::optional<double> mean_ba;
  std::vector<std::string> warnings;
};

inline void summarize(SweepResult& s) {
  if (s.rows.empty()) throw EvaluationError("no successful runs to average");
  double ca = 0, ba = 0;
  std::size_t nba = 0;
  for (const auto& r : s.rows) {
    ca += r.ca;
    if (r.ba) {
      ba += *r.ba;
      ++nba;
    }
  }
  s.mean_ca = ca / static_cast<double>(s.rows.size());
  if (nba) s.mean_ba = ba / static_cast<double>(nba);
}

// One full attack per target class (and per seed); failed runs are reported and skipped.
inline SweepResult run_target_sweep(const Workspace& w, const ExperimentConfig& base,
                                    const std::vector<std::uint64_t>& seeds) {
  SweepResult out;
  for (LabelId t = 0; t < base.data.num_classes; ++t) {
    for (auto seed : seeds) {
      ExperimentConfig c = base;
      c.target = t;
      c.seed = seed;
      try {
        auto row = row_of(run_pipeline(w, c), c);
        row.axis = "target_class";
        row.value = std::to_string(t);
        row.base_fingerprint = base_fingerprint(c, {"poison.target"});
        out.rows.push_back(std::move(row));
      } catch (const Error& e) {
        out.warnings.push_back("target " + std::to_string(t) + " seed " + std::to_string(seed) + " failed: " + e.what());
      }
    }
  }
  summarize(out);
  return out;
}

inline constexpr std::array<std::string_view, 7> kAblationAxes = {
    "target_class", "patch_location", "epsilon", "poison_ratio", "patch_size", "num_shots", "patch_noise_flags"};

inline std::vector<std::string> axis_fields(std::string_view axis) {
  if (axis == "target_class") return {"poison.target"};
  if (axis == "patch_location") return {"trigger.patch.location"};
  if (axis == "epsilon") return {"trigger.epsilon_255"};
  if (axis == "poison_ratio") return {"poison.ratio"};
  if (axis == "patch_size") return {"trigger.patch.size"};
  if (axis == "num_shots") return {"data.shots"};
  if (axis == "patch_noise_flags") return {"trigger.patch.enabled", "trigger.noise_enabled"};
  throw ConfigError("ablation.axis", "unknown axis '" + std::string(axis) + "'");
}

inline std::string value_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

inline ExperimentConfig apply_axis(const ExperimentConfig& base, std::string_view axis, const Json& value) {
  const auto fields = axis_fields(axis);
  Json j = to_json(base);
  if (axis == "patch_noise_flags") {
    if (!value.is_string()) throw ConfigError("ablation.values", "patch_noise_flags values must be strings");
    const std::string v = value;
    if (v != "none" && v != "patch" && v != "noise" && v != "patch+noise")
      throw ConfigError("ablation.values", "patch_noise_flags value '" + v + "' is not none|patch|noise|patch+noise");
    *json_at(j, fields[0]) = v == "patch" || v == "patch+noise";
    *json_at(j, fields[1]) = v == "noise" || v == "patch+noise";
  } else {
    *json_at(j, fields[0]) = value;
  }
  try {
    Json user = j;
    return config_from_json(user);
  } catch (const ConfigError& e) {
    throw ConfigError("ablation.values", "axis " + std::string(axis) + " value " + value_text(value) + ": " + e.what());
  }
}

struct AblationGrid {
  std::string axis;
  std::vector<Json> values;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AblationTable {
  std::string axis;
  std::vector<MetricsRow> rows;
  std::vector<std::string> warnings;
};

inline AblationTable run_ablation(const Workspace& w, const AblationGrid& grid, const ExperimentConfig& base) {
  const auto fields = axis_fields(grid.axis);
  if (grid.values.empty()) throw ConfigError("ablation.values", "no values for axis " + grid.axis);
  std::vector<ExperimentConfig> cells;
  for (const auto& v : grid.values) cells.push_back(apply_axis(base, grid.axis, v));
  AblationTable table;
  table.axis = grid.axis;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (auto seed : grid.seeds) {
      ExperimentConfig c = cells[i];
      c.seed = seed;
      auto row = row_of(run_pipeline(w, c), c);
      row.axis = grid.axis;
      row.value = value_text(grid.values[i]);
      row.base_fingerprint = base_fingerprint(c, fields);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

inline AblationGrid grid_from_config(const ExperimentConfig& c) {
  AblationGrid g;
  g.axis = c.ablation_axis;
  (void)axis_fields(g.axis);
  if (!c.ablation_values.is_array()) throw ConfigError("ablation.values", "must be an array");
  for (const auto& v : c.ablation_values) g.values.push_back(v);
  g.seeds = c.repeat_seeds;
  return g;
}

// Mean of every row sharing an axis value, in first-appearance order.
struct AxisSummary {
  std::string value;
  double ca = 0.0;
  std::optional<double> ba;
  std::size_t runs = 0;
};

inline std::vector<AxisSummary> summarize_axis(const std::vector<MetricsRow>& rows) {
  std::vector<AxisSummary> out;
  std::vector<std::size_t> nba;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AxisSummary& s) { return s.value == r.value; });
    if (it == out.end()) {
      out.push_back({r.value, 0.0, std::nullopt, 0});
      nba.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->ca += r.ca;
    ++it->runs;
    if (r.ba) {
      it->ba = it->ba.value_or(0.0) + *r.ba;
      ++nba[k];
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].ca /= static_cast<double>(out[k].runs);
    if (out[k].ba) *out[k].ba /= static_cast<double>(nba[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV and report rendering

inline std::string fmt3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

inline std::string fmt_full(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "method,axis,value,seed,target,ca,ba,fingerprint,base_fingerprint,dataset_fingerprint\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.axis << ',' << r.value << ',' << r.seed << ',' << r.target << ',' << fmt_full(r.ca) << ','
       << (r.ba ? fmt_full(*r.ba) : "") << ',' << r.fingerprint << ',' << r.base_fingerprint << ','
       << r.dataset_fingerprint << '\n';
}

// Long format: one line per (axis value, seed, target, metric).
inline void write_long_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "axis,value,seed,target,metric,score,fingerprint,base_fingerprint\n";
  for (const auto& r : rows) {
    os << r.axis << ',' << r.value << ',' << r.seed << ',' << r.target << ",CA," << fmt_full(r.ca) << ','
       << r.fingerprint << ',' << r.base_fingerprint << '\n';
    if (r.ba)
      os << r.axis << ',' << r.value << ',' << r.seed << ',' << r.target << ",BA," << fmt_full(*r.ba) << ','
         << r.fingerprint << ',' << r.base_fingerprint << '\n';
  }
}

struct ReportBundle {
  std::string fingerprint;
  std::string dataset_fingerprint;
  std::string kind = "run";  // run | sweep | ablation
  std::string axis;
  std::vector<MetricsRow> rows;
  bool complete = false;
};

struct RenderedReport {
  std::string markdown;
  std::string csv;
};

inline AttackMode mode_of_label(const std::string& label) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i)
    if (method_label(static_cast<AttackMode>(i)) == label) return static_cast<AttackMode>(i);
  throw FormatError("unknown method label '" + label + "'");
}

inline RenderedReport render_report(const std::vector<ReportBundle>& bundles) {
  if (bundles.empty()) throw Error("render_report needs at least one bundle");
  std::set<std::string> datasets;
  for (const auto& b : bundles) datasets.insert(b.dataset_fingerprint);
  if (datasets.size() > 1) {
    std::string list;
    for (const auto& d : datasets) list += (list.empty() ? "" : ", ") + d;
    throw Error("refusing to merge bundles with different dataset fingerprints: " + list);
  }
  for (const auto& b : bundles)
    if (!b.complete) throw Error("bundle " + b.fingerprint + " is incomplete");

  RenderedReport out;
  std::ostringstream md, csv;
  md << "# Backdoor comparison\n\nDataset fingerprint: " << *datasets.begin() << "\n\n";
  csv << "table,row,ca,ba,runs\n";

  // Method comparison over plain runs and target sweeps.
  std::map<int, std::pair<std::string, std::vector<MetricsRow>>> methods;
  for (const auto& b : bundles) {
    if (b.kind == "ablation") continue;
    for (const auto& r : b.rows) {
      auto& slot = methods[table_rank(mode_of_label(r.method))];
      slot.first = r.method;
      slot.second.push_back(r);
    }
  }
  if (!methods.empty()) {
    md << "## Methods\n\n| Method | CA | BA |\n|---|---|---|\n";
    for (auto& [rank, entry] : methods) {
      for (auto& r : entry.second) r.value = entry.first;
      const auto s = summarize_axis(entry.second);
      const auto& m = s.front();
      const std::string ba = m.ba ? fmt3(*m.ba) : "";
      md << "| " << entry.first << " | " << fmt3(m.ca) << " | " << ba << " |\n";
      csv << "methods," << entry.first << ',' << fmt3(m.ca) << ',' << ba << ',' << m.runs << '\n';
    }
    md << '\n';
  }
  for (const auto& b : bundles) {
    if (b.kind != "ablation") continue;
    md << "## Ablation: " << b.axis << "\n\n| " << b.axis << " | CA | BA |\n|---|---|---|\n";
    for (const auto& s : summarize_axis(b.rows)) {
      const std::string ba = s.ba ? fmt3(*s.ba) : "";
      md << "| " << s.value << " | " << fmt3(s.ca) << " | " << ba << " |\n";
      csv << "ablation:" << b.axis << ',' << s.value << ',' << fmt3(s.ca) << ',' << ba << ',' << s.runs << '\n';
    }
    md << '\n';
  }
  out.markdown = md.str();
  out.csv = csv.str();
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

template <>
struct ArtifactCodec<ReportBundle> {
  static void save(const ReportBundle& b, const std::filesystem::path& dir) {
    std::ostringstream rows;
    write_metrics_csv(rows, b.rows);
    ArtifactWriter(dir, "report_bundle")
        .field("fingerprint", b.fingerprint)
        .field("dataset_fingerprint", b.dataset_fingerprint)
        .field("bundle_kind", b.kind)
        .field("axis", b.axis.empty() ? std::string("-") : b.axis)
        .field("complete", b.complete)
        .text("rows", rows.str())
        .commit();
  }
  static ReportBundle load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "report_bundle");
    ReportBundle b;
    b.fingerprint = r.field("fingerprint");
    b.dataset_fingerprint = r.field("dataset_fingerprint");
    b.kind = r.field("bundle_kind");
    b.axis = r.field("axis") == "-" ? "" : r.field("axis");
    b.complete = r.field_bool("complete");
    const auto lines = split_lines(r.text("rows"));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = detail::split_csv_line(lines[i]);
      if (f.size() != 10) throw FormatError("corrupt bundle row '" + lines[i] + "'");
      MetricsRow m;
      m.method = f[0];
      m.axis = f[1];
      m.value = f[2];
      m.seed = std::stoull(f[3]);
      m.target = static_cast<LabelId>(std::stol(f[4]));
      m.ca = std::stod(f[5]);
      if (!f[6].empty()) m.ba = std::stod(f[6]);
      m.fingerprint = f[7];
      m.base_fingerprint = f[8];
      m.dataset_fingerprint = f[9];
      b.rows.push_back(std::move(m));
    }
    return b;
  }
};

}  // namespace baple
