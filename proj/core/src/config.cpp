#include "mutdet/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mutdet/errors.hpp"
#include "mutdet/pseudo_labels.hpp"

namespace mutdet::cfg {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v) {
  std::istringstream in(v);
  T out;
  in >> out;
  if (!in || !in.eof()) throw ConfigError("cannot parse number '" + v + "'");
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = [] {
    std::vector<std::pair<std::string, Field>> v;
    auto num = [&v](const std::string& key, auto RunConfig::* member) {
      using T = std::decay_t<decltype(std::declval<RunConfig>().*member)>;
      v.push_back({key, {[member](RunConfig& rc, const std::string& s) {
                           rc.*member = parse_num<T>(s);
                         },
                         [member](const RunConfig& rc) {
                           if constexpr (std::is_floating_point_v<T>)
                             return labels::format_double(rc.*member);
                           else
                             return std::to_string(rc.*member);
                         }}});
    };
    auto boolean = [&v](const std::string& key, bool RunConfig::* member) {
      v.push_back({key, {[member](RunConfig& rc, const std::string& s) {
                           rc.*member = parse_bool(s);
                         },
                         [member](const RunConfig& rc) { return fmt_bool(rc.*member); }}});
    };
    num("seed", &RunConfig::seed);
    num("epochs", &RunConfig::epochs);
    num("batch_size", &RunConfig::batch_size);
    num("learning_rate", &RunConfig::learning_rate);
    num("lr_decay_epoch", &RunConfig::lr_decay_epoch);
    num("lr_decay_factor", &RunConfig::lr_decay_factor);
    num("warmup_iters", &RunConfig::warmup_iters);
    num("weight_decay", &RunConfig::weight_decay);
    num("beta1", &RunConfig::beta1);
    num("beta2", &RunConfig::beta2);
    num("log_every", &RunConfig::log_every);
    num("checkpoint_every", &RunConfig::checkpoint_every);
    v.push_back({"calibration_mode",
                 {[](RunConfig& rc, const std::string& s) {
                    loss::parse_calibration_mode(s);  // validity check
                    rc.calibration_mode = s;
                  },
                  [](const RunConfig& rc) { return rc.calibration_mode; }}});
    boolean("enhance", &RunConfig::enhance);
    num("image_size", &RunConfig::image_size);
    num("C", &RunConfig::C);
    num("N", &RunConfig::N);
    num("K_cls", &RunConfig::K_cls);
    num("A_bins", &RunConfig::A_bins);
    num("encoder_layers", &RunConfig::encoder_layers);
    num("decoder_layers", &RunConfig::decoder_layers);
    num("enhancement_layers", &RunConfig::enhancement_layers);
    boolean("two_stage_queries", &RunConfig::two_stage_queries);
    boolean("deep_supervision", &RunConfig::deep_supervision);
    num("init_seed", &RunConfig::init_seed);
    num("backbone_seed", &RunConfig::backbone_seed);
    num("tau", &RunConfig::tau);
    num("focal_alpha", &RunConfig::focal_alpha);
    num("focal_gamma", &RunConfig::focal_gamma);
    num("qfl_gamma", &RunConfig::qfl_gamma);
    num("w_l1", &RunConfig::w_l1);
    num("w_giou", &RunConfig::w_giou);
    num("match_cls", &RunConfig::match_cls);
    num("match_l1", &RunConfig::match_l1);
    num("match_giou", &RunConfig::match_giou);
    num("match_ang", &RunConfig::match_ang);
    num("csl_sigma", &RunConfig::csl_sigma);
    num("csl_radius", &RunConfig::csl_radius);
    return v;
  }();
  return f;
}

}  // namespace

det::DetectorConfig RunConfig::detector() const {
  det::DetectorConfig d;
  d.image_size = image_size;
  d.C = C;
  d.N = N;
  d.K_cls = K_cls;
  d.A_bins = A_bins;
  d.encoder_layers = encoder_layers;
  d.decoder_layers = decoder_layers;
  d.enhancement_layers = enhancement_layers;
  d.enhancement_enabled = enhance;
  d.two_stage_queries = two_stage_queries;
  d.deep_supervision = deep_supervision;
  d.init_seed = init_seed;
  d.backbone_seed = backbone_seed;
  return d;
}

loss::LossOptions RunConfig::loss_options() const {
  loss::LossOptions o;
  o.matching.weights = {match_cls, match_l1, match_giou, match_ang};
  o.matching.focal_alpha = focal_alpha;
  o.matching.focal_gamma = focal_gamma;
  o.matching.csl_sigma = csl_sigma;
  o.matching.csl_radius = csl_radius;
  o.tau = tau;
  o.focal_alpha = focal_alpha;
  o.focal_gamma = focal_gamma;
  o.qfl_gamma = qfl_gamma;
  o.w_l1 = w_l1;
  o.w_giou = w_giou;
  o.deep_supervision = deep_supervision;
  o.mode = loss::parse_calibration_mode(calibration_mode);
  return o;
}

void RunConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0)
    throw ConfigError("lr_decay_factor must be in (0, 1]");
  if (lr_decay_epoch > epochs) throw ConfigError("lr_decay_epoch must be <= epochs");
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (csl_radius < 0 || csl_sigma <= 0.0) throw ConfigError("bad CSL window");
  loss::parse_calibration_mode(calibration_mode);
  detector().validate();
}

void apply_key_value(RunConfig& rc, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields())
    if (name == key) {
      try {
        field.set(rc, value);
      } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    try {
      apply_key_value(rc, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rc;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& rc) {
  std::ostringstream out;
  for (const auto& [name, field] : fields()) out << name << " = " << field.get(rc) << "\n";
  return out.str();
}

}  // namespace mutdet::cfg
