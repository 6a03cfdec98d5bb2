#include "posr/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "posr/errors.hpp"

namespace posr::config {

void RunConfig::validate() const {
  if (data_path.empty()) synth.validate();
  backbone.validate();
  loss.validate();
  if (eval_session < 0) throw ConfigError("eval_session must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0, 1)");
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (train.eta_min < 0.0 || train.eta_min > train.lr)
    throw ConfigError("train.eta_min must be in [0, lr]");
  if (train.epochs == 0 || train.batch_size == 0)
    throw ConfigError("train.epochs and train.batch_size must be positive");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) ||
      !(train.beta2 >= 0.0 && train.beta2 < 1.0))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(train.epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  std::set<int> pool(loso_pool.begin(), loso_pool.end());
  if (pool.size() != loso_pool.size())
    throw ConfigError("loso.pool contains duplicate subjects");
}

namespace {

std::string double_str(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ConfigError("double formatting failed");
  return {buf, end};
}

template <class T>
T number_from(const std::string& s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ConfigError("bad numeric value '" + s + "'");
  return value;
}

// Splits on commas; elements may carry surrounding whitespace ("1, 2, 3").
std::vector<std::string> split_list(const std::string& s) {
  auto trimmed = [](std::string part) {
    const auto first = part.find_first_not_of(" \t");
    if (first == std::string::npos) return std::string();
    const auto last = part.find_last_not_of(" \t");
    return part.substr(first, last - first + 1);
  };
  std::vector<std::string> parts;
  if (s.empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) {
      parts.push_back(trimmed(s.substr(start)));
      return parts;
    }
    parts.push_back(trimmed(s.substr(start, comma - start)));
    start = comma + 1;
  }
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>)
      out += double_str(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

struct FieldDef {
  const char* key;
  std::string (*get)(const RunConfig&);
  void (*set)(RunConfig&, const std::string&);
};

// One entry per key, in canonical file order.
const FieldDef kFields[] = {
    {"run_id", [](const RunConfig& c) { return c.run_id; },
     [](RunConfig& c, const std::string& v) { c.run_id = v; }},
    {"seed",
     [](const RunConfig& c) { return std::to_string(c.seed); },
     [](RunConfig& c, const std::string& v) {
       c.seed = number_from<std::uint64_t>(v);
     }},
    {"out_dir", [](const RunConfig& c) { return c.out_dir; },
     [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
    {"data.path", [](const RunConfig& c) { return c.data_path; },
     [](RunConfig& c, const std::string& v) { c.data_path = v; }},
    {"data.eval_session",
     [](const RunConfig& c) { return std::to_string(c.eval_session); },
     [](RunConfig& c, const std::string& v) {
       c.eval_session = number_from<int>(v);
     }},
    {"data.train_fraction",
     [](const RunConfig& c) { return double_str(c.train_fraction); },
     [](RunConfig& c, const std::string& v) {
       c.train_fraction = number_from<double>(v);
     }},
    {"loso.pool",
     [](const RunConfig& c) { return join_list(c.loso_pool); },
     [](RunConfig& c, const std::string& v) {
       c.loso_pool.clear();
       for (const auto& part : split_list(v))
         c.loso_pool.push_back(number_from<int>(part));
     }},
    {"synth.n_subjects",
     [](const RunConfig& c) { return std::to_string(c.synth.n_subjects); },
     [](RunConfig& c, const std::string& v) {
       c.synth.n_subjects = number_from<std::size_t>(v);
     }},
    {"synth.n_classes",
     [](const RunConfig& c) { return std::to_string(c.synth.n_classes); },
     [](RunConfig& c, const std::string& v) {
       c.synth.n_classes = number_from<std::size_t>(v);
     }},
    {"synth.n_channels",
     [](const RunConfig& c) { return std::to_string(c.synth.n_channels); },
     [](RunConfig& c, const std::string& v) {
       c.synth.n_channels = number_from<std::size_t>(v);
     }},
    {"synth.n_samples",
     [](const RunConfig& c) { return std::to_string(c.synth.n_samples); },
     [](RunConfig& c, const std::string& v) {
       c.synth.n_samples = number_from<std::size_t>(v);
     }},
    {"synth.fs_hz",
     [](const RunConfig& c) { return double_str(c.synth.fs_hz); },
     [](RunConfig& c, const std::string& v) {
       c.synth.fs_hz = number_from<double>(v);
     }},
    {"synth.trials_per_subject_per_session",
     [](const RunConfig& c) {
       return std::to_string(c.synth.trials_per_subject_per_session);
     },
     [](RunConfig& c, const std::string& v) {
       c.synth.trials_per_subject_per_session = number_from<std::size_t>(v);
     }},
    {"synth.n_sessions",
     [](const RunConfig& c) { return std::to_string(c.synth.n_sessions); },
     [](RunConfig& c, const std::string& v) {
       c.synth.n_sessions = number_from<std::size_t>(v);
     }},
    {"synth.class_freq_hz",
     [](const RunConfig& c) { return join_list(c.synth.class_freq_hz); },
     [](RunConfig& c, const std::string& v) {
       c.synth.class_freq_hz.clear();
       for (const auto& part : split_list(v))
         c.synth.class_freq_hz.push_back(number_from<double>(part));
     }},
    {"synth.class_amp",
     [](const RunConfig& c) { return double_str(c.synth.class_amp); },
     [](RunConfig& c, const std::string& v) {
       c.synth.class_amp = number_from<double>(v);
     }},
    {"synth.subject_offset_sigma",
     [](const RunConfig& c) { return double_str(c.synth.subject_offset_sigma); },
     [](RunConfig& c, const std::string& v) {
       c.synth.subject_offset_sigma = number_from<double>(v);
     }},
    {"synth.noise_sigma",
     [](const RunConfig& c) { return double_str(c.synth.noise_sigma); },
     [](RunConfig& c, const std::string& v) {
       c.synth.noise_sigma = number_from<double>(v);
     }},
    {"synth.seed",
     [](const RunConfig& c) { return std::to_string(c.synth.seed); },
     [](RunConfig& c, const std::string& v) {
       c.synth.seed = number_from<std::uint64_t>(v);
     }},
    {"backbone.temporal_kernel",
     [](const RunConfig& c) {
       return std::to_string(c.backbone.temporal_kernel);
     },
     [](RunConfig& c, const std::string& v) {
       c.backbone.temporal_kernel = number_from<std::size_t>(v);
     }},
    {"backbone.n_temporal_filters",
     [](const RunConfig& c) {
       return std::to_string(c.backbone.n_temporal_filters);
     },
     [](RunConfig& c, const std::string& v) {
       c.backbone.n_temporal_filters = number_from<std::size_t>(v);
     }},
    {"backbone.n_spatial_filters",
     [](const RunConfig& c) {
       return std::to_string(c.backbone.n_spatial_filters);
     },
     [](RunConfig& c, const std::string& v) {
       c.backbone.n_spatial_filters = number_from<std::size_t>(v);
     }},
    {"backbone.pool_size",
     [](const RunConfig& c) { return std::to_string(c.backbone.pool_size); },
     [](RunConfig& c, const std::string& v) {
       c.backbone.pool_size = number_from<std::size_t>(v);
     }},
    {"backbone.n_extra_blocks",
     [](const RunConfig& c) {
       return std::to_string(c.backbone.n_extra_blocks);
     },
     [](RunConfig& c, const std::string& v) {
       c.backbone.n_extra_blocks = number_from<std::size_t>(v);
     }},
    {"head.embed_dim",
     [](const RunConfig& c) { return std::to_string(c.embed_dim); },
     [](RunConfig& c, const std::string& v) {
       c.embed_dim = number_from<std::size_t>(v);
     }},
    {"loss.clf_kind",
     [](const RunConfig& c) {
       return std::string(losses::loss_kind_name(c.loss.clf_kind));
     },
     [](RunConfig& c, const std::string& v) {
       c.loss.clf_kind = losses::loss_kind_from_name(v);
     }},
    {"loss.ossr_kind",
     [](const RunConfig& c) {
       return std::string(losses::loss_kind_name(c.loss.ossr_kind));
     },
     [](RunConfig& c, const std::string& v) {
       c.loss.ossr_kind = losses::loss_kind_from_name(v);
     }},
    {"loss.gamma_temp",
     [](const RunConfig& c) { return double_str(c.loss.gamma_temp); },
     [](RunConfig& c, const std::string& v) {
       c.loss.gamma_temp = number_from<double>(v);
     }},
    {"loss.beta", [](const RunConfig& c) { return double_str(c.loss.beta); },
     [](RunConfig& c, const std::string& v) {
       c.loss.beta = number_from<double>(v);
     }},
    {"loss.gamma_reg",
     [](const RunConfig& c) { return double_str(c.loss.gamma_reg); },
     [](RunConfig& c, const std::string& v) {
       c.loss.gamma_reg = number_from<double>(v);
     }},
    {"loss.alpha", [](const RunConfig& c) { return double_str(c.loss.alpha); },
     [](RunConfig& c, const std::string& v) {
       c.loss.alpha = number_from<double>(v);
     }},
    {"train.lr", [](const RunConfig& c) { return double_str(c.train.lr); },
     [](RunConfig& c, const std::string& v) {
       c.train.lr = number_from<double>(v);
     }},
    {"train.eta_min",
     [](const RunConfig& c) { return double_str(c.train.eta_min); },
     [](RunConfig& c, const std::string& v) {
       c.train.eta_min = number_from<double>(v);
     }},
    {"train.epochs",
     [](const RunConfig& c) { return std::to_string(c.train.epochs); },
     [](RunConfig& c, const std::string& v) {
       c.train.epochs = number_from<std::size_t>(v);
     }},
    {"train.batch_size",
     [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
     [](RunConfig& c, const std::string& v) {
       c.train.batch_size = number_from<std::size_t>(v);
     }},
    {"train.beta1",
     [](const RunConfig& c) { return double_str(c.train.beta1); },
     [](RunConfig& c, const std::string& v) {
       c.train.beta1 = number_from<double>(v);
     }},
    {"train.beta2",
     [](const RunConfig& c) { return double_str(c.train.beta2); },
     [](RunConfig& c, const std::string& v) {
       c.train.beta2 = number_from<double>(v);
     }},
    {"train.epsilon",
     [](const RunConfig& c) { return double_str(c.train.epsilon); },
     [](RunConfig& c, const std::string& v) {
       c.train.epsilon = number_from<double>(v);
     }},
    {"train.fold_index",
     [](const RunConfig& c) { return std::to_string(c.train.fold_index); },
     [](RunConfig& c, const std::string& v) {
       c.train.fold_index = number_from<std::size_t>(v);
     }},
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) {
  std::string out = "# reproducible run description; flat key = value\n";
  for (const auto& field : kFields) {
    const std::string value = field.get(cfg);
    if (value.find_first_of("\n\r#") != std::string::npos ||
        value != trim(value))
      throw ConfigError(std::string("value of '") + field.key +
                        "' does not survive the config text format: '" +
                        value + "'");
    out += field.key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const FieldDef* field = nullptr;
    for (const auto& f : kFields)
      if (key == f.key) {
        field = &f;
        break;
      }
    if (!field)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    try {
      field->set(cfg, value);
    } catch (const Error& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ", key '" +
                        key + "': " + e.what());
    }
  }
  return cfg;
}

RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileIoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileIoError("cannot open '" + path + "' for writing");
  const std::string text = serialize_config(cfg);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw FileIoError("write to '" + path + "' failed");
}

}  // namespace posr::config
