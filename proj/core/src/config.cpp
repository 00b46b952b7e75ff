#include "gres2net/config.hpp"

#include <fstream>
#include <sstream>

#include "gres2net/blocks.hpp"

namespace gres2net {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

KvPairs parse_kv_text(const std::string& text) {
  KvPairs out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(format_msg("line ", lineno, ": expected key=value, got '",
                                  line, "'"));
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(format_msg("line ", lineno, ": empty key"));
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KvPairs parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(format_msg("cannot open config file '", path, "'"));
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_kv_text(text.str());
  } catch (const ParseError& e) {
    throw ParseError(format_msg(path, ": ", e.what()));
  }
}

std::string kv_get(const KvPairs& kv, const std::string& key,
                   const std::string& fallback) {
  // Last assignment wins, so later lines can override earlier ones.
  std::string value = fallback;
  for (const auto& [k, v] : kv)
    if (k == key) value = v;
  return value;
}

bool kv_has(const KvPairs& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return true;
  return false;
}

int64_t parse_int(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(format_msg(what, ": expected an integer, got '", s, "'"));
  }
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(format_msg(what, ": expected a number, got '", s, "'"));
  }
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw ParseError(format_msg(what, ": expected a boolean, got '", s, "'"));
}

namespace {

std::string stages_to_text(const std::vector<StageConfig>& stages) {
  std::ostringstream os;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) os << ",";
    os << stages[i].blocks << "x" << stages[i].width << "/" << stages[i].stride;
  }
  return os.str();
}

std::vector<StageConfig> stages_from_text(const std::string& text) {
  std::vector<StageConfig> stages;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto x = item.find('x');
    const auto slash = item.find('/');
    if (x == std::string::npos || slash == std::string::npos || slash < x)
      throw ParseError(format_msg(
          "stages: expected '<blocks>x<width>/<stride>', got '", item, "'"));
    StageConfig st;
    st.blocks = parse_int(item.substr(0, x), "stages.blocks");
    st.width = parse_int(item.substr(x + 1, slash - x - 1), "stages.width");
    st.stride = parse_int(item.substr(slash + 1), "stages.stride");
    stages.push_back(st);
  }
  if (stages.empty()) throw ParseError("stages: empty stage list");
  return stages;
}

}  // namespace

std::string BackboneConfig::to_text() const {
  std::ostringstream os;
  os << "arch=" << (gate == GateKind::none ? "res2net" : gate_kind_name(gate))
     << "\n";
  os << "scale=" << scale << "\n";
  os << "reduction=" << reduction << "\n";
  os << "se=" << (use_se ? 1 : 0) << "\n";
  os << "se_reduction=" << se_reduction << "\n";
  os << "batchnorm=" << (use_bn ? 1 : 0) << "\n";
  os << "activations=" << (use_relu ? 1 : 0) << "\n";
  os << "final_relu=" << (final_relu ? 1 : 0) << "\n";
  os << "input_bins=" << input_bins << "\n";
  os << "input_frames=" << input_frames << "\n";
  os << "input_pool=" << input_pool << "\n";
  os << "stem_channels=" << stem_channels << "\n";
  os << "stem_stride=" << stem_stride << "\n";
  os << "stages=" << stages_to_text(stages) << "\n";
  os << "num_classes=" << num_classes << "\n";
  return os.str();
}

BackboneConfig BackboneConfig::from_text(const std::string& text) {
  BackboneConfig cfg;
  for (const auto& [key, value] : parse_kv_text(text)) {
    if (key == "arch")
      cfg.gate = gate_kind_from_name(value);
    else if (key == "scale")
      cfg.scale = parse_int(value, key);
    else if (key == "reduction")
      cfg.reduction = parse_int(value, key);
    else if (key == "se")
      cfg.use_se = parse_bool(value, key);
    else if (key == "se_reduction")
      cfg.se_reduction = parse_int(value, key);
    else if (key == "batchnorm")
      cfg.use_bn = parse_bool(value, key);
    else if (key == "activations")
      cfg.use_relu = parse_bool(value, key);
    else if (key == "final_relu")
      cfg.final_relu = parse_bool(value, key);
    else if (key == "input_bins")
      cfg.input_bins = parse_int(value, key);
    else if (key == "input_frames")
      cfg.input_frames = parse_int(value, key);
    else if (key == "input_pool")
      cfg.input_pool = parse_int(value, key);
    else if (key == "stem_channels")
      cfg.stem_channels = parse_int(value, key);
    else if (key == "stem_stride")
      cfg.stem_stride = parse_int(value, key);
    else if (key == "stages")
      cfg.stages = stages_from_text(value);
    else if (key == "num_classes")
      cfg.num_classes = parse_int(value, key);
    else
      throw ConfigError(format_msg("unknown backbone config key '", key, "'"));
  }
  cfg.validate();
  return cfg;
}

}  // namespace gres2net
