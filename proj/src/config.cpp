#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "milpf/error.hpp"
#include "milpf/trainer.hpp"

namespace milpf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

}  // namespace

void TrainConfig::check() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be non-negative");
  if (mode != InferenceMode::mil && local_agg != AggKind::none)
    throw ConfigError("SIL modes train the global stream only; set local_agg = none");
  agg().check();
}

AggConfig TrainConfig::agg() const {
  switch (mode) {
    case InferenceMode::sil_mean: return {AggKind::mean, AggKind::none, h1, h2};
    case InferenceMode::sil_max: return {AggKind::max, AggKind::none, h1, h2};
    case InferenceMode::mil: break;
  }
  return {global_agg, local_agg, h1, h2};
}

ParsedConfig parse_config(std::istream& in) {
  ParsedConfig out;
  TrainConfig& c = out.config;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    if (key == "global_agg") c.global_agg = agg_from_string(val);
    else if (key == "local_agg") c.local_agg = agg_from_string(val);
    else if (key == "lr") c.lr = parse_number<double>(key, val);
    else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, val);
    else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, val);
    else if (key == "adam_eps") c.adam_eps = parse_number<double>(key, val);
    else if (key == "epochs") c.epochs = parse_number<int>(key, val);
    else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, val);
      out.has_seed = true;
    } else if (key == "init_scale") c.init_scale = parse_number<double>(key, val);
    else if (key == "runs") c.runs = parse_number<int>(key, val);
    else if (key == "mode") c.mode = mode_from_string(val);
    else if (key == "h1") c.h1 = parse_number<std::size_t>(key, val);
    else if (key == "h2") c.h2 = parse_number<std::size_t>(key, val);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  c.check();
  return out;
}

ParsedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing config file " + path.string());
  return parse_config(in);
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "global_agg = " << to_string(c.global_agg) << '\n'
    << "local_agg = " << to_string(c.local_agg) << '\n'
    << "lr = " << c.lr << '\n'
    << "adam_beta1 = " << c.adam_beta1 << '\n'
    << "adam_beta2 = " << c.adam_beta2 << '\n'
    << "adam_eps = " << c.adam_eps << '\n'
    << "epochs = " << c.epochs << '\n'
    << "seed = " << c.seed << '\n'
    << "init_scale = " << c.init_scale << '\n'
    << "runs = " << c.runs << '\n'
    << "mode = " << to_string(c.mode) << '\n'
    << "h1 = " << c.h1 << '\n'
    << "h2 = " << c.h2 << '\n';
  return o.str();
}

}  // namespace milpf
