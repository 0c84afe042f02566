#include "follipipe/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace follipipe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: bad value '" + value + "' for " + key);
  return out;
}

std::array<std::size_t, 3> parse_triple(const std::string& key, const std::string& value) {
  std::array<std::size_t, 3> out{};
  std::stringstream ss(value);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw std::invalid_argument("config: " + key + " takes exactly 3 comma-separated values");
    out[i++] = parse_number<std::size_t>(key, trim(item));
  }
  if (i != 3) throw std::invalid_argument("config: " + key + " takes exactly 3 comma-separated values");
  return out;
}

std::string triple(const std::array<std::size_t, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

}  // namespace

std::string to_string(const LossMode& mode) {
  return mode.adaptive ? "adaptive:" + std::string(to_string(mode.criterion)) : "plain_ce";
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "plain_ce") return {};
  constexpr std::string_view prefix = "adaptive:";
  if (text.substr(0, prefix.size()) == prefix) return {true, parse_criterion(text.substr(prefix.size()))};
  throw std::invalid_argument("unknown loss mode '" + std::string(text) + "' (expected plain_ce or adaptive:<criterion>)");
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (epochs > 100000) fail("epochs out of range");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(joint_weight >= 0.0 && joint_weight <= 1.0)) fail("joint_weight must lie in [0,1]");
  if (!(follicular_share >= 0.0 && follicular_share <= 1.0)) fail("follicular_share must lie in [0,1]");
  model.validate();
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value,
                      const std::filesystem::path& base) {
  const auto path = [&] {
    std::filesystem::path p(value);
    return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
  };
  if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "patch_size") c.model.patch_size = parse_number<std::size_t>(key, value);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "steps_per_epoch") c.steps_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "loss_mode") c.loss_mode = parse_loss_mode(value);
  else if (key == "joint_weight") c.joint_weight = parse_number<double>(key, value);
  else if (key == "follicular_share") c.follicular_share = parse_number<double>(key, value);
  else if (key == "manifest") c.manifest = path();
  else if (key == "checkpoint") c.checkpoint = path();
  else if (key == "metrics") c.metrics = path();
  else if (key == "ref_patch") c.ref_patch = path();
  else if (key == "stem_width") c.model.stem_width = parse_number<std::size_t>(key, value);
  else if (key == "stage_widths") c.model.stage_widths = parse_triple(key, value);
  else if (key == "blocks_per_stage") c.model.blocks_per_stage = parse_number<std::size_t>(key, value);
  else if (key == "classifier_conv_width") c.model.classifier_conv_width = parse_number<std::size_t>(key, value);
  else if (key == "classifier_hidden") c.model.classifier_hidden = parse_number<std::size_t>(key, value);
  else if (key == "aspp_width") c.model.aspp_width = parse_number<std::size_t>(key, value);
  else if (key == "aspp_rates") c.model.aspp_rates = parse_triple(key, value);
  else if (key == "fusion_width") c.model.fusion_width = parse_number<std::size_t>(key, value);
  else if (key == "init_gain") c.model.init_gain = parse_number<double>(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  TrainConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
    try {
      set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), path.parent_path());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return c;
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "seed = " << c.seed << '\n'
      << "patch_size = " << c.model.patch_size << '\n'
      << "epochs = " << c.epochs << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "steps_per_epoch = " << c.steps_per_epoch << '\n'
      << "learning_rate = " << c.learning_rate << '\n'
      << "loss_mode = " << to_string(c.loss_mode) << '\n'
      << "joint_weight = " << c.joint_weight << '\n'
      << "follicular_share = " << c.follicular_share << '\n'
      << "manifest = " << c.manifest.string() << '\n'
      << "checkpoint = " << c.checkpoint.string() << '\n'
      << "metrics = " << c.metrics.string() << '\n'
      << "ref_patch = " << c.ref_patch.string() << '\n'
      << "stem_width = " << c.model.stem_width << '\n'
      << "stage_widths = " << triple(c.model.stage_widths) << '\n'
      << "blocks_per_stage = " << c.model.blocks_per_stage << '\n'
      << "classifier_conv_width = " << c.model.classifier_conv_width << '\n'
      << "classifier_hidden = " << c.model.classifier_hidden << '\n'
      << "aspp_width = " << c.model.aspp_width << '\n'
      << "aspp_rates = " << triple(c.model.aspp_rates) << '\n'
      << "fusion_width = " << c.model.fusion_width << '\n'
      << "init_gain = " << c.model.init_gain << '\n';
  return out.str();
}

}  // namespace follipipe
