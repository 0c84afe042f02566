#include "follipipe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace follipipe {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

std::string join(const std::array<std::size_t, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

std::array<std::size_t, 3> split3(const std::string& text) {
  std::array<std::size_t, 3> out{};
  std::istringstream in(text);
  std::string part;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::getline(in, part, ',')) throw std::runtime_error("checkpoint: expected three values in '" + text + "'");
    out[i] = std::stoul(part);
  }
  return out;
}

std::string dims_text(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string model_config_line(const ModelConfig& c) {
  std::ostringstream os;
  os << "model patch_size=" << c.patch_size << " stem_width=" << c.stem_width << " stage_widths=" << join(c.stage_widths)
     << " blocks_per_stage=" << c.blocks_per_stage << " classifier_conv_width=" << c.classifier_conv_width
     << " classifier_hidden=" << c.classifier_hidden << " aspp_width=" << c.aspp_width
     << " aspp_rates=" << join(c.aspp_rates) << " fusion_width=" << c.fusion_width
     << " init_gain=" << format_double(c.init_gain);
  return os.str();
}

ModelConfig parse_model_config_line(const std::string& line) {
  std::istringstream in(line);
  std::string word;
  if (!(in >> word) || word != "model") throw std::runtime_error("checkpoint: expected 'model' header line");
  ModelConfig c;
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed model field '" + word + "'");
    const std::string key = word.substr(0, eq), value = word.substr(eq + 1);
    if (key == "patch_size") c.patch_size = std::stoul(value);
    else if (key == "stem_width") c.stem_width = std::stoul(value);
    else if (key == "stage_widths") c.stage_widths = split3(value);
    else if (key == "blocks_per_stage") c.blocks_per_stage = std::stoul(value);
    else if (key == "classifier_conv_width") c.classifier_conv_width = std::stoul(value);
    else if (key == "classifier_hidden") c.classifier_hidden = std::stoul(value);
    else if (key == "aspp_width") c.aspp_width = std::stoul(value);
    else if (key == "aspp_rates") c.aspp_rates = split3(value);
    else if (key == "fusion_width") c.fusion_width = std::stoul(value);
    else if (key == "init_gain") c.init_gain = std::stod(value);
    else throw std::runtime_error("checkpoint: unknown model field '" + key + "'");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const HybridModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto params = model.parameters();
  out << kCheckpointMagic << '\n' << model_config_line(model.config()) << '\n' << "params " << params.size() << '\n';
  for (const auto* p : params) out << p->name << ' ' << dims_text(p->value.shape()) << '\n';
  out << "end\n";
  for (const auto* p : params) {
    for (double v : p->value.values()) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

HybridModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string() + ": ";
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw std::runtime_error(where + "missing magic '" + kCheckpointMagic + "'");
  if (!std::getline(in, line)) throw std::runtime_error(where + "truncated header");
  ModelConfig config;
  try {
    config = parse_model_config_line(line);
    config.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error(where + e.what());
  }
  HybridModel model(config);
  auto params = model.parameters();

  std::size_t count = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "params %zu", &count) != 1)
    throw std::runtime_error(where + "expected 'params <count>' line");
  if (count != params.size())
    throw std::runtime_error(where + "header lists " + std::to_string(count) + " parameters, model config implies " +
                             std::to_string(params.size()));
  for (const auto* p : params) {
    if (!std::getline(in, line)) throw std::runtime_error(where + "truncated parameter table");
    const std::string expected = p->name + ' ' + dims_text(p->value.shape());
    if (line != expected) throw std::runtime_error(where + "parameter entry '" + line + "' does not match expected '" + expected + "'");
  }
  if (!std::getline(in, line) || line != "end") throw std::runtime_error(where + "missing 'end' after parameter table");

  for (auto* p : params) {
    for (auto& v : p->value.values()) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw std::runtime_error(where + "weight data truncated in " + p->name);
      v = std::bit_cast<double>(to_little(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(where + "trailing bytes after weight data");
  return model;
}

}  // namespace follipipe
