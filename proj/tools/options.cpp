#include "options.hpp"

#include <algorithm>
#include <fstream>

#include "nerfinv/errors.hpp"

namespace nerfinv::cli {
namespace {

std::string flag(const std::string& name) {
  std::string f = "--" + name;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

nlohmann::json convert(const std::string& name, const std::string& text, const nlohmann::json& like) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw std::invalid_argument("expected true or false");
    }
    if (like.is_number_integer()) {
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_number()) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
  } catch (const std::exception&) {
    throw CLI::ValidationError(flag(name), "cannot parse '" + text + "'");
  }
  return text;
}

bool same_kind(const nlohmann::json& value, const nlohmann::json& like) {
  if (like.is_boolean()) return value.is_boolean();
  if (like.is_number_integer()) return value.is_number_integer();
  if (like.is_number()) return value.is_number();
  return value.is_string();
}

}  // namespace

Options::Options(CLI::App* app) : app_(app) {
  app_->add_option("--config", config_path_, "JSON file with settings; flags take precedence");
}

void Options::add(const std::string& name, nlohmann::json fallback, const std::string& help) {
  order_.push_back(name);
  defaults_[name] = fallback;
  std::string description = help + " (default " + fallback.dump() + ")";
  app_->add_option(flag(name), raw_[name], description);
}

nlohmann::json Options::resolve() const {
  nlohmann::json out = nlohmann::json::object();
  for (const std::string& name : order_) out[name] = defaults_.at(name);
  if (!config_path_.empty()) {
    std::ifstream is(config_path_);
    if (!is) throw IoError("cannot open config file", config_path_);
    nlohmann::json file;
    try {
      is >> file;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed config JSON (") + e.what() + ")", config_path_);
    }
    if (!file.is_object()) throw CLI::ValidationError("--config", "expected a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!defaults_.contains(key)) throw CLI::ValidationError("--config", "unknown setting '" + key + "'");
      const nlohmann::json& like = defaults_.at(key);
      if (!same_kind(value, like) && !(like.is_number_float() && value.is_number())) {
        throw CLI::ValidationError("--config", "setting '" + key + "' has the wrong type");
      }
      out[key] = value;
    }
  }
  for (const std::string& name : order_) {
    if (app_->count(flag(name)) > 0) out[name] = convert(name, raw_.at(name), defaults_.at(name));
  }
  return out;
}

}  // namespace nerfinv::cli
