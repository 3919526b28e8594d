#include <sstream>

#include <json.hpp>

#include "npt/trainer.hpp"

namespace npt {

using nlohmann::json;

Widths parse_widths(const std::string& text) {
  if (text == "desk") return Widths::desk();
  if (text == "paper") return Widths::paper();
  std::vector<Index> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long value = 0;
    try {
      value = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || value < 1) {
      throw std::invalid_argument("widths: expected desk, paper or five positive integers, got '" + text + "'");
    }
    w.push_back(value);
  }
  if (w.size() != 5) throw std::invalid_argument("widths: expected five comma-separated values, got '" + text + "'");
  return {w[0], w[1], w[2], w[3], w[4]};
}

std::string widths_string(const Widths& w) {
  return std::to_string(w.c1) + "," + std::to_string(w.c2) + "," + std::to_string(w.c3) + "," + std::to_string(w.w2) +
         "," + std::to_string(w.w3);
}

TrainConfig train_config_from_json(const std::string& json_text, TrainConfig cfg) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "lambda_edge") cfg.lambda_edge = value.get<double>();
      else if (key == "variant") cfg.model.variant = parse_variant(value.get<std::string>());
      else if (key == "widths") {
        if (value.is_string()) {
          cfg.model.widths = parse_widths(value.get<std::string>());
        } else {
          const auto w = value.get<std::vector<Index>>();
          if (w.size() != 5) throw std::invalid_argument("config: widths needs five entries");
          cfg.model.widths = {w[0], w[1], w[2], w[3], w[4]};
        }
      } else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "model_seed") cfg.model.seed = value.get<std::uint64_t>();
      else if (key == "precision") cfg.precision = parse_precision(value.get<std::string>());
      else if (key == "checkpoint_every") cfg.checkpoint_every = value.get<int>();
      else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") cfg.adam_eps = value.get<double>();
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string train_config_json(const TrainConfig& cfg) {
  const auto& w = cfg.model.widths;
  json j = {{"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"epochs", cfg.epochs},
            {"lambda_edge", cfg.lambda_edge},
            {"variant", variant_name(cfg.model.variant)},
            {"widths", {w.c1, w.c2, w.c3, w.w2, w.w3}},
            {"seed", cfg.seed},
            {"model_seed", cfg.model.seed},
            {"precision", precision_name(cfg.precision)},
            {"checkpoint_every", cfg.checkpoint_every},
            {"adam_beta1", cfg.adam_beta1},
            {"adam_beta2", cfg.adam_beta2},
            {"adam_eps", cfg.adam_eps}};
  return j.dump(2) + "\n";
}

}  // namespace npt
