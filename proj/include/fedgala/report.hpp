#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgala/core.hpp"

namespace fedgala {

/// One client's metrics for one round. Byte fields are exact serialized
/// payload sizes.
struct RoundReport {
  std::string phase;  // "pretrain" | "finetune"
  std::size_t round = 0;
  ClientId client = 0;
  double loss = 0.0;
  double val = 0.0;
  double alpha = 0.0;
  std::vector<double> beta;
  std::uint32_t sel_T = 0;
  std::uint32_t sel_G = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  double ms = 0.0;
};

inline nlohmann::ordered_json to_json(const RoundReport& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["round"] = r.round;
  j["client"] = r.client;
  if (r.phase == "pretrain") {
    j["loss"] = r.loss;
    j["alpha"] = r.alpha;
    j["beta"] = r.beta;
    j["bytes_up"] = r.bytes_up;
    j["bytes_down"] = r.bytes_down;
  } else {
    j["sel_T"] = r.sel_T;
    j["sel_G"] = r.sel_G;
    j["val"] = r.val;
    j["loss"] = r.loss;
    j["bytes_up"] = r.bytes_up;
    j["bytes_down"] = r.bytes_down;
  }
  j["ms"] = r.ms;
  return j;
}

}  // namespace fedgala
