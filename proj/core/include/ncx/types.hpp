#pragma once

#include <string_view>

#include "ncx/errors.hpp"

namespace ncx {

enum class TaskKind { kRegression, kClassification };

inline std::string_view task_kind_name(TaskKind k) {
  return k == TaskKind::kRegression ? "regression" : "classification";
}

inline TaskKind task_kind_from_name(std::string_view name) {
  if (name == "regression") return TaskKind::kRegression;
  if (name == "classification") return TaskKind::kClassification;
  throw ContractError("unknown task kind '" + std::string(name) + "'");
}

}  // namespace ncx
