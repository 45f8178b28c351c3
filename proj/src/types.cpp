#include "grpo_forge/types.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"

namespace grpo_forge {

Vocab Vocab::canonical(int size) {
  if (size < 7) {
    throw InvalidInput(fmt::format("vocab size {} too small: need 6 markers plus content", size));
  }
  Vocab v;
  v.size = size;
  v.think_open = size - 6;
  v.think_close = size - 5;
  v.ans_open = size - 4;
  v.ans_close = size - 3;
  v.hint = size - 2;
  v.end = size - 1;
  return v;
}

bool Vocab::is_marker(int token) const {
  return token == think_open || token == think_close || token == ans_open ||
         token == ans_close || token == hint || token == end;
}

void Vocab::validate() const {
  const std::array<int, 6> ids{think_open, think_close, ans_open, ans_close, hint, end};
  if (size < 7) throw InvalidInput("vocab needs at least one content token besides the 6 markers");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= size) {
      throw InvalidInput(fmt::format("marker id {} outside vocab of size {}", ids[i], size));
    }
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (ids[i] == ids[j]) throw InvalidInput(fmt::format("duplicate marker id {}", ids[i]));
    }
  }
}

void Interval::validate() const {
  if (!std::isfinite(start) || !std::isfinite(end) || start < 0.0 || start > end) {
    throw InvalidInput(fmt::format("invalid interval ({}, {})", start, end));
  }
}

std::string_view family_id(TaskFamily family) {
  switch (family) {
    case TaskFamily::kGroupedQa: return "grouped_qa";
    case TaskFamily::kTemporalGrounding: return "temporal_grounding";
    case TaskFamily::kFormatOnly: return "format_only";
  }
  return "unknown";
}

TaskFamily parse_family(std::string_view id) {
  if (id == "grouped_qa") return TaskFamily::kGroupedQa;
  if (id == "temporal_grounding") return TaskFamily::kTemporalGrounding;
  if (id == "format_only") return TaskFamily::kFormatOnly;
  throw ConfigError(fmt::format(
      "unknown task family '{}' (valid: grouped_qa, temporal_grounding, format_only)", id));
}

}  // namespace grpo_forge
