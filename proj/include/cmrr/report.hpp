#pragma once

#include <span>
#include <string>

#include <json.hpp>

#include "cmrr/eval.hpp"
#include "cmrr/pipeline.hpp"
#include "cmrr/train.hpp"

namespace cmrr {

nlohmann::json to_json(const Ranking& ranking);
nlohmann::json to_json(const Counters& counters);

// Recalls, mR, counters and the strategy echo. Wall-clock fields only when include_timings is set,
// so the remaining document is reproducible byte for byte.
nlohmann::json to_json(const EvalReport& report, bool include_timings);

nlohmann::json to_json(std::span<const BenchRow> rows);
nlohmann::json to_json(const HistoryRecord& record);

std::string hex64(std::uint64_t v);

}  // namespace cmrr
