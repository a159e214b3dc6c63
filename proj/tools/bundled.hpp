#pragma once

namespace penning::cli {

/// Contents of data/scenario.json, compiled in so the binary works without the source tree.
const char* bundled_scenario_json();

}  // namespace penning::cli
