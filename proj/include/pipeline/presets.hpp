#pragma once

#include <cstdint>
#include <string>

#include "pipeline/manifest.hpp"

namespace pipeline {

enum class PresetScale { full, quick };

/// Ready-to-run transfer experiment: base text -> one synthetic domain,
/// four-method comparison plus the budget sweep. `quick` shrinks corpora,
/// models and epochs to smoke-test scale.
ExperimentManifest make_transfer_preset(corpus::GeneratorKind domain, std::string out_root,
                                        std::uint64_t seed, PresetScale scale);

}  // namespace pipeline
