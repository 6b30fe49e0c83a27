#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include "nncore/matrix.hpp"

namespace corpus {

/// Hidden-state sidecar for a dataset file: one |A| x d real64 block per
/// sample, addressed through a (sample_id -> offset, length) index.
struct HiddenTraces {
  int width = 0;  // d
  std::map<std::int64_t, nncore::Matrix2D> by_sample;

  bool empty() const { return by_sample.empty(); }
  const nncore::Matrix2D& rows_for(std::int64_t sample_id) const;
};

void save_traces(const HiddenTraces& traces, const std::filesystem::path& path);
HiddenTraces load_traces(const std::filesystem::path& path);

}  // namespace corpus
