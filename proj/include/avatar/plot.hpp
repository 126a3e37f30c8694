#pragma once
// Charts of metric tables (sweep/ablation CSVs, training logs) drawn straight
// into an RGB tensor.
#include <string>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

/// Header line then data lines. Fields split on commas when the header has
/// one, on whitespace otherwise; double quotes group a field. Throws
/// std::invalid_argument on an empty table or a ragged row.
Table parse_table(const std::string& text);

/// Line chart when every entry of the first column is numeric (one series per
/// other numeric column), bar chart of the second column otherwise. A column
/// named "std" draws error bars on the column before it. Returns [3,H,W].
Tensor plot_table(const Table& t, int width = 640, int height = 400);

}  // namespace avatar
