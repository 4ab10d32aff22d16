#ifndef MSMA_REPORTS_HPP
#define MSMA_REPORTS_HPP

#include "msma/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace msma {

inline constexpr const char* kTableFile = "table.csv";
inline const std::vector<std::string> kTableColumns = {"KL_gm", "KL_ml", "MI_gm", "MI_ml", "DC_gm", "DC_ml"};

struct TableRow {
  std::string group;
  std::string run;  // source directory name
  std::vector<std::optional<double>> values;  // kTableColumns order; nullopt = missing
};

struct CombinedTable {
  std::vector<TableRow> rows;  // sorted by group
  std::vector<std::string> warnings;

  std::string to_csv() const;
  std::string to_markdown() const;
};

// Parses one table.csv (header group + any subset of kTableColumns).
std::vector<TableRow> parse_table(const std::string& csv, const std::string& run);

// Reads <dir>/table.csv from every directory. Unreadable or malformed
// directories are skipped with a warning; a group seen in more than one run gets
// "#2", "#3", ... appended in input order. Throws when nothing is left.
CombinedTable combine_runs(const std::vector<std::filesystem::path>& dirs);

struct PlotSeries {
  std::string name;
  std::vector<double> y;  // x = 1, 2, ...
};

std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<PlotSeries>& series);
std::string heatmap_svg(const std::string& title, const Matrix& values, const std::vector<std::string>& row_labels = {},
                        const std::vector<std::string>& col_labels = {});

}  // namespace msma

#endif
