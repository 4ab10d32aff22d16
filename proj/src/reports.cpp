#include "msma/reports.hpp"

#include "msma/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace msma {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

}  // namespace

std::vector<TableRow> parse_table(const std::string& csv, const std::string& run) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) invalid("empty table");
  const auto header = split(line, ',');
  if (header.empty() || header[0] != "group") invalid("table header must start with 'group'");
  std::vector<int> col_of(header.size(), -1);
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto it = std::find(kTableColumns.begin(), kTableColumns.end(), header[c]);
    if (it == kTableColumns.end()) invalid("unknown table column '" + header[c] + "'");
    col_of[c] = static_cast<int>(it - kTableColumns.begin());
  }
  std::vector<TableRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) invalid("table line " + std::to_string(lineno) + ": wrong field count");
    if (f[0].empty()) invalid("table line " + std::to_string(lineno) + ": empty group");
    TableRow r{f[0], run, std::vector<std::optional<double>>(kTableColumns.size())};
    for (std::size_t c = 1; c < f.size(); ++c) {
      if (f[c] == "NA" || f[c].empty()) continue;
      char* end = nullptr;
      const double v = std::strtod(f[c].c_str(), &end);
      if (*end != '\0') invalid("table line " + std::to_string(lineno) + ": bad number '" + f[c] + "'");
      r.values[static_cast<std::size_t>(col_of[c])] = v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

CombinedTable combine_runs(const std::vector<std::filesystem::path>& dirs) {
  if (dirs.empty()) invalid("report: no run directories given");
  CombinedTable t;
  std::map<std::string, int> seen;
  for (const auto& dir : dirs) {
    const auto file = dir / kTableFile;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      t.warnings.push_back("skipping " + dir.string() + ": no " + kTableFile);
      continue;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    std::vector<TableRow> rows;
    try {
      rows = parse_table(ss.str(), dir.filename().string());
    } catch (const Error& e) {
      t.warnings.push_back("skipping " + dir.string() + ": " + e.what());
      continue;
    }
    for (auto& r : rows) {
      const int k = ++seen[r.group];
      if (k > 1) r.group += "#" + std::to_string(k);
      t.rows.push_back(std::move(r));
    }
  }
  if (t.rows.empty()) invalid("report: no readable run directories");
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const TableRow& a, const TableRow& b) { return a.group < b.group; });
  return t;
}

std::string CombinedTable::to_csv() const {
  std::ostringstream os;
  os << "group,run";
  for (const auto& c : kTableColumns) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << r.group << ',' << r.run;
    for (const auto& v : r.values) os << ',' << (v ? format_number(*v) : "NA");
    os << '\n';
  }
  return os.str();
}

std::string CombinedTable::to_markdown() const {
  std::ostringstream os;
  os << "| group | run |";
  for (const auto& c : kTableColumns) os << ' ' << c << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < kTableColumns.size(); ++i) os << "---:|";
  os << '\n';
  for (const auto& r : rows) {
    os << "| " << r.group << " | " << r.run << " |";
    for (const auto& v : r.values) os << ' ' << (v ? format_number(*v) : "-") << " |";
    os << '\n';
  }
  if (!warnings.empty()) {
    os << '\n';
    for (const auto& w : warnings) os << "- " << w << '\n';
  }
  return os.str();
}

std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  double ymin = INFINITY, ymax = -INFINITY;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](std::size_t i) { return L + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto py = [&](double v) { return T + ph * (1.0 - (v - ymin) / (ymax - ymin)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  os << "<text x=\"" << L << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">1</text>\n";
  os << "<text x=\"" << L + pw << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << n << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape_xml(xlabel) << "</text>\n";
  os << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2 << ")\">"
     << escape_xml(ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].y.size(); ++i)
      if (std::isfinite(series[s].y[i])) os << fmt(px(i), 6) << ',' << fmt(py(series[s].y[i]), 6) << ' ';
    os << "\"/>\n";
    const double ly = T + 14.0 + 18.0 * static_cast<double>(s);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 36 << "\" y=\"" << ly << "\">" << escape_xml(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap_svg(const std::string& title, const Matrix& values, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels) {
  const auto rows = values.rows(), cols = values.cols();
  const double cell = std::max(12.0, std::min(40.0, 480.0 / static_cast<double>(std::max<Eigen::Index>({rows, cols, 1}))));
  const double L = 90, T = 50;
  const double W = L + cell * static_cast<double>(cols) + 20, H = T + cell * static_cast<double>(rows) + 40;
  double lo = INFINITY, hi = -INFINITY;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (std::isfinite(values.data()[i])) {
      lo = std::min(lo, values.data()[i]);
      hi = std::max(hi, values.data()[i]);
    }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi == lo) hi = lo + 1;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title) << "</text>\n";
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = values(i, j);
      std::string fill = "#cccccc";
      if (std::isfinite(v)) {
        const double t = (v - lo) / (hi - lo);
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t), static_cast<int>(80 + 100 * (1 - std::abs(2 * t - 1))),
                      static_cast<int>(255 * (1 - t)));
        fill = buf;
      }
      os << "<rect x=\"" << L + cell * static_cast<double>(j) << "\" y=\"" << T + cell * static_cast<double>(i) << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"" << fill << "\"><title>" << fmt(v) << "</title></rect>\n";
    }
    const std::string label = i < static_cast<Eigen::Index>(row_labels.size()) ? row_labels[static_cast<std::size_t>(i)] : std::to_string(i + 1);
    os << "<text x=\"" << L - 6 << "\" y=\"" << T + cell * (static_cast<double>(i) + 0.65) << "\" text-anchor=\"end\">" << escape_xml(label) << "</text>\n";
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const std::string label = j < static_cast<Eigen::Index>(col_labels.size()) ? col_labels[static_cast<std::size_t>(j)] : std::to_string(j + 1);
    os << "<text x=\"" << L + cell * (static_cast<double>(j) + 0.5) << "\" y=\"" << T - 6 << "\" text-anchor=\"middle\">" << escape_xml(label)
       << "</text>\n";
  }
  os << "<text x=\"" << L << "\" y=\"" << H - 14 << "\">min " << fmt(lo) << ", max " << fmt(hi) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace msma
