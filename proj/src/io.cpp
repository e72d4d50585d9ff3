#include "nbe/io.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include "nbe/error.hpp"

namespace nbe {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void bad(int line, const std::string& what) {
  fail(ErrorKind::Format, "line " + std::to_string(line) + ": " + what);
}

std::size_t index_of(const std::string& s, int line, const char* col) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    bad(line, std::string(col) + " must be a non-negative integer, got '" + s + "'");
  return v;
}

// NaN for NA.
double value_of(const std::string& s, int line) {
  if (s == "NA" || s == "na" || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    bad(line, "value must be a number or NA, got '" + s + "'");
  if (!std::isfinite(v)) bad(line, "value must be finite");
  return v;
}

struct Cell {
  double value;
  bool observed;
};

// Reads `key0,key1,...` records into a dense [n0, n1] table.
IncompleteField read_table(std::istream& in, const std::vector<std::string>& header,
                           bool has_observed_column) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (fields_of(line) != std::vector<std::string>{""}) break;
  }
  if (fields_of(line) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    bad(lineno, "expected header '" + want + "'");
  }
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;
  std::size_t n0 = 0, n1 = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = fields_of(line);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != header.size())
      bad(lineno, "expected " + std::to_string(header.size()) + " columns, got " +
                      std::to_string(f.size()));
    const std::size_t a = index_of(f[0], lineno, header[0].c_str());
    const std::size_t b = index_of(f[1], lineno, header[1].c_str());
    const double v = value_of(f[2], lineno);
    bool obs = !std::isnan(v);
    if (has_observed_column) {
      if (f[3] != "0" && f[3] != "1") bad(lineno, "observed must be 0 or 1, got '" + f[3] + "'");
      obs = f[3] == "1";
      if (obs && std::isnan(v)) bad(lineno, "observed cell has value NA");
    }
    if (!cells.emplace(std::make_pair(a, b), Cell{v, obs}).second)
      bad(lineno, "duplicate entry (" + f[0] + ", " + f[1] + ")");
    n0 = std::max(n0, a + 1);
    n1 = std::max(n1, b + 1);
  }
  if (cells.empty()) fail(ErrorKind::Format, "no data rows");
  if (cells.size() != n0 * n1)
    fail(ErrorKind::Format, "incomplete table: " + std::to_string(cells.size()) + " entries for a " +
                                std::to_string(n0) + " x " + std::to_string(n1) + " layout");
  IncompleteField f;
  f.values = Tensor({n0, n1});
  f.observed.assign(n0 * n1, 0);
  for (const auto& [key, cell] : cells) {
    const std::size_t i = key.first * n1 + key.second;
    f.observed[i] = cell.observed ? 1 : 0;
    f.values[i] = cell.observed ? cell.value : f.fill;
  }
  return f;
}

}  // namespace

void write_grid_csv(std::ostream& out, const IncompleteField& field) {
  field.validate();
  require(field.values.rank() == 2, ErrorKind::ShapeMismatch, "grid CSV needs a 2-D field");
  const std::size_t h = field.values.dim(0), w = field.values.dim(1);
  out << "row,col,value,observed\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      out << r << ',' << c << ',' << (field.observed[i] ? fmt(field.values[i]) : "NA") << ','
          << int(field.observed[i]) << '\n';
    }
  }
}

IncompleteField read_grid_csv(std::istream& in) {
  return read_table(in, {"row", "col", "value", "observed"}, true);
}

void write_rows_csv(std::ostream& out, const IncompleteField& field) {
  field.validate();
  require(field.values.rank() == 2, ErrorKind::ShapeMismatch, "row CSV needs a [T, d] field");
  const std::size_t t = field.values.dim(0), d = field.values.dim(1);
  out << "replicate,component,value\n";
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      out << r << ',' << c << ',' << (field.observed[i] ? fmt(field.values[i]) : "NA") << '\n';
    }
  }
}

IncompleteField read_rows_csv(std::istream& in) {
  return read_table(in, {"replicate", "component", "value"}, false);
}

void write_field_file(const DataModel& model, const IncompleteField& field,
                      const std::string& path) {
  std::ofstream out(path);
  require(bool(out), ErrorKind::InvalidArgument, "cannot write '" + path + "'");
  if (model.iid_rows())
    write_rows_csv(out, field);
  else
    write_grid_csv(out, field);
  require(bool(out), ErrorKind::InvalidArgument, "write to '" + path + "' failed");
}

IncompleteField read_field_file(const DataModel& model, const std::string& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::InvalidArgument, "cannot read '" + path + "'");
  IncompleteField f;
  try {
    f = model.iid_rows() ? read_rows_csv(in) : read_grid_csv(in);
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
  const Shape want = model.field_shape();
  require(f.values.shape() == want, ErrorKind::ShapeMismatch,
          path + ": data is " + shape_str(f.values.shape()) + ", model expects " +
              shape_str(want));
  return f;
}

}  // namespace nbe
