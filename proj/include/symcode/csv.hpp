#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "symcode/error.hpp"

namespace symcode::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: quoted fields may contain commas, doubled quotes and
/// line breaks. Both LF and CRLF record terminators are accepted.
inline std::vector<Row> parse(std::string_view data) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row.front().empty())) rows.push_back(std::move(row));
    row.clear();
  };

  for (size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started || field.empty()) {
          in_quotes = true;
          field_started = true;
        } else {
          field.push_back(c);
        }
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < data.size() && data[i + 1] == '\n') ++i;
        end_row();
        break;
      case '\n':
        end_row();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw Error(Errc::parse, "unterminated quoted field at end of input");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

/// A parsed table with a header row and column lookup by name.
class Table {
 public:
  explicit Table(std::vector<Row> rows) {
    if (rows.empty()) throw Error(Errc::schema, "table has no header row");
    header_ = std::move(rows.front());
    for (size_t i = 0; i < header_.size(); ++i) {
      std::string name = header_[i];
      // Strip a UTF-8 byte order mark on the first column.
      if (i == 0 && name.rfind("\xEF\xBB\xBF", 0) == 0) name.erase(0, 3);
      header_[i] = name;
      index_.emplace(name, i);
    }
    rows_.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
  }

  static Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return Table(parse(buf.str()));
  }

  const Row& header() const { return header_; }
  const std::vector<Row>& rows() const { return rows_; }

  bool has_column(const std::string& name) const { return index_.count(name) != 0; }

  size_t column(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(Errc::schema, "missing required column " + name);
    return it->second;
  }

  /// Cell or empty string when the row is short.
  static std::string_view cell(const Row& row, size_t col) {
    return col < row.size() ? std::string_view(row[col]) : std::string_view();
  }

 private:
  Row header_;
  std::vector<Row> rows_;
  std::map<std::string, size_t> index_;
};

}  // namespace symcode::csv
