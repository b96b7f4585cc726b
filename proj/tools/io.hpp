#pragma once

#include "cma/core.hpp"
#include "cma/simulate.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace cma::cli {

/// Non-fatal observations made while reading a file (skipped blank lines and
/// the like). A clean file produces none.
using Warnings = std::vector<std::string>;

/// One parsed CSV record; `line` is the 1-based physical line it started on.
struct CsvRecord {
    std::vector<std::string> fields;
    std::size_t line = 0;
};

/// RFC-4180 reader: quoted fields, doubled quotes, embedded separators and
/// line breaks, CRLF or LF endings, optional UTF-8 byte-order mark.
/// Blank lines are skipped with a warning. Throws ParseError with the line.
std::vector<CsvRecord> read_csv_records(std::istream& in, Warnings& warnings);

/// Strict decimal or scientific floating-point literal; surrounding blanks
/// are allowed. Throws ParseError naming the line and column.
double parse_number(const std::string& field, std::size_t line, const std::string& column);

struct SingleInput {
    TrialSeries series;
    Warnings warnings;
};

/// Header `z,m,r` (any column order, names case-sensitive).
SingleInput read_single_csv(std::istream& in);
SingleInput read_single_csv_file(const std::string& path);

/// Dense 1-based ids assigned to the labels found in the file.
struct LabelMap {
    std::vector<std::string> subjects;                         // subject id - 1 -> label
    std::map<int, std::vector<std::string>> sessions;          // subject id -> (session id - 1 -> label)
};

struct MultilevelInput {
    MultilevelDataset data;
    LabelMap labels;
    Warnings warnings;
};

/// Header `subject,session,z,m,r`. Subject and session labels are arbitrary
/// strings; subjects are numbered in order of first appearance and each
/// subject's sessions likewise. Trials of a session need not be contiguous.
MultilevelInput read_multilevel_csv(std::istream& in);
MultilevelInput read_multilevel_csv_file(const std::string& path);

/// Shortest text that reads back to the same double; NaN prints as an
/// empty field.
std::string format_number(double x);

/// Quotes a field when it holds a separator, quote or line break.
std::string csv_escape(const std::string& field);

/// Writes one CRLF-terminated record.
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

void write_single_csv(std::ostream& out, const TrialSeries& series);
void write_multilevel_csv(std::ostream& out, const MultilevelDataset& data);

/// Reads a whole file; IoError when it cannot be opened.
std::string read_file(const std::string& path);
/// Writes (truncating) a whole file; IoError on failure.
void write_file(const std::string& path, const std::string& contents);

// ---------------------------------------------------------------------------
// Simulation configs
// ---------------------------------------------------------------------------

/// {"design": "single" | "multilevel", <field>: <value>, ...}. Field names
/// are those of SingleLevelConfig / MultilevelConfig; psi_diag and
/// lambda_diag are objects {"a", "b", "c"} or a single number for all three.
/// Unknown keys, wrong types and failed validation throw ConfigError naming
/// the key. `seed_given` reports whether the config set a seed.
struct ParsedConfig {
    Design design;
    bool seed_given = false;
};

ParsedConfig parse_config(const nlohmann::json& j);
ParsedConfig parse_config_text(const std::string& text);

nlohmann::json config_to_json(const Design& design);

}  // namespace cma::cli
