#include "io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cma::cli {

namespace {

[[noreturn]] void parse_error(std::size_t line, const std::string& msg) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + msg);
}

[[noreturn]] void config_error(const std::string& key, const std::string& msg) {
    throw Error(ErrorKind::ConfigError, "config key '" + key + "': " + msg);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// Column positions for the required names; extra columns are rejected so a
// misspelt header cannot be silently ignored.
std::vector<std::size_t> locate_columns(const CsvRecord& header, const std::vector<std::string>& names) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.fields.size(); ++i) {
        const std::string name = trim(header.fields[i]);
        if (!pos.emplace(name, i).second) parse_error(header.line, "duplicate column '" + name + "'");
    }
    std::vector<std::size_t> out;
    for (const auto& n : names) {
        const auto it = pos.find(n);
        if (it == pos.end()) parse_error(header.line, "missing column '" + n + "'");
        out.push_back(it->second);
    }
    if (pos.size() != names.size()) {
        std::string expected;
        for (const auto& n : names) expected += (expected.empty() ? "" : ",") + n;
        parse_error(header.line, "unexpected columns; the header must be " + expected);
    }
    return out;
}

std::vector<CsvRecord> records_with_header(std::istream& in, Warnings& w, const std::vector<std::string>& names,
                                           std::vector<std::size_t>& cols) {
    std::vector<CsvRecord> recs = read_csv_records(in, w);
    if (recs.empty()) throw Error(ErrorKind::ParseError, "line 1: empty file (a header row is required)");
    cols = locate_columns(recs.front(), names);
    recs.erase(recs.begin());
    for (const auto& r : recs) {
        if (r.fields.size() != names.size()) {
            parse_error(r.line, "expected " + std::to_string(names.size()) + " fields, found " +
                                    std::to_string(r.fields.size()));
        }
    }
    if (recs.empty()) throw Error(ErrorKind::ParseError, "no data rows after the header");
    return recs;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for reading");
    return in;
}

double get_number(const nlohmann::json& j, const std::string& key) {
    if (!j.is_number()) config_error(key, "expected a number");
    return j.get<double>();
}

std::int64_t get_integer(const nlohmann::json& j, const std::string& key) {
    if (!j.is_number_integer()) config_error(key, "expected an integer");
    return j.get<std::int64_t>();
}

std::uint64_t get_seed(const nlohmann::json& j, const std::string& key) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    config_error(key, "expected a non-negative integer");
}

CoefficientVariances get_variances(const nlohmann::json& j, const std::string& key) {
    if (j.is_number()) {
        const double v = j.get<double>();
        return {v, v, v};
    }
    if (!j.is_object()) config_error(key, "expected a number or an object with keys a, b, c");
    CoefficientVariances out;
    for (const auto& [k, v] : j.items()) {
        const std::string full = key + "." + k;
        if (k == "a") out.a = get_number(v, full);
        else if (k == "b") out.b = get_number(v, full);
        else if (k == "c") out.c = get_number(v, full);
        else config_error(full, "unknown key");
    }
    return out;
}

// Validation messages start with the offending field name.
template <class Cfg>
void validate_config(const Cfg& cfg) {
    try {
        validate(cfg);
    } catch (const Error& e) {
        std::string msg = e.what();
        const std::string prefix = std::string(to_string(e.kind())) + ": ";
        if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
        const auto colon = msg.find(':');
        if (colon == std::string::npos) throw Error(ErrorKind::ConfigError, msg);
        config_error(msg.substr(0, colon), trim(msg.substr(colon + 1)));
    }
}

}  // namespace

std::vector<CsvRecord> read_csv_records(std::istream& in, Warnings& warnings) {
    std::vector<CsvRecord> out;
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t i = 0;
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;

    std::size_t line = 1;
    while (i < text.size()) {
        CsvRecord rec;
        rec.line = line;
        std::string field;
        bool quoted_field = false;
        bool end_of_record = false;
        while (!end_of_record) {
            if (i >= text.size()) {
                end_of_record = true;
                break;
            }
            const char ch = text[i];
            if (ch == '"' && field.empty() && !quoted_field) {
                quoted_field = true;
                ++i;
                while (true) {
                    if (i >= text.size()) parse_error(rec.line, "unterminated quoted field");
                    if (text[i] == '"') {
                        if (i + 1 < text.size() && text[i + 1] == '"') {
                            field += '"';
                            i += 2;
                            continue;
                        }
                        ++i;
                        break;
                    }
                    if (text[i] == '\n') ++line;
                    field += text[i++];
                }
                if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                    parse_error(line, "unexpected character after a closing quote");
                }
                continue;
            }
            if (ch == ',') {
                rec.fields.push_back(std::move(field));
                field.clear();
                quoted_field = false;
                ++i;
            } else if (ch == '\r' || ch == '\n') {
                if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
                ++i;
                ++line;
                end_of_record = true;
            } else {
                if (quoted_field) parse_error(line, "unexpected character after a closing quote");
                if (ch == '"') parse_error(line, "quote inside an unquoted field");
                field += ch;
                ++i;
            }
        }
        const bool blank = rec.fields.empty() && field.empty() && !quoted_field;
        if (blank) {
            warnings.push_back("line " + std::to_string(rec.line) + ": blank line skipped");
            continue;
        }
        rec.fields.push_back(std::move(field));
        out.push_back(std::move(rec));
    }
    return out;
}

double parse_number(const std::string& field, std::size_t line, const std::string& column) {
    const std::string s = trim(field);
    if (s.empty()) parse_error(line, "empty value in column '" + column + "'");
    const char* first = s.data();
    if (*first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        parse_error(line, "column '" + column + "': '" + s + "' is not a finite number");
    }
    return v;
}

SingleInput read_single_csv(std::istream& in) {
    SingleInput out;
    std::vector<std::size_t> col;
    const auto recs = records_with_header(in, out.warnings, {"z", "m", "r"}, col);
    const auto n = static_cast<Eigen::Index>(recs.size());
    out.series.z.resize(n);
    out.series.m.resize(n);
    out.series.r.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const auto& r = recs[static_cast<std::size_t>(t)];
        out.series.z[t] = parse_number(r.fields[col[0]], r.line, "z");
        out.series.m[t] = parse_number(r.fields[col[1]], r.line, "m");
        out.series.r[t] = parse_number(r.fields[col[2]], r.line, "r");
        if (out.series.z[t] != 0.0 && out.series.z[t] != 1.0) parse_error(r.line, "column 'z' must be 0 or 1");
    }
    validate_series(out.series);
    return out;
}

SingleInput read_single_csv_file(const std::string& path) {
    auto in = open_input(path);
    return read_single_csv(in);
}

MultilevelInput read_multilevel_csv(std::istream& in) {
    MultilevelInput out;
    std::vector<std::size_t> col;
    const auto recs = records_with_header(in, out.warnings, {"subject", "session", "z", "m", "r"}, col);

    std::map<std::string, int> subject_id;
    std::map<int, std::map<std::string, int>> session_id;
    std::map<SessionKey, std::array<std::vector<double>, 3>> cols;
    for (const auto& r : recs) {
        const std::string subj = trim(r.fields[col[0]]);
        const std::string sess = trim(r.fields[col[1]]);
        if (subj.empty()) parse_error(r.line, "empty subject label");
        if (sess.empty()) parse_error(r.line, "empty session label");
        auto [sit, snew] = subject_id.emplace(subj, static_cast<int>(subject_id.size()) + 1);
        if (snew) out.labels.subjects.push_back(subj);
        auto& sess_map = session_id[sit->second];
        auto [kit, knew] = sess_map.emplace(sess, static_cast<int>(sess_map.size()) + 1);
        if (knew) out.labels.sessions[sit->second].push_back(sess);

        const double z = parse_number(r.fields[col[2]], r.line, "z");
        if (z != 0.0 && z != 1.0) parse_error(r.line, "column 'z' must be 0 or 1");
        auto& c = cols[SessionKey{sit->second, kit->second}];
        c[0].push_back(z);
        c[1].push_back(parse_number(r.fields[col[3]], r.line, "m"));
        c[2].push_back(parse_number(r.fields[col[4]], r.line, "r"));
    }
    for (auto& [key, c] : cols) {
        TrialSeries s;
        s.z = Eigen::Map<const Eigen::VectorXd>(c[0].data(), static_cast<Eigen::Index>(c[0].size()));
        s.m = Eigen::Map<const Eigen::VectorXd>(c[1].data(), static_cast<Eigen::Index>(c[1].size()));
        s.r = Eigen::Map<const Eigen::VectorXd>(c[2].data(), static_cast<Eigen::Index>(c[2].size()));
        out.data.sessions.emplace(key, std::move(s));
    }
    try {
        validate_dataset(out.data);
    } catch (const Error& e) {
        // Name the session by its labels as well as its dense id.
        std::string msg = e.what();
        for (const auto& [key, s] : out.data.sessions) {
            const std::string id = to_string(key);
            if (msg.find(id) != std::string::npos) {
                msg += " (subject '" + out.labels.subjects[static_cast<std::size_t>(key.subject - 1)] +
                       "', session '" + out.labels.sessions[key.subject][static_cast<std::size_t>(key.session - 1)] +
                       "')";
                break;
            }
        }
        throw Error(e.kind(), msg);
    }
    return out;
}

MultilevelInput read_multilevel_csv_file(const std::string& path) {
    auto in = open_input(path);
    return read_multilevel_csv(in);
}

std::string format_number(double x) {
    if (std::isnan(x)) return {};
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (const char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << csv_escape(fields[i]);
    }
    out << "\r\n";
}

void write_single_csv(std::ostream& out, const TrialSeries& s) {
    write_csv_row(out, {"z", "m", "r"});
    for (Eigen::Index t = 0; t < s.z.size(); ++t) {
        write_csv_row(out, {format_number(s.z[t]), format_number(s.m[t]), format_number(s.r[t])});
    }
}

void write_multilevel_csv(std::ostream& out, const MultilevelDataset& data) {
    write_csv_row(out, {"subject", "session", "z", "m", "r"});
    for (const auto& [key, s] : data.sessions) {
        const std::string subj = std::to_string(key.subject);
        const std::string sess = std::to_string(key.session);
        for (Eigen::Index t = 0; t < s.z.size(); ++t) {
            write_csv_row(out, {subj, sess, format_number(s.z[t]), format_number(s.m[t]), format_number(s.r[t])});
        }
    }
}

std::string read_file(const std::string& path) {
    auto in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
    out << contents;
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "write to '" + path + "' failed");
}

ParsedConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
    if (!j.contains("design")) config_error("design", "required (\"single\" or \"multilevel\")");
    const auto& d = j.at("design");
    if (!d.is_string()) config_error("design", "expected a string");
    const std::string kind = d.get<std::string>();
    ParsedConfig out;

    if (kind == "single") {
        SingleLevelConfig cfg;
        for (const auto& [k, v] : j.items()) {
            if (k == "design") continue;
            if (k == "n") {
                const auto n = get_integer(v, k);
                if (n < 0) config_error(k, "must be non-negative");
                cfg.n = static_cast<std::size_t>(n);
            } else if (k == "a") cfg.a = get_number(v, k);
            else if (k == "b") cfg.b = get_number(v, k);
            else if (k == "c") cfg.c = get_number(v, k);
            else if (k == "sigma1") cfg.sigma1 = get_number(v, k);
            else if (k == "sigma2") cfg.sigma2 = get_number(v, k);
            else if (k == "delta") cfg.delta = get_number(v, k);
            else if (k == "p_treat") cfg.p_treat = get_number(v, k);
            else if (k == "u_sd") cfg.u_sd = get_number(v, k);
            else if (k == "g") cfg.g = get_number(v, k);
            else if (k == "confounder_mode") {
                if (!v.is_boolean()) config_error(k, "expected true or false");
                cfg.confounder_mode = v.get<bool>();
            } else if (k == "seed") {
                cfg.seed = get_seed(v, k);
                out.seed_given = true;
            } else config_error(k, "unknown key for a single-level design");
        }
        validate_config(cfg);
        out.design = cfg;
    } else if (kind == "multilevel") {
        MultilevelConfig cfg;
        for (const auto& [k, v] : j.items()) {
            if (k == "design") continue;
            if (k == "n_subjects") cfg.n_subjects = static_cast<int>(get_integer(v, k));
            else if (k == "n_sessions") cfg.n_sessions = static_cast<int>(get_integer(v, k));
            else if (k == "trial_mean") cfg.trial_mean = get_number(v, k);
            else if (k == "a") cfg.a = get_number(v, k);
            else if (k == "b") cfg.b = get_number(v, k);
            else if (k == "c") cfg.c = get_number(v, k);
            else if (k == "psi_diag") cfg.psi_diag = get_variances(v, k);
            else if (k == "lambda_diag") cfg.lambda_diag = get_variances(v, k);
            else if (k == "sigma1") cfg.sigma1 = get_number(v, k);
            else if (k == "sigma2") cfg.sigma2 = get_number(v, k);
            else if (k == "delta") cfg.delta = get_number(v, k);
            else if (k == "p_treat") cfg.p_treat = get_number(v, k);
            else if (k == "seed") {
                cfg.seed = get_seed(v, k);
                out.seed_given = true;
            } else config_error(k, "unknown key for a multilevel design");
        }
        validate_config(cfg);
        out.design = cfg;
    } else {
        config_error("design", "expected \"single\" or \"multilevel\", got \"" + kind + "\"");
    }
    return out;
}

ParsedConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

nlohmann::json config_to_json(const Design& design) {
    nlohmann::json j;
    if (const auto* s = std::get_if<SingleLevelConfig>(&design)) {
        j = {{"design", "single"}, {"n", s->n},           {"a", s->a},
             {"b", s->b},          {"c", s->c},           {"sigma1", s->sigma1},
             {"sigma2", s->sigma2}, {"delta", s->delta},   {"p_treat", s->p_treat},
             {"seed", s->seed},    {"confounder_mode", s->confounder_mode},
             {"u_sd", s->u_sd},    {"g", s->g}};
    } else {
        const auto& m = std::get<MultilevelConfig>(design);
        auto var = [](const CoefficientVariances& v) { return nlohmann::json{{"a", v.a}, {"b", v.b}, {"c", v.c}}; };
        j = {{"design", "multilevel"},
             {"n_subjects", m.n_subjects},
             {"n_sessions", m.n_sessions},
             {"trial_mean", m.trial_mean},
             {"a", m.a},
             {"b", m.b},
             {"c", m.c},
             {"psi_diag", var(m.psi_diag)},
             {"lambda_diag", var(m.lambda_diag)},
             {"sigma1", m.sigma1},
             {"sigma2", m.sigma2},
             {"delta", m.delta},
             {"p_treat", m.p_treat},
             {"seed", m.seed}};
    }
    return j;
}

}  // namespace cma::cli
