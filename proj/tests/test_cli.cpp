#include "commands.hpp"
#include "io.hpp"
#include "reference.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace cma;
using namespace cma::cli;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_text(const std::function<void()>& f, ErrorKind expected) {
    try {
        f();
    } catch (const Error& e) {
        CHECK(e.kind() == expected);
        return e.what();
    }
    FAIL("no error thrown");
    return {};
}

SingleInput single_from(const std::string& text) {
    std::istringstream in(text);
    return read_single_csv(in);
}

MultilevelInput multi_from(const std::string& text) {
    std::istringstream in(text);
    return read_multilevel_csv(in);
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("cma_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_tool(const std::string& args) {
    const std::string cmd = std::string(CMA_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kHandCsv = "z,m,r\n1,1,1\n0,-1,-1\n1,-1,-1\n0,1,1\n";

}  // namespace

TEST_CASE("single-session CSV parsing") {
    const auto in = single_from(kHandCsv);
    CHECK(in.series.n() == 4);
    CHECK(in.warnings.empty());
    const auto reordered = single_from("r,z,m\r\n1,1,1\r\n-1,0,-1\r\n-1,1,-1\r\n1,0,1\r\n");
    CHECK(reordered.series.z == in.series.z);
    const auto bom = single_from("\xEF\xBB\xBFz,m,r\n1,\"1\",1e0\n0,-1,-1\n\n1,-1,-1\n0,1,+1\n");
    CHECK(bom.series.r == in.series.r);
    CHECK(bom.warnings.size() == 1);

    CHECK_THAT(error_text([] { single_from("z,m,r\n1,1,1\n0,x,1\n1,2,3\n0,1,1\n"); }, ErrorKind::ParseError),
               ContainsSubstring("line 3") && ContainsSubstring("m"));
    CHECK_THAT(error_text([] { single_from("z,m\n1,1\n"); }, ErrorKind::ParseError), ContainsSubstring("r"));
    CHECK_THAT(error_text([] { single_from("z,m,r\n1,1,1\n0,1\n"); }, ErrorKind::ParseError), ContainsSubstring("line 3"));
    CHECK_THAT(error_text([] { single_from("z,m,r\n2,1,1\n0,1,1\n1,1,1\n0,1,1\n"); }, ErrorKind::ParseError),
               ContainsSubstring("line 2"));
    error_text([] { single_from("z,m,r,extra\n1,1,1,1\n"); }, ErrorKind::ParseError);
    error_text([] { single_from("z,m,r\n1,1,\"1\n"); }, ErrorKind::ParseError);
    error_text([] { single_from("z,m,r\n1,1,1\n1,2,2\n1,3,3\n1,4,4\n"); }, ErrorKind::DegenerateTreatment);
}

TEST_CASE("multilevel CSV parsing with labels") {
    const std::string text =
        "subject,session,z,m,r\n"
        "s9,\"run, b\",1,1,1\ns9,\"run, b\",0,2,1\ns9,\"run, b\",1,3,0\ns9,\"run, b\",0,4,2\n"
        "a1,x,1,1,1\na1,x,0,2,1\n"
        "s9,first,1,1,1\ns9,first,0,2,1\ns9,first,1,3,0\ns9,first,0,4,2\n"
        "a1,x,1,3,0\na1,x,0,4,2\n";
    const auto in = multi_from(text);
    CHECK(in.data.n_subjects() == 2);
    CHECK(in.labels.subjects == std::vector<std::string>{"s9", "a1"});
    CHECK(in.labels.sessions.at(1) == std::vector<std::string>{"run, b", "first"});
    CHECK(in.data.sessions.at({2, 1}).n() == 4);
    CHECK(in.warnings.empty());
    const auto msg = error_text(
        [] { multi_from("subject,session,z,m,r\np,q,1,1,1\np,q,1,2,2\np,q,1,3,3\np,q,1,4,4\nw,e,1,1,1\nw,e,0,1,1\nw,e,1,1,1\nw,e,0,2,2\n"); },
        ErrorKind::DegenerateTreatment);
    CHECK_THAT(msg, ContainsSubstring("p") && ContainsSubstring("q"));
}

TEST_CASE("numbers round-trip through the writers") {
    for (double x : {0.1, -5.0019999999999998, 1e-300, 123456789.125, 0.0}) {
        CHECK(parse_number(format_number(x), 1, "x") == x);
    }
    CHECK(format_number(-5.002) == "-5.002");
    CHECK(format_number(NAN).empty());
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("plain") == "plain");
    std::ostringstream out;
    write_csv_row(out, {"a", "b,c"});
    CHECK(out.str() == "a,\"b,c\"\r\n");
}

TEST_CASE("writers and readers round-trip datasets") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.n_subjects = 3;
    cfg.n_sessions = 2;
    cfg.trial_mean = 20;
    const auto data = gen_multilevel(cfg);
    std::ostringstream out;
    write_multilevel_csv(out, data);
    const auto back = multi_from(out.str());
    CHECK(back.warnings.empty());
    for (const auto& [k, s] : data.sessions) {
        CHECK(back.data.sessions.at(k).m == s.m);
        CHECK(back.data.sessions.at(k).r == s.r);
    }
}

TEST_CASE("config errors name the key") {
    CHECK_THAT(error_text([] { parse_config_text(R"({"design":"single","n":100,"bogus":1})"); }, ErrorKind::ConfigError),
               ContainsSubstring("bogus"));
    CHECK_THAT(error_text([] { parse_config_text(R"({"design":"single","delta":1.5})"); }, ErrorKind::ConfigError),
               ContainsSubstring("'delta'"));
    CHECK_THAT(error_text([] { parse_config_text(R"({"design":"multilevel","n_subjects":"ten"})"); }, ErrorKind::ConfigError),
               ContainsSubstring("n_subjects"));
    CHECK_THAT(error_text([] { parse_config_text(R"({"design":"multilevel","psi_diag":{"a":-1,"b":0,"c":0}})"); },
                          ErrorKind::ConfigError),
               ContainsSubstring("psi_diag"));
    CHECK_THAT(error_text([] { parse_config_text(R"({"design":"triple"})"); }, ErrorKind::ConfigError),
               ContainsSubstring("design"));
    error_text([] { parse_config_text("{not json"); }, ErrorKind::ConfigError);

    const auto p = parse_config_text(R"({"design":"multilevel","psi_diag":0.25,"seed":9})");
    CHECK(p.seed_given);
    const auto& m = std::get<MultilevelConfig>(p.design);
    CHECK(m.psi_diag.b == 0.25);
    CHECK(m.seed == 9);
    const auto again = parse_config(config_to_json(p.design));
    CHECK(config_to_json(again.design) == config_to_json(p.design));
}

TEST_CASE("seeds, grids and exit codes") {
    ::unsetenv("CMA_SEED");
    CHECK(resolve_seed(std::nullopt) == kDefaultSeed);
    CHECK(resolve_seed(std::nullopt, 5) == 5);
    ::setenv("CMA_SEED", "77", 1);
    CHECK(resolve_seed(std::nullopt) == 77);
    CHECK(resolve_seed(std::nullopt, 5) == 5);
    CHECK(resolve_seed(3, 5) == 3);
    ::setenv("CMA_SEED", "x7", 1);
    CHECK_THROWS_AS(resolve_seed(std::nullopt), Error);
    ::unsetenv("CMA_SEED");

    CHECK(parse_grid("0:0.5:3") == std::vector<double>{0.0, 0.25, 0.5});
    CHECK_THROWS_AS(parse_grid("0:1:3"), Error);
    CHECK(parse_grid("0.2:0.2:1") == std::vector<double>{0.2});
    CHECK_THROWS_AS(parse_grid("0:1"), Error);
    CHECK_THROWS_AS(parse_grid("0:1:0"), Error);
    CHECK_THROWS_AS(parse_grid("-1:0.5:3"), Error);

    CHECK(exit_code(ErrorKind::ParseError) == 2);
    CHECK(exit_code(ErrorKind::MissingDelta) == 2);
    CHECK(exit_code(ErrorKind::SingularDesign) == 3);
    CHECK(exit_code(ErrorKind::ReplicateFailure) == 3);
    CHECK(exit_code(ErrorKind::IoError) == 4);
}

TEST_CASE("single-session report") {
    const auto r = fit_single_report(single_from(kHandCsv), 0.0, 0.95, 11);
    CHECK(r["coefficients"]["B"].get<double>() == 1.0);
    CHECK(r["coefficients"]["C"].get<double>() == 0.0);
    CHECK(r["coefficients"]["A"].get<double>() == 0.0);
    CHECK(r["seed"].get<std::uint64_t>() == 11);
    CHECK(json::parse(r.dump()) == r);
    CHECK(r["loglik"].is_null());
    CHECK(r["warnings"].size() == 1);

    auto cfg = table1_design(NullPattern::none, 0.5);
    cfg.seed = 8;
    SingleInput in{gen_single(cfg), {}};
    const auto s = fit_single_report(in, 0.5, 0.95, 1);
    for (const auto& iv : s["intervals"]) {
        const std::string name = iv["name"];
        const double truth = design_truth(cfg).at(name);
        CHECK(std::abs(iv["estimate"].get<double>() - truth) < 3.0 * iv["se"].get<double>());
    }
}

TEST_CASE("multilevel reports") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.n_subjects = 10;
    cfg.n_sessions = 3;
    cfg.trial_mean = 50;
    cfg.seed = 17;
    MultilevelInput in{gen_multilevel(cfg), {}, {}};
    auto effect = [](const json& r, const std::string& name) {
        for (const auto& e : r["effects"])
            if (e["name"] == name) return e;
        FAIL("missing effect " << name);
        return json{};
    };

    MultilevelRequest ts{Method::ts, 0.0};
    const auto r = fit_multilevel_report(in, ts, 1);
    const auto kkb = cma_ts(in.data, 0.0);
    CHECK(effect(r, "B")["estimate"].get<double>() == kkb.fixed[kB]);
    CHECK(effect(r, "C")["estimate"].get<double>() == kkb.fixed[kC]);
    CHECK(effect(r, "C_total")["estimate"].get<double>() == kkb.c_total);

    const auto h = fit_multilevel_report(in, {Method::h, std::nullopt}, 1);
    const auto hts = fit_multilevel_report(in, {Method::h_ts, std::nullopt}, 1);
    CHECK(h["delta_hat"] == hts["delta_hat"]);
    const double d = h["delta_hat"];
    CHECK(std::abs(d) < 1.0);
    CHECK(h["seed"] == 1);

    MultilevelRequest boot{Method::ts, 0.5, 0.9, 30};
    const auto b = fit_multilevel_report(in, boot, 5);
    CHECK(effect(b, "B")["ci_method"] == "wild_bc");
    CHECK(effect(b, "B")["ci_lower"].get<double>() <= effect(b, "B")["ci_upper"].get<double>());
    CHECK(fit_multilevel_report(in, boot, 5) == b);
    error_text([&] { fit_multilevel_report(in, {Method::ts, std::nullopt}, 1); }, ErrorKind::MissingDelta);
}

TEST_CASE("profiles") {
    const auto in = single_from(kHandCsv);
    auto cfg = table1_design(NullPattern::none, 0.5);
    cfg.seed = 4;
    const auto rows = profile_single(gen_single(cfg), parse_grid("-0.9:0.9:19"));
    REQUIRE(rows.size() == 19);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : rows) {
        lo = std::min(lo, r.objective);
        hi = std::max(hi, r.objective);
    }
    CHECK(hi - lo < 1e-6 * (1 + std::abs(hi)));
    CHECK(profile_single(gen_single(cfg), {0.3}).size() == 1);

    auto mc = table2_design(NullPattern::none, 0.5);
    mc.seed = 5;
    mc.n_subjects = 20;
    const auto data = gen_multilevel(mc);
    const auto curve = profile_multi(data, parse_grid("-0.8:0.8:9"), 1);
    REQUIRE(curve.size() == 9);
    double mlo = INFINITY, mhi = -INFINITY;
    for (const auto& r : curve) {
        mlo = std::min(mlo, r.objective);
        mhi = std::max(mhi, r.objective);
    }
    CHECK(mhi - mlo > 1e-3);
    CHECK(curve[4].objective == cma_h_inner(data, 0.0).h_value);
    const auto csv = profile_csv(curve, true);
    std::istringstream is(csv);
    Warnings w;
    const auto recs = read_csv_records(is, w);
    CHECK(recs.size() == 10);
    CHECK(recs[0].fields == std::vector<std::string>{"delta", "objective", "boundary"});
}

TEST_CASE("reproduce tables carry the published values") {
    ReproduceRequest req;
    req.target = ReproduceTarget::table1;
    req.reps = 3;
    const auto csv = reproduce_csv(req, 1);
    std::istringstream is(csv);
    Warnings w;
    const auto recs = read_csv_records(is, w);
    REQUIRE(recs.size() > 2);
    CHECK(recs[0].fields[0] == "block");
    CHECK(csv.find("-5.002") != std::string::npos);
    CHECK(reproduce_csv(req, 1) == csv);
    CHECK(reproduce_target_from_string("fig6") == ReproduceTarget::fig6);
    CHECK_THROWS_AS(reproduce_target_from_string("table9"), Error);
    const auto t3 = reference_table3();
    const auto* row = t3.find(NullPattern::none, 0.5, "CMA-h");
    REQUIRE(row != nullptr);
}

TEST_CASE("command-line tool end to end") {
    TempDir tmp;
    write_file(tmp.file("hand.csv"), kHandCsv);
    write_file(tmp.file("cfg.json"), R"({"design":"multilevel","n_subjects":6,"n_sessions":2,"trial_mean":30,"seed":4})");
    write_file(tmp.file("single.json"), R"({"design":"single","n":200})");

    CHECK(run_tool("fit-single --data " + tmp.file("hand.csv") + " --delta 0 --out " + tmp.file("r.json")) == 0);
    const auto report = json::parse(read_file(tmp.file("r.json")));
    CHECK(report["coefficients"]["B"] == 1.0);
    CHECK(report.contains("seed"));
    CHECK(fs::exists(tmp.file("r.json.manifest.json")));

    CHECK(run_tool("fit-single --data " + tmp.file("hand.csv") + " --delta 1.5 --out " + tmp.file("x.json")) == 2);
    CHECK_FALSE(fs::exists(tmp.file("x.json")));
    CHECK(run_tool("fit-single --data " + tmp.file("missing.csv") + " --delta 0") == 4);
    CHECK(run_tool("fit-multilevel --data " + tmp.file("hand.csv")) == 2);
    CHECK(run_tool("frobnicate") == 2);

    CHECK(run_tool("simulate --config " + tmp.file("cfg.json") + " --out " + tmp.file("a.csv")) == 0);
    CHECK(run_tool("simulate --config " + tmp.file("cfg.json") + " --out " + tmp.file("b.csv")) == 0);
    CHECK(read_file(tmp.file("a.csv")) == read_file(tmp.file("b.csv")));
    const auto manifest = json::parse(read_file(tmp.file("a.csv.manifest.json")));
    CHECK(manifest["seed"] == 4);
    CHECK(manifest["command"] == "simulate");

    const auto ingested = read_multilevel_csv_file(tmp.file("a.csv"));
    CHECK(ingested.warnings.empty());
    CHECK(ingested.data.sessions.size() == 12);
    CHECK(run_tool("fit-multilevel --data " + tmp.file("a.csv") + " --method ts --delta 0.3 --out " +
                   tmp.file("m.json")) == 0);
    const auto m = json::parse(read_file(tmp.file("m.json")));
    CHECK(m["warnings"].empty());
    CHECK(m["seed"] == kDefaultSeed);

    CHECK(run_tool("--seed 12 simulate --config " + tmp.file("single.json") + " --out " + tmp.file("s.csv")) == 0);
    CHECK(read_single_csv_file(tmp.file("s.csv")).warnings.empty());
    CHECK(run_tool("fit-single --data " + tmp.file("s.csv") + " --delta 0.5 --out " + tmp.file("s.json")) == 0);
    CHECK(run_tool("profile --data " + tmp.file("s.csv") + " --grid 0.1:0.1:1 --out " + tmp.file("p.csv")) == 0);
    std::istringstream pis(read_file(tmp.file("p.csv")));
    Warnings w;
    CHECK(read_csv_records(pis, w).size() == 2);

    write_file(tmp.file("bad.json"), R"({"design":"single","n":2})");
    CHECK(run_tool("simulate --config " + tmp.file("bad.json") + " --out " + tmp.file("z.csv")) == 2);

    // missing output directories are created
    CHECK(run_tool("--seed 3 reproduce table1 --reps 5 --out-dir " + tmp.file("out/nested")) == 0);
    CHECK(fs::exists(tmp.file("out/nested/table1.csv")));
}
