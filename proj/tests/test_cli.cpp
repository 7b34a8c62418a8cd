#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

namespace {

using nlohmann::json;

struct Workdir {
    std::string path;
    Workdir() {
        char tmpl[] = "/tmp/blstab_cli_XXXXXX";
        path = mkdtemp(tmpl);
    }
    std::string file(const std::string& name) const { return path + "/" + name; }
};

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(BLSTAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json model_block() {
    return json{{"model", "isentropic2d"},
                {"params",
                 {{"rho0", 1.0},
                  {"V", -0.2},
                  {"u_inf", 0.1},
                  {"mu", 0.2},
                  {"eta", 0.0},
                  {"a", 1.0},
                  {"gamma", 2.0}}}};
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("usage and config errors exit with 64") {
    Workdir wd;
    CHECK(run_cli("") == 64);
    CHECK(run_cli("check --config " + wd.file("missing.json") + " --out " + wd.path) ==
          64);
    write_text(wd.file("trunc.json"), "{\"model\": \"isentropic2d\", ");
    CHECK(run_cli("check --config " + wd.file("trunc.json") + " --out " + wd.path) ==
          64);
    // structurally valid json missing a required section
    write_text(wd.file("nofreq.json"), model_block().dump());
    CHECK(run_cli("evans-map --config " + wd.file("nofreq.json") + " --out " +
                  wd.path) == 64);
}

TEST_CASE("hypothesis check emits a schema-stamped report") {
    Workdir wd;
    write_text(wd.file("cfg.json"), model_block().dump());
    CHECK(run_cli("check --config " + wd.file("cfg.json") + " --out " + wd.path +
                  " --strict") == 0);
    json rep = json::parse(slurp(wd.file("check.json")));
    CHECK(rep["schema"] == 1);
    CHECK(rep["all_pass"] == true);
    CHECK(rep["case"] == "outflow");
    // byte-identical on repeated runs
    const std::string first = slurp(wd.file("check.json"));
    CHECK(run_cli("check --config " + wd.file("cfg.json") + " --out " + wd.path) == 0);
    CHECK(first == slurp(wd.file("check.json")));
}

TEST_CASE("profile artifacts carry the drag value") {
    Workdir wd;
    json cfg = model_block();
    cfg["profile"] = {{"mode", "explicit"}};
    write_text(wd.file("cfg.json"), cfg.dump());
    CHECK(run_cli("profile --config " + wd.file("cfg.json") + " --out " + wd.path) ==
          0);
    const std::string csv = slurp(wd.file("profile.csv"));
    CHECK(csv.rfind("# schema=1\n", 0) == 0);
    json rep = json::parse(slurp(wd.file("profile.json")));
    CHECK(std::abs(rep["drag"].get<double>() - 0.1 * 1.0 * 0.2) < 1e-14);
}

TEST_CASE("unreachable wall data exits with the audit code") {
    Workdir wd;
    json cfg = model_block();
    cfg["params"]["V"] = 0.1; // inflow with a transverse mismatch
    cfg["params"]["u_inf"] = 0.3;
    cfg["profile"] = {{"mode", "shoot"}};
    write_text(wd.file("cfg.json"), cfg.dump());
    CHECK(run_cli("profile --config " + wd.file("cfg.json") + " --out " + wd.path) ==
          2);
}

TEST_CASE("simulation writes a trajectory table") {
    Workdir wd;
    json cfg = model_block();
    cfg["profile"] = {{"mode", "explicit"}};
    cfg["grid"] = {{"n_nodes", 201}};
    cfg["simulate"] = {{"kind", "linearized"},
                       {"T", 2.0},
                       {"n_records", 9},
                       {"xi_tilde", {0.5}},
                       {"initial",
                        {{"amplitude", 1e-3}, {"center", 8.0}, {"width", 1.0}}}};
    write_text(wd.file("cfg.json"), cfg.dump());
    CHECK(run_cli("simulate --config " + wd.file("cfg.json") + " --out " + wd.path) ==
          0);
    const std::string csv = slurp(wd.file("trajectory.csv"));
    CHECK(csv.rfind("# schema=1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 9);
    json rep = json::parse(slurp(wd.file("simulate.json")));
    CHECK(rep["schema"] == 1);
    CHECK(rep["blowup"] == false);
}

TEST_CASE("parallel sweep output equals serial byte for byte") {
    Workdir wd;
    json cfg = model_block();
    cfg["sweep"] = {{"V", {-0.3, -0.2, -0.1}},
                    {"u_inf", {0.0, 0.2}},
                    {"condition_d", false}};
    write_text(wd.file("cfg.json"), cfg.dump());
    CHECK(run_cli("sweep --config " + wd.file("cfg.json") + " --out " + wd.path +
                  " --threads 1") == 0);
    const std::string serial = slurp(wd.file("sweep.csv"));
    CHECK(run_cli("sweep --config " + wd.file("cfg.json") + " --out " + wd.path +
                  " --threads 4") == 0);
    CHECK(serial == slurp(wd.file("sweep.csv")));
    CHECK(serial.rfind("# schema=1\n", 0) == 0);
    CHECK(std::count(serial.begin(), serial.end(), '\n') == 2 + 6);
}

TEST_CASE("frequency map lists one row per contour sample") {
    Workdir wd;
    json cfg = model_block();
    cfg["profile"] = {{"mode", "explicit"}};
    cfg["grid"] = {{"n_nodes", 301}};
    cfg["frequencies"] = {{"xi", {0.0}},
                          {"radius", 2.0},
                          {"axis_points", 8},
                          {"arc_points", 8}};
    write_text(wd.file("cfg.json"), cfg.dump());
    CHECK(run_cli("evans-map --config " + wd.file("cfg.json") + " --out " + wd.path) ==
          0);
    json rep = json::parse(slurp(wd.file("evans_map.json")));
    CHECK(rep["schema"] == 1);
    REQUIRE(rep["results"].size() == 1);
    CHECK(rep["results"][0]["winding"] == 0);
}

} // TEST_SUITE
