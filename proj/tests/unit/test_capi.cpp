#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fdb/driver.hpp"
#include "fdbstyle/fdbstyle.h"
#include "fixtures.hpp"

using namespace fdb;
using namespace fdb::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

struct Cli {
  int code;
  std::string out;
  std::string err;
};

// Runs the fdbstyle binary with `args`, capturing exit code and both streams.
Cli run_cli(const fs::path& scratch, const std::string& args) {
  const fs::path out = scratch / "cli.out", err = scratch / "cli.err";
  const std::string cmd = std::string("\"") + FDBSTYLE_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

struct Workspace {
  TempDir tmp{"capi"};
  fs::path root = tmp.path();

  Workspace() {
    std::vector<Frame> images;
    for (int i = 0; i < 2; ++i) images.push_back(random_frame(32, 32, 700 + i));
    write_frames(images, root / "images" / "set");
    for (int c = 0; c < 2; ++c) {
      SyntheticClipSpec spec;
      spec.id = c == 0 ? "alpha" : "beta";
      spec.frames = 4;
      spec.height = 32;
      spec.width = 32;
      spec.seed = 60 + c;
      write_clip(make_synthetic_clip(spec), root / "clips", 0, 4, true);
    }
    save_frame(make_style_image(32, 32), root / "style.png");
    write(root / "s1.toml", config("s1", "stage1", "none"));
    write(root / "ft.toml", config("ft", "finetune", "ofb"));
  }

  static std::string config(const std::string& out, const std::string& mode, const std::string& kind) {
    std::ostringstream t;
    t << "mode = \"" << mode << "\"\nseed = 2\nlog_level = \"error\"\n"
      << "[data]\nimages = \"images\"\nvideo = \"clips\"\nstyle = \"style.png\"\n"
      << "[output]\ndir = \"" << out << "\"\n"
      << "[network]\nbase_channels = 4\nresidual_blocks = 1\n"
      << "[loss]\nlambda2 = 1e-6\n"
      << "[temporal]\nkind = \"" << kind << "\"\n"
      << "[stage1]\niters = 2\n[finetune]\niters = 2\n";
    if (mode == "finetune") t << "[init]\ncheckpoint = \"s1/checkpoint.fdbck\"\n";
    return t.str();
  }
};

struct Options {
  fdb_options* o = nullptr;
  Options() { REQUIRE(fdb_options_create(&o) == FDB_OK); }
  ~Options() { fdb_options_destroy(o); }
};

}  // namespace

TEST_CASE("status plumbing") {
  CHECK(std::string(fdb_version()).size() > 0);
  CHECK(std::string(fdb_status_name(FDB_ERR_DATA)) == "data");
  CHECK(fdb_exit_code(FDB_OK) == 0);
  CHECK(fdb_exit_code(FDB_ERR_CONFIG) == 2);
  for (fdb_status s : {FDB_ERR_IO, FDB_ERR_FORMAT, FDB_ERR_VALIDATION, FDB_ERR_DATA}) CHECK(fdb_exit_code(s) == 3);
  for (fdb_status s : {FDB_ERR_CONTRACT, FDB_ERR_RUNTIME, FDB_ERR_INVALID_ARGUMENT}) CHECK(fdb_exit_code(s) == 4);

  CHECK(fdb_checkpoint_load(nullptr, nullptr) == FDB_ERR_INVALID_ARGUMENT);
  CHECK(std::string(fdb_last_error()).find("null") != std::string::npos);
  fdb_checkpoint* ck = nullptr;
  CHECK(fdb_checkpoint_load("/no/such.fdbck", &ck) == FDB_ERR_IO);
  CHECK(ck == nullptr);
  CHECK(std::string(fdb_last_error()).find("/no/such.fdbck") != std::string::npos);

  fdb_log_level level;
  CHECK(fdb_options_parse_log_level("debug", &level) == FDB_OK);
  CHECK(level == FDB_LOG_DEBUG);
  CHECK(std::string(fdb_last_error()).empty());
  CHECK(fdb_options_parse_log_level("chatty", &level) == FDB_ERR_CONFIG);
  Options o;
  CHECK(fdb_options_set_device(o.o, "gpu") == FDB_OK);
  CHECK(fdb_train(o.o, nullptr, 0) == FDB_ERR_CONFIG);
  CHECK(fdb_options_set_config(nullptr, "x") == FDB_ERR_INVALID_ARGUMENT);
  // Destroying null handles is a no-op.
  fdb_options_destroy(nullptr);
  fdb_report_destroy(nullptr);
  fdb_model_destroy(nullptr);
  fdb_checkpoint_destroy(nullptr);
}

TEST_CASE("p_fdb through the C API matches the library") {
  std::vector<Frame> s, o;
  for (int t = 0; t < 4; ++t) {
    s.push_back(random_frame(5, 6, 10 + t));
    o.push_back(random_frame(5, 6, 20 + t));
  }
  std::vector<float> sf, of;
  for (int t = 0; t < 4; ++t) {
    sf.insert(sf.end(), s[t].data().values().begin(), s[t].data().values().end());
    of.insert(of.end(), o[t].data().values().begin(), o[t].data().values().end());
  }
  for (int k : {1, 2, 3}) {
    double got = -1;
    REQUIRE(fdb_p_fdb_loss(sf.data(), of.data(), 4, 5, 6, k, &got) == FDB_OK);
    CHECK(got == p_fdb_loss(FrameSequence{s, ""}, FrameSequence{o, ""}, k));
  }
  double got = 0;
  CHECK(fdb_p_fdb_loss(sf.data(), of.data(), 4, 5, 6, 4, &got) == FDB_ERR_CONTRACT);
}

TEST_CASE("commands and models through the C API") {
  Workspace ws;
  Options o;
  REQUIRE(fdb_options_set_config(o.o, (ws.root / "s1.toml").c_str()) == FDB_OK);
  std::vector<std::string> logs;
  REQUIRE(fdb_options_set_log_level(o.o, FDB_LOG_WARN) == FDB_OK);
  fdb_options_set_logger(
      o.o, [](fdb_log_level, const char* m, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(m); },
      &logs);
  char path[1024];
  REQUIRE(fdb_train(o.o, path, sizeof path) == FDB_OK);
  CHECK(fs::path(path) == ws.root / "s1" / "checkpoint.fdbck");
  CHECK_FALSE(logs.empty());  // the random loss-network warning at least

  SUBCASE("checkpoint handles and per-frame stylization") {
    fdb_checkpoint* ck = nullptr;
    REQUIRE(fdb_checkpoint_load(path, &ck) == FDB_OK);
    CHECK(std::string(fdb_checkpoint_variant(ck)) == "sfn");
    CHECK(std::string(fdb_checkpoint_stage(ck)) == "stage1");
    CHECK(fdb_checkpoint_iteration(ck) == 2);
    fdb_model* m = nullptr;
    REQUIRE(fdb_model_create(ck, &m) == FDB_OK);
    int oh = 0, ow = 0;
    REQUIRE(fdb_model_output_size(m, 20, 28, &oh, &ow) == FDB_OK);
    CHECK(oh == 20);
    CHECK(ow == 28);
    const Frame in = random_frame(20, 28, 5);
    std::vector<float> out(3 * 20 * 28);
    CHECK(fdb_model_stylize(m, in.data().data(), 20, 28, out.data(), out.size() - 1) == FDB_ERR_CONTRACT);
    REQUIRE(fdb_model_stylize(m, in.data().data(), 20, 28, out.data(), out.size()) == FDB_OK);
    const Frame expect = StylizationNetwork<float>::from_checkpoint(Checkpoint::load(path)).stylize(in);
    CHECK(std::equal(out.begin(), out.end(), expect.data().data()));
    fdb_model_destroy(m);
    fdb_checkpoint_destroy(ck);
  }
  SUBCASE("rnn models carry state until reset") {
    Options f;
    std::string text = Workspace::config("rnn", "finetune", "p_fdb");
    text.replace(text.find("base_channels"), 0, "variant = \"rnn\"\n");
    write(ws.root / "rnn.toml", text);
    REQUIRE(fdb_options_set_config(f.o, (ws.root / "rnn.toml").c_str()) == FDB_OK);
    char rpath[1024];
    REQUIRE(fdb_train(f.o, rpath, sizeof rpath) == FDB_OK);
    fdb_checkpoint* ck = nullptr;
    REQUIRE(fdb_checkpoint_load(rpath, &ck) == FDB_OK);
    CHECK(std::string(fdb_checkpoint_variant(ck)) == "rnn");
    fdb_model* m = nullptr;
    REQUIRE(fdb_model_create(ck, &m) == FDB_OK);
    std::vector<Frame> frames{random_frame(32, 32, 1), random_frame(32, 32, 2), random_frame(32, 32, 3)};
    const auto expect = rnn_unroll(StylizationNetwork<float>::from_checkpoint(Checkpoint::load(rpath)), frames);
    std::vector<float> out(3 * 32 * 32);
    for (int pass = 0; pass < 2; ++pass) {
      for (int t = 0; t < 3; ++t) {
        REQUIRE(fdb_model_stylize(m, frames[t].data().data(), 32, 32, out.data(), out.size()) == FDB_OK);
        CHECK(std::equal(out.begin(), out.end(), expect[t].data().data()));
      }
      fdb_model_reset(m);
    }
    fdb_model_destroy(m);
    fdb_checkpoint_destroy(ck);
  }
  SUBCASE("stylize and eval match the library driver") {
    size_t n = 0;
    REQUIRE(fdb_stylize(o.o, path, (ws.root / "clips").c_str(), (ws.root / "out").c_str(), &n) == FDB_OK);
    CHECK(n == 8);
    const std::string report = (ws.root / "r.json").string();
    fdb_eval_params params{2, report.c_str(), nullptr};
    fdb_report* rep = nullptr;
    const fdb_status st = fdb_eval(o.o, path, (ws.root / "clips").c_str(), &params, &rep);
    INFO(std::string(fdb_last_error()));
    REQUIRE(st == FDB_OK);
    EvalOptions e;
    e.interval = 2;
    e.report = ws.root / "lib.json";
    const StabilityReport lib = cmd_eval(path, ws.root / "clips", e);
    REQUIRE(fdb_report_clip_count(rep) == 2);
    for (size_t i = 0; i < 2; ++i) {
      CHECK(std::string(fdb_report_clip_id(rep, i)) == lib.clips[i].clip);
      CHECK(fdb_report_fdb_error(rep, i) == lib.clips[i].fdb_error);
      double w = -1;
      REQUIRE(fdb_report_warp_error(rep, i, &w) == 1);
      CHECK(w == *lib.clips[i].warp_error);
    }
    CHECK(fdb_report_mean_fdb_error(rep) == lib.mean_fdb_error());
    CHECK(nlohmann::json::parse(fdb_report_json(rep)) == nlohmann::json::parse(slurp(ws.root / "r.json")));
    fdb_report_destroy(rep);
    fdb_eval_params none{0, nullptr, nullptr};
    CHECK(fdb_eval(o.o, path, (ws.root / "missing").c_str(), &none, &rep) == FDB_ERR_IO);
    fs::create_directories(ws.root / "empty");
    CHECK(fdb_eval(o.o, path, (ws.root / "empty").c_str(), &none, &rep) == FDB_ERR_DATA);
  }
}

TEST_CASE("command-line front end") {
  Workspace ws;
  const fs::path& r = ws.root;
  SUBCASE("usage") {
    const Cli help = run_cli(r, "--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("preprocess-masks") != std::string::npos);
    CHECK(run_cli(r, "--version").code == 0);
    CHECK(run_cli(r, "").code == 2);
    CHECK(run_cli(r, "--bogus train").code == 2);
    CHECK(run_cli(r, "--config " + (r / "absent.toml").string() + " train").code == 2);
    CHECK(run_cli(r, "--log-level loud train").code == 2);
    CHECK(run_cli(r, "--device gpu --config " + (r / "s1.toml").string() + " train").code == 2);
  }
  SUBCASE("config errors exit 2 and name the key") {
    write(r / "bad.toml", "[stage1]\nitters = 3\n");
    const Cli c = run_cli(r, "--config " + (r / "bad.toml").string() + " train");
    CHECK(c.code == 2);
    CHECK(c.err.find("itters") != std::string::npos);
  }
  SUBCASE("data errors exit 3") {
    write_flo(FlowField::constant(4, 4, 0, 0), r / "clips_flow" / "alpha" / "forward" / "00009.flo");
    const Cli c = run_cli(r, "preprocess-masks " + (r / "clips_flow").string() + " " + (r / "m").string());
    CHECK(c.code == 3);
    CHECK(c.err.find("00009.flo") != std::string::npos);
    CHECK_FALSE(fs::exists(r / "m"));
    // Finetuning before stage 1 exists.
    CHECK(run_cli(r, "--config " + (r / "ft.toml").string() + " train").code == 3);
  }
  SUBCASE("a clip with mixed frame sizes is a runtime (contract) failure") {
    REQUIRE(run_cli(r, "--config " + (r / "s1.toml").string() + " train").code == 0);
    fs::create_directories(r / "mixed" / "c");
    save_frame(random_frame(16, 16, 1), r / "mixed" / "c" / "00000.png");
    save_frame(random_frame(20, 16, 2), r / "mixed" / "c" / "00001.png");
    const Cli c = run_cli(r, "stylize " + (r / "s1" / "checkpoint.fdbck").string() + " " + (r / "mixed").string() +
                                 " " + (r / "mo").string());
    CHECK(c.code == 4);
  }
  SUBCASE("full pipeline matches the library") {
    const Cli masks = run_cli(r, "preprocess-masks " + (r / "clips_flow").string() + " " + (r / "masks").string());
    REQUIRE(masks.code == 0);
    CHECK(masks.out.find("6 masks") != std::string::npos);
    // Same bytes as the fixture's masks (both come from the same flows).
    CHECK(slurp(r / "masks" / "alpha" / "00001.pgm") == slurp(r / "clips_mask" / "alpha" / "00001.pgm"));

    const Cli s1 = run_cli(r, "--config " + (r / "s1.toml").string() + " train");
    REQUIRE(s1.code == 0);
    const fs::path ck = r / "s1" / "checkpoint.fdbck";
    CHECK(s1.out.find(ck.string()) != std::string::npos);
    // The seed flag overrides the config and reaches the weights.
    REQUIRE(run_cli(r, "--seed 77 --config " + (r / "s1.toml").string() + " train").code == 0);
    const std::uint64_t seeded = Checkpoint::load(ck).parameter_checksum();
    CHECK(run_cli(r, "--config " + (r / "s1.toml").string() + " train").code == 0);
    CHECK(Checkpoint::load(ck).parameter_checksum() != seeded);

    const Cli ft = run_cli(r, "--config " + (r / "ft.toml").string() + " train");
    REQUIRE(ft.code == 0);
    const fs::path fck = r / "ft" / "checkpoint.fdbck";
    CHECK(Checkpoint::load(fck).stage == "finetuned");

    const Cli sty = run_cli(r, "stylize " + fck.string() + " " + (r / "clips").string() + " " + (r / "sty").string());
    REQUIRE(sty.code == 0);
    CHECK(sty.out.find("8 frames") != std::string::npos);

    const Cli ev = run_cli(r, "eval --interval 2 --report " + (r / "cli.json").string() + " " + fck.string() + " " +
                                  (r / "clips").string());
    REQUIRE(ev.code == 0);
    EvalOptions e;
    e.interval = 2;
    e.report = r / "lib.json";
    const StabilityReport lib = cmd_eval(fck, r / "clips", e);
    const nlohmann::json cj = nlohmann::json::parse(slurp(r / "cli.json"));
    const nlohmann::json lj = nlohmann::json::parse(slurp(r / "lib.json"));
    CHECK(cj["clips"] == lj["clips"]);
    CHECK(ev.out.find("alpha fdb_error=") != std::string::npos);
    CHECK(ev.out.find("warp_error=") != std::string::npos);

    // Stylized directory as the source.
    const Cli evd = run_cli(r, "eval --report " + (r / "d.json").string() + " " + (r / "sty").string() + " " +
                                   (r / "clips").string());
    REQUIRE(evd.code == 0);
    const nlohmann::json dj = nlohmann::json::parse(slurp(r / "d.json"));
    CHECK(dj["clips"].size() == 2);
  }
}
