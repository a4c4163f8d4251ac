#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "sthq/image_io.hpp"
#include "sthq/pipelines.hpp"

using namespace sthq;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "sthq_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

struct Result {
  int status;
  std::string err;
};

Result run(const std::string& args, const std::string& env = "") {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = "cd " + work_dir().string() + " && " + env + " " STHQ_CLI " " + args + " > stdout.txt 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream buf;
  buf << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, buf.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(work_dir() / p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::string kSmallAe =
    " train_count=48 eval_count=6 stage1_iterations=40 stage2_iterations=20 init_iterations=20 batch=8";
const std::string kSmallNet =
    " samples=300 train_count=200 hidden=16 classifier_iterations=100 max_soft_iterations=200 finetune_iterations=10"
    " growth=1.05 init_iterations=30 batch=64";

}  // namespace

TEST_CASE("config errors") {
  Result r = run("train-ae bogus=1");
  CHECK(r.status != 0);
  CHECK(r.err.find("unknown config key 'bogus'") != std::string::npos);
  CHECK(r.err.find("beta_total") != std::string::npos);

  r = run("train-ae beta_total=abc");
  CHECK(r.status != 0);
  CHECK(r.err.find("beta_total") != std::string::npos);

  std::ofstream(work_dir() / "bad.cfg") << "# comment\nL=8\nnot_a_key=3\n";
  r = run("train-ae -c bad.cfg");
  CHECK(r.status != 0);
  CHECK(r.err.find("bad.cfg:3") != std::string::npos);

  CHECK(run("train-ae -c missing.cfg").status != 0);
  CHECK(run("encode model=none.sthm input=none.png output=x.sthi").status != 0);
  CHECK(run("decode input=x.sthi output=y.pgm").err.find("missing required key 'model'") != std::string::npos);
  CHECK(run("no-such-command").status != 0);
  CHECK(run("ablation").status != 0);
}

TEST_CASE("train-ae writes a self-describing, deterministic run") {
  std::ofstream(work_dir() / "ae.cfg") << "L=16\nbeta_total=0.5\n" << "patch=2\n";
  REQUIRE(run("train-ae -c ae.cfg beta_total=0.001 run_dir=a" + kSmallAe).status == 0);
  REQUIRE(run("train-ae -c ae.cfg beta_total=0.001 run_dir=b" + kSmallAe, "STHQ_THREADS=3").status == 0);

  const std::string config = slurp("a/config.txt");
  CHECK(config.find("beta_total=0.001\n") != std::string::npos);
  CHECK(config.find("L=16\n") != std::string::npos);
  CHECK(config.find("stage1_iterations=40\n") != std::string::npos);
  CHECK(slurp("a/metrics.csv") == slurp("b/metrics.csv"));
  CHECK(slurp("a/telemetry.csv") == slurp("b/telemetry.csv"));
  CHECK(lines(slurp("a/metrics.csv")) == 2);
  CHECK(lines(slurp("a/telemetry.csv")) == 21);

  // The echoed config reproduces the run.
  REQUIRE(run("train-ae -c a/config.txt run_dir=c").status == 0);
  CHECK(slurp("c/metrics.csv") == slurp("a/metrics.csv"));
  CHECK(slurp("c/model.sthm") == slurp("a/model.sthm"));
}

TEST_CASE("encode then decode reproduces the reconstruction") {
  REQUIRE(fs::exists(work_dir() / "a/model.sthm"));
  const Model model = Model::load(work_dir() / "a/model.sthm");
  const Tensor x = make_textures({1, 16, 99});
  write_image(work_dir() / "in.pgm", tensor_to_image(x));
  REQUIRE(run("encode model=a/model.sthm input=in.pgm output=in.sthi").status == 0);
  REQUIRE(run("decode model=a/model.sthm input=in.sthi output=out.pgm").status == 0);
  const Image decoded = read_image(work_dir() / "out.pgm");
  CHECK(decoded == tensor_to_image(reconstruct_hard(model, image_to_tensor(read_image(work_dir() / "in.pgm")))));

  // A different model refuses the artifact.
  REQUIRE(fs::exists(work_dir() / "a/stage1.sthm"));
  CHECK(run("decode model=a/stage1.sthm input=in.sthi output=bad.pgm").status != 0);
}

TEST_CASE("eval") {
  REQUIRE(run("eval model=a/model.sthm run_dir=e eval_count=6 save_reconstructions=true").status == 0);
  CHECK(lines(slurp("e/metrics.csv")) == 2);
  CHECK(fs::exists(work_dir() / "e/recon_0005.pgm"));
  CHECK(run("eval model=a/model.sthm eval_images=no_such_dir run_dir=e2").status != 0);
}

TEST_CASE("sweep-beta emits one row per beta") {
  REQUIRE(run("sweep-beta run_dir=s L=16 betas=0.0001,0.001,0.01" + kSmallAe).status == 0);
  CHECK(lines(slurp("s/metrics.csv")) == 4);
  CHECK(fs::exists(work_dir() / "s/model_beta2.sthm"));
  CHECK(fs::exists(work_dir() / "s/telemetry_beta0.csv"));
}

TEST_CASE("ablation scalar-vs-vector") {
  REQUIRE(run("ablation scalar-vs-vector run_dir=v vector_L=16 scalar_L=2 vector_betas=0.001,0.01 scalar_betas=0.001" +
              kSmallAe)
              .status == 0);
  const std::string m = slurp("v/metrics.csv");
  CHECK(lines(m) == 4);
  CHECK(m.find("vector-beta1,0.01,16,4,") != std::string::npos);
  CHECK(m.find("scalar-beta0,0.001,2,1,") != std::string::npos);
  CHECK(slurp("v/summary.txt").find("vector_points=2") != std::string::npos);
}

TEST_CASE("classifier compression commands") {
  REQUIRE(run("train-netcompress run_dir=n L=4" + kSmallNet).status == 0);
  CHECK(lines(slurp("n/metrics.csv")) == 2);
  const Bitstream bs = Bitstream::parse(std::span(reinterpret_cast<const std::uint8_t*>(slurp("n/weights.sthq").data()),
                                                  slurp("n/weights.sthq").size()));
  const Model baseline = Model::load(work_dir() / "n/baseline.sthm");
  CHECK(decode_weights(baseline, bs).flat_params() == Model::load(work_dir() / "n/model.sthm").flat_params());

  REQUIRE(run("ablation beta-zero run_dir=z L=4" + kSmallNet).status == 0);
  const std::string m = slurp("z/metrics.csv");
  CHECK(lines(m) == 3);
  CHECK(m.find("\nbeta-zero,0,4,1,") != std::string::npos);
}
