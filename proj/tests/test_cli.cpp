#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#ifndef EMC_BIN
#define EMC_BIN "emc"
#endif

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EMC_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
#ifdef _WIN32
  return status;
#else
  return WEXITSTATUS(status);
#endif
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("usage errors exit with 1, runtime failures with 2") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("train") == 1);  // missing required --data
  CHECK(run_cli("generate --game g3 --out cli_bad.jsonl") == 2);
  CHECK(run_cli("train --data does_not_exist.jsonl") == 2);
  CHECK(run_cli("eval --checkpoint nope.bin --data nope.jsonl") == 2);
}

TEST_CASE("generate is deterministic and train/eval/report produce artifacts") {
  CHECK(run_cli("generate --game g1 --dims 5,5 --train 100 --valid 40 --test 40 --ood 20 "
                "--ood-fraction 0.25 --seed 77 --out cli_a.jsonl") == 0);
  CHECK(run_cli("generate --game g1 --dims 5,5 --train 100 --valid 40 --test 40 --ood 20 "
                "--ood-fraction 0.25 --seed 77 --out cli_b.jsonl") == 0);
  CHECK(slurp("cli_a.jsonl") == slurp("cli_b.jsonl"));
  CHECK(slurp("cli_a.jsonl.manifest.json") == slurp("cli_b.jsonl.manifest.json"));

  CHECK(run_cli("generate --game g2 --nodes 6 --train 40 --valid 10 --test 10 --ood 10 "
                "--seed 5 --out cli_g2.jsonl") == 0);

  CHECK(run_cli("train --data cli_a.jsonl --repr graph --layers 1 --hidden 16 --embed 8 "
                "--msg-embed 8 --distractors 1 --vocab 6 --msg-len 2 --batch 16 "
                "--episodes 3000 --eval-every 1000 --eval-episodes 100 --seed 3 "
                "--out cli_runs") == 0);
  const std::string dir = "cli_runs/g1-graph-K1-V6-L2-seed3";
  CHECK(run_cli("eval --checkpoint " + dir + "/checkpoint.bin --data cli_a.jsonl "
                "--split train --episodes 80 --toposim --pairs full --robustness "
                "--position 0 --out " + dir) == 0);
  CHECK(run_cli("eval --checkpoint " + dir + "/checkpoint.bin --data cli_a.jsonl "
                "--ood --episodes 80 --out " + dir) == 0);
  CHECK(run_cli("report " + dir + " --out cli_report.csv") == 0);

  const std::string csv = slurp("cli_report.csv");
  CHECK(csv.find("config,runs,") == 0);
  CHECK(csv.find("g1-graph-K1-V6-L2") != std::string::npos);
  CHECK(slurp(dir + "/messages.jsonl").find("\"message\":[") != std::string::npos);
  CHECK(slurp(dir + "/train_log.csv").find("episode,loss,valid_acc") == 0);
}

TEST_CASE("config file values are overridden by flags") {
  {
    std::ofstream cfg("cli_cfg.ini");
    cfg << "[generate]\ngame=g1\ndims=3,3\ntrain=30\nvalid=10\ntest=10\nood=0\nseed=9\n"
        << "out=cli_cfgfile.jsonl\n";
  }
  CHECK(run_cli("--config cli_cfg.ini generate") == 0);
  std::ifstream base("cli_cfgfile.jsonl");
  int lines = 0;
  std::string l;
  while (std::getline(base, l)) ++lines;
  CHECK(lines == 50);

  CHECK(run_cli("--config cli_cfg.ini generate --train 12 --out cli_cfgfile2.jsonl") == 0);
  std::ifstream over("cli_cfgfile2.jsonl");
  lines = 0;
  while (std::getline(over, l)) ++lines;
  CHECK(lines == 32);
}
