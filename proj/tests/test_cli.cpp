#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "cak/checkpoint.hpp"
#include "cak/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

// Runs the CLI with stderr discarded and returns its exit code and stdout.
Result cli(const std::string& args) {
    const std::string cmd = std::string("\"") + CAK_CLI_PATH + "\" " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("cak_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

const std::string kLayout = std::string(CAK_DATA_DIR) + "/resnet50.layout";
const std::string kSmall = "--synth --per-class 3 --val-per-class 2 --size 8 ";

} // namespace

TEST_F(Cli, CountGoldenValues) {
    auto r = cli("count --layout " + kLayout + " --attn eca --adaptive");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("params: 80\n"), std::string::npos) << r.out;
    r = cli("count --layout " + kLayout + " --attn se-var1");
    EXPECT_NE(r.out.find("params: 0\n"), std::string::npos) << r.out;
    r = cli("count --layout " + kLayout + " --attn se --r 16");
    EXPECT_NE(r.out.find("params: 2514944\n"), std::string::npos) << r.out;
    r = cli("count --layout " + kLayout + " --attn eca --csv");
    EXPECT_NE(r.out.find("total,,,80,"), std::string::npos) << r.out;
}

TEST_F(Cli, CountInputErrors) {
    EXPECT_EQ(cli("count --layout " + path("missing.layout") + " --attn eca").code, 2);
    std::ofstream(path("bad.layout")) << "channels=64\nchannels=abc\n";
    EXPECT_EQ(cli("count --layout " + path("bad.layout") + " --attn eca").code, 2);
    EXPECT_EQ(cli("count --layout " + kLayout + " --attn cbam").code, 2);
    EXPECT_EQ(cli("count --layout " + kLayout + " --attn eca --k 4").code, 2);
    EXPECT_EQ(cli("count --layout " + kLayout).code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(Cli, Kpolicy) {
    EXPECT_EQ(cli("kpolicy --channels 64").out, "3\n");
    EXPECT_EQ(cli("kpolicy --channels 256").out, "5\n");
    EXPECT_EQ(cli("kpolicy --channels 16,256").out, "channels,k\n16,3\n256,5\n");
    const auto grid = cli("kpolicy --grid");
    EXPECT_EQ(grid.code, 0);
    EXPECT_EQ(std::count(grid.out.begin(), grid.out.end(), '\n'), 22);
    EXPECT_EQ(cli("kpolicy --channels 0").code, 2);
}

TEST_F(Cli, GradcheckPassAndNegativeControl) {
    auto r = cli("gradcheck --attn eca -C 16");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("gradcheck: PASS"), std::string::npos);
    r = cli("gradcheck --attn se --r 4 -C 16 --corrupt-adjoint");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("gradcheck: FAIL"), std::string::npos);
}

TEST_F(Cli, BenchReportsAndRejectsZeroIterations) {
    auto r = cli("bench --attn eca -C 64 --spatial 4 --iters 5 --warmup 1");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("variant,channels,spatial,batch,iters,median_us,p95_us,mean_us,stddev_us\neca,64,4,1,5,", 0),
              0u)
        << r.out;
    EXPECT_EQ(cli("bench --attn eca -C 64 --iters 0").code, 2);
}

TEST_F(Cli, TrainIsDeterministicAndReplayable) {
    const std::string flags = kSmall + "--epochs 2 --batch 8 --attn eca --k 3 --seed 7 --out ";
    ASSERT_EQ(cli("train " + flags + path("a")).code, 0);
    ASSERT_EQ(cli("train " + flags + path("b")).code, 0);
    const std::string metrics = slurp(path("a") + "/metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
    EXPECT_EQ(metrics, slurp(path("b") + "/metrics.csv"));
    EXPECT_EQ(slurp(path("a") + "/model.cakc"), slurp(path("b") + "/model.cakc"));
    const auto net = cak::load_checkpoint(path("a") + "/model.cakc");
    EXPECT_EQ(net.spec().attention.kind, cak::AttentionKind::eca);
    EXPECT_EQ(net.spec().attention.kernel, std::optional<std::size_t>{3});
    EXPECT_NE(slurp(path("a") + "/manifest.json").find("\"exit_code\": 0"), std::string::npos);

    fs::remove(path("a") + "/metrics.csv");
    fs::remove(path("a") + "/model.cakc");
    EXPECT_EQ(cli("replay " + path("a") + "/manifest.json").code, 0);
    EXPECT_EQ(slurp(path("a") + "/metrics.csv"), metrics);
    EXPECT_EQ(slurp(path("a") + "/model.cakc"), slurp(path("b") + "/model.cakc"));
    std::ofstream(path("replay.json")) << R"({"argv": ["cak", "replay", "x.json"]})";
    EXPECT_EQ(cli("replay " + path("replay.json")).code, 2);
    EXPECT_EQ(cli("replay " + path("missing.json")).code, 2);
}

TEST_F(Cli, TrainRejectsBadInputs) {
    std::ofstream(path("bad.spec")) << "classes=10\nattn=cbam\n";
    EXPECT_EQ(cli("train --spec " + path("bad.spec") + " " + kSmall + "--out " + path("o")).code, 2);
    EXPECT_EQ(cli("train --spec " + path("missing.spec") + " " + kSmall + "--out " + path("o")).code, 2);
    EXPECT_EQ(cli("train --data " + path("missing.cakd") + " --out " + path("o")).code, 2);
    EXPECT_EQ(cli("train " + kSmall + "--lr 1e200 --epochs 3 --out " + path("o")).code, 3);
}

TEST_F(Cli, SynthEvalAndDatasetFiles) {
    ASSERT_EQ(cli("synth --per-class 2 --size 8 --out " + path("t.cakd")).code, 0);
    ASSERT_EQ(cli("synth --val-per-class 2 --size 8 --split val --out " + path("v.cakd")).code, 0);
    const auto t = cak::load_dataset(path("t.cakd"));
    EXPECT_EQ(t.size(), 20u);
    cak::SynthOptions o;
    o.n_per_class = 2;
    o.size = 8;
    EXPECT_EQ(t.images, cak::synth_dataset(o).images);
    ASSERT_EQ(cli("train --data " + path("t.cakd") + " --val " + path("v.cakd") +
                  " --epochs 1 --batch 5 --attn se-var2 --out " + path("run"))
                  .code,
              0);
    const auto r = cli("eval --checkpoint " + path("run") + "/model.cakc --data " + path("v.cakd"));
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("samples,loss,top1,top5\n20,", 0), 0u) << r.out;

    std::string bytes = slurp(path("t.cakd"));
    bytes[0] = 'Q';
    std::ofstream(path("bad.cakd"), std::ios::binary) << bytes;
    EXPECT_EQ(cli("eval --checkpoint " + path("run") + "/model.cakc --data " + path("bad.cakd")).code, 2);
}

TEST_F(Cli, ExportZeroInitializedWeights) {
    ASSERT_EQ(cli("init --attn eca --attn-init zero --out " + path("z.cakc")).code, 0);
    const auto r = cli("export-weights --checkpoint " + path("z.cakc") + " --synth --val-per-class 2 --size 8");
    ASSERT_EQ(r.code, 0);
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "site,class,channel,weight");
    std::size_t rows = 0, halves = 0;
    while (std::getline(in, line)) {
        ++rows;
        halves += line.substr(line.rfind(',') + 1) == "0.5";
    }
    EXPECT_EQ(rows, 2464u);
    EXPECT_EQ(halves, rows);

    EXPECT_EQ(cli("export-weights --checkpoint " + path("missing.cakc") + " --synth").code, 2);
    std::string bytes = slurp(path("z.cakc"));
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream(path("flipped.cakc"), std::ios::binary) << bytes;
    EXPECT_EQ(cli("export-weights --checkpoint " + path("flipped.cakc") + " --synth --size 8").code, 2);
}
