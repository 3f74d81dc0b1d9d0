#include <gtest/gtest.h>
#include <sys/wait.h>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Outcome
{
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() / ("ordred_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Outcome run(const std::string& args) const
    {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string(ORDRED_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        Outcome r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

    /// Small synthetic dataset from the validation design.
    std::string sample()
    {
        write("design.toml", "preset = \"validation\"\nn = 120\n");
        const Outcome r = run("simulate --design " + path("design.toml") + " --seed 4 --write-data " + path("data.csv"));
        EXPECT_EQ(r.code, 0) << r.err;
        return path("data.csv");
    }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, Help)
{
    const Outcome r = run("--help");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("fit"), std::string::npos);
    EXPECT_NE(r.out.find("select-dim"), std::string::npos);
}

TEST_F(Cli, BadFlagIsValidationError)
{
    const Outcome r = run("fit --no-such-flag");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("\"category\":\"validation\""), std::string::npos);
}

TEST_F(Cli, ConstantColumnNamed)
{
    write("bad.csv", "a,b,y\n1,1,0.1\n2,1,0.5\n1,1,0.9\n2,1,1.3\n");
    const Outcome r = run("fit --in " + path("bad.csv") + " --out " + path("m.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("NonOrdinalColumn"), std::string::npos);
    EXPECT_NE(r.err.find("\"subject\":\"b\""), std::string::npos);
}

TEST_F(Cli, UnknownConfigKey)
{
    const std::string data = sample();
    write("cfg.toml", "d = 1\nbakend = \"exact\"\n");
    const Outcome r = run("fit --in " + data + " --out " + path("m.json") + " --config " + path("cfg.toml"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("UnknownKey"), std::string::npos);
}

TEST_F(Cli, FitReduceReproducible)
{
    const std::string data = sample();
    const std::string fit = "fit --in " + data + " --d 1 --seed 9 --no-timing --out " + path("m1.json");
    ASSERT_EQ(run(fit).code, 0);
    const Outcome first = run(fit);
    const std::string model = slurp(path("m1.json"));
    const Outcome second = run(fit);
    ASSERT_EQ(second.code, 0);
    EXPECT_EQ(first.out, second.out);
    EXPECT_EQ(model, slurp(path("m1.json")));

    const std::string red = "reduce --model " + path("m1.json") + " --in " + data + " --qmc-points 128 --ses --out ";
    ASSERT_EQ(run(red + path("a.csv")).code, 0);
    ASSERT_EQ(run(red + path("b.csv") + " --threads 2").code, 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
}

TEST_F(Cli, ConstantReductionIsNumericalError)
{
    const std::string data = sample();
    ASSERT_EQ(run("fit --in " + data + " --d 1 --out " + path("m.json")).code, 0);
    write("same.csv", "X1,X2,X3,X4,X5,y\n1,2,3,4,1,0.5\n1,2,3,4,1,-0.5\n1,2,3,4,1,1.0\n");
    const Outcome r = run("ses-index --model " + path("m.json") + " --in " + path("same.csv"));
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.err.find("ZeroVariance"), std::string::npos);
}

TEST_F(Cli, MissingModelFile)
{
    const Outcome r = run("reduce --model " + path("absent.json") + " --in " + path("absent.csv"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("FileNotFound"), std::string::npos);
}
