#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mfq/harness.hpp"

namespace fs = std::filesystem;

namespace {

mfq::ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const mfq::Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no mfq::Error thrown";
    return mfq::ErrorCode::Io;
}

/// Writes `spec` into `dir` and returns a config pointing at it.
mfq::ExperimentConfig config_for(const fs::path& dir, const mfq::MdpSpec& spec) {
    mfq::write_json(dir / "spec.json", mfq::to_json(spec));
    mfq::ExperimentConfig c;
    c.mdp_path = (dir / "spec.json").string();
    c.output_dir = (dir / "out").string();
    c.a_samples = 20000;
    c.a_chunk = 5000;
    return c;
}

mfq::ExperimentConfig bundled(const fs::path& dir) {
    auto c = config_for(dir, mfq::load_mdp_spec(fixtures::data_dir() / "mdp_4x3.json").spec);
    c.n_list = {50};
    c.T = 1.0;
    return c;
}

mfq::RunOptions quiet() { return {}; }

} // namespace

TEST(Config, JsonRoundTrip) {
    mfq::ExperimentConfig c;
    c.mdp_path = "x.json";
    c.gamma = 0.25;
    c.n_list = {10, 20};
    c.seeds = {3, 4};
    c.law.c = {mfq::CLaw::Kind::TwoPoint, 0.5};
    c.a_method = mfq::KernelMethod::Quadrature;
    c.tolerances.final_sup = 1e-7;
    c.activation = mfq::Activation::Sigmoid;
    EXPECT_EQ(mfq::parse_config(mfq::to_json(c)), c);
    EXPECT_EQ(mfq::config_hash(c), mfq::config_hash(mfq::parse_config(mfq::to_json(c))));
}

TEST(Config, UnknownFieldsRejected) {
    mfq::ExperimentConfig c;
    c.mdp_path = "x.json";
    auto j = mfq::to_json(c);
    j["learning_rate"] = 1.0;
    EXPECT_EQ(code_of([&] { (void)mfq::parse_config(j); }), mfq::ErrorCode::InvalidInput);
    j = mfq::to_json(c);
    j["tolerances"]["final"] = 1.0;
    EXPECT_EQ(code_of([&] { (void)mfq::parse_config(j); }), mfq::ErrorCode::InvalidInput);
    j = mfq::to_json(c);
    j["c_law"]["scale"] = 1.0;
    EXPECT_EQ(code_of([&] { (void)mfq::parse_config(j); }), mfq::ErrorCode::InvalidInput);
}

TEST(Config, InvariantsChecked) {
    mfq::ExperimentConfig c;
    c.mdp_path = "x.json";
    EXPECT_NO_THROW(mfq::validate_config(c));
    auto bad = c;
    bad.n_list = {100, 50};
    EXPECT_THROW(mfq::validate_config(bad), mfq::Error);
    bad = c;
    bad.alpha = 0.0;
    EXPECT_THROW(mfq::validate_config(bad), mfq::Error);
    bad = c;
    bad.seeds.clear();
    EXPECT_THROW(mfq::validate_config(bad), mfq::Error);
    bad = c;
    bad.mdp_path.clear();
    EXPECT_THROW(mfq::validate_config(bad), mfq::Error);
}

TEST(Config, SeedOffsetShiftsEverySeed) {
    mfq::ExperimentConfig c;
    c.seeds = {0, 1};
    c.a_seed = 2;
    mfq::RunOptions o;
    o.seed_offset = 10;
    o.out = "elsewhere";
    const auto e = mfq::effective_config(c, o);
    EXPECT_EQ(e.seeds, (std::vector<std::uint64_t>{10, 11}));
    EXPECT_EQ(e.a_seed, 12u);
    EXPECT_EQ(e.h0_seed, 10u);
    EXPECT_EQ(e.output_dir, "elsewhere");
}

TEST(Commands, BellmanSingleState) {
    const auto dir = fixtures::scratch_dir("bellman_single");
    const auto c = config_for(dir, fixtures::single_state(1.0, 0.5));
    const auto r = mfq::cmd_bellman(c, quiet());
    EXPECT_EQ(r.exit_code, 0);
    const auto t = mfq::read_csv(dir / "out" / "bellman.csv");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_NEAR(t.rows[0][t.column("value")], 2.0, 1e-12);
    EXPECT_TRUE(fs::exists(dir / "out" / "bellman.meta.json"));
}

TEST(Commands, BellmanFiniteOneStepAndJsonFormat) {
    const auto dir = fixtures::scratch_dir("bellman_finite");
    const auto spec = fixtures::random_finite_spec(2, 2, 1, 3, 0.5);
    auto c = config_for(dir, spec);
    c.mode = mfq::TrainMode::Finite;
    mfq::RunOptions o;
    o.format = mfq::OutputFormat::Json;
    EXPECT_EQ(mfq::cmd_bellman(c, o).exit_code, 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "bellman.json"));
    EXPECT_FALSE(fs::exists(dir / "out" / "bellman.csv"));
    const auto j = mfq::read_json(dir / "out" / "bellman.json");
    const auto values = j.at("values").get<std::vector<double>>();
    ASSERT_EQ(values.size(), 8u);
    for (std::size_t x = 0; x < 2; ++x) {
        for (std::size_t a = 0; a < 2; ++a) {
            double expect = spec.reward_by_time[0][x][a];
            for (std::size_t z = 0; z < 2; ++z) expect += 0.5 * spec.transition[x][a][z] * spec.terminal[z];
            EXPECT_NEAR(values[x * 2 + a], expect, 1e-15);
            EXPECT_EQ(values[4 + x * 2 + a], spec.terminal[x]);
        }
    }
}

TEST(Commands, TrainIsReproducible) {
    const auto dir = fixtures::scratch_dir("train_repro");
    auto c = bundled(dir);
    c.seeds = {0, 1};
    mfq::RunOptions a;
    a.out = dir / "a";
    mfq::RunOptions b;
    b.out = dir / "b";
    b.workers = 2;
    mfq::RunOptions again = a;
    again.out = dir / "a2";
    ASSERT_EQ(mfq::cmd_train(c, a).exit_code, 0);
    ASSERT_EQ(mfq::cmd_train(c, b).exit_code, 0);
    ASSERT_EQ(mfq::cmd_train(c, again).exit_code, 0);
    for (std::uint64_t s : {0u, 1u}) {
        const std::string f = mfq::train_stem(50, s) + ".csv";
        EXPECT_EQ(mfq::read_file(dir / "a" / f), mfq::read_file(dir / "b" / f));
        EXPECT_EQ(mfq::read_file(dir / "a" / f), mfq::read_file(dir / "a2" / f));
    }
    const auto meta = mfq::read_meta(dir / "a", mfq::train_stem(50, 1));
    EXPECT_EQ(meta.at("config_hash"), mfq::config_hash(mfq::effective_config(c, a)));
    EXPECT_EQ(meta.at("spec_hash"), mfq::git_blob_hash(mfq::read_file(c.mdp_path)));
    EXPECT_TRUE(meta.contains("final_params"));
}

TEST(Commands, SeedOffsetNamesOutputs) {
    const auto dir = fixtures::scratch_dir("train_offset");
    auto c = bundled(dir);
    mfq::RunOptions o;
    o.seed_offset = 5;
    ASSERT_EQ(mfq::cmd_train(c, o).exit_code, 0);
    EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / (mfq::train_stem(50, 5) + ".csv")));
    EXPECT_FALSE(fs::exists(fs::path(c.output_dir) / (mfq::train_stem(50, 0) + ".csv")));
}

TEST(Commands, IdentityKernelLimitConverges) {
    const auto dir = fixtures::scratch_dir("limit_identity");
    auto c = bundled(dir);
    c.identity_a = true;
    c.alpha = 20.0;
    c.h0 = "zero";
    c.ode_t_end = 60.0;
    c.ode_dt = 0.05;
    c.tolerances.final_sup = 1e-8;
    const auto r = mfq::cmd_limit(c, quiet());
    EXPECT_EQ(r.exit_code, 0) << r.report.dump();
    EXPECT_TRUE(r.report.at("lyapunov_non_increasing").get<bool>());
    EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "limit_ode.csv"));
}

TEST(Commands, CompareAgainstTheLimitItself) {
    const auto dir = fixtures::scratch_dir("compare_self");
    auto c = bundled(dir);
    c.n_list = {100};
    c.snapshot_stride = 1;
    ASSERT_EQ(mfq::cmd_amatrix(c, quiet()).exit_code, 0);
    ASSERT_EQ(mfq::cmd_train(c, quiet()).exit_code, 0);

    // Replace the network trajectory by the limit trajectory from the same start.
    const fs::path out = c.output_dir;
    const std::string stem = mfq::train_stem(100, 0);
    const auto p = mfq::load_problem(c);
    const auto A = mfq::read_kernel(out, p);
    auto rec = mfq::parse_train_record(mfq::read_table(out, stem));
    const auto ode = mfq::integrate(mfq::make_rhs(p, A.entries, mfq::driving_law(p)), rec.snapshots.front(),
                                    rec.times.back(), c.ode_dt);
    ASSERT_EQ(ode.times.size(), rec.times.size());
    rec.snapshots = ode.values;
    mfq::write_table(out, stem, mfq::train_record_csv(rec, p.columns), mfq::OutputFormat::Csv);

    const auto r = mfq::cmd_compare(c, quiet());
    const double d = r.report.at("widths")[0].at("mean_distance").get<double>();
    EXPECT_LT(d, 1e-12);
}

TEST(Commands, CompareChecksHashAndGrid) {
    const auto dir = fixtures::scratch_dir("compare_errors");
    auto c = bundled(dir);
    ASSERT_EQ(mfq::cmd_amatrix(c, quiet()).exit_code, 0);
    ASSERT_EQ(mfq::cmd_train(c, quiet()).exit_code, 0);

    const fs::path out = c.output_dir;
    const fs::path csv = out / (mfq::train_stem(50, 0) + ".csv");
    const std::string original = mfq::read_file(csv);
    auto t = mfq::read_csv(csv);
    t.rows.pop_back();
    mfq::write_csv(csv, t);
    EXPECT_EQ(code_of([&] { (void)mfq::cmd_compare(c, quiet()); }), mfq::ErrorCode::GridMismatch);
    mfq::write_file(csv, original);
    EXPECT_NO_THROW((void)mfq::cmd_compare(c, quiet()));

    // Same content, different bytes: the MDP file hash changes.
    mfq::write_file(c.mdp_path, mfq::read_file(c.mdp_path) + "\n");
    EXPECT_EQ(code_of([&] { (void)mfq::cmd_compare(c, quiet()); }), mfq::ErrorCode::SpecHashMismatch);
}

TEST(Commands, CompareNeedsMatchingTrainMeta) {
    const auto dir = fixtures::scratch_dir("compare_meta");
    auto c = bundled(dir);
    ASSERT_EQ(mfq::cmd_amatrix(c, quiet()).exit_code, 0);
    ASSERT_EQ(mfq::cmd_train(c, quiet()).exit_code, 0);
    const fs::path out = c.output_dir;
    auto meta = mfq::read_meta(out, mfq::train_stem(50, 0));
    meta["spec_hash"] = "0000";
    mfq::write_meta(out, mfq::train_stem(50, 0), meta);
    EXPECT_EQ(code_of([&] { (void)mfq::cmd_compare(c, quiet()); }), mfq::ErrorCode::SpecHashMismatch);
}

TEST(Commands, RegressionRejectedByBellman) {
    const auto dir = fixtures::scratch_dir("bellman_regression");
    mfq::ExperimentConfig c;
    c.mode = mfq::TrainMode::Regression;
    c.dataset_path = (fixtures::data_dir() / "regression_10x3.json").string();
    c.output_dir = (dir / "out").string();
    EXPECT_THROW((void)mfq::cmd_bellman(c, quiet()), mfq::Error);
}
