#include <gtest/gtest.h>

#include <random>

#include "semortho/report.hpp"
#include "support.hpp"

using namespace semortho;
using nlohmann::json;

namespace {

std::vector<PromptRecord> tagged(const std::vector<std::string>& corpora) {
    std::vector<PromptRecord> out;
    for (std::size_t i = 0; i < corpora.size(); ++i)
        out.push_back(make_record("r" + std::to_string(i), corpora[i], std::string(5 + i, 'x')));
    return out;
}

/// Four points, two clusters, two corpora, one successful and one failed trial.
RunReport tiny_run() {
    RunReport run;
    run.master_seed = 42;
    run.stage_seeds = {{"sample", 1}, {"reduce", 2}, {"grid", 3}};
    run.sample = tagged({"a", "b", "a", "b"});
    run.loaded = 4;
    run.stats_loaded = compute_length_stats(run.sample);
    run.stats_filtered = run.stats_loaded;
    run.plan = plan_total_sample(1, 2, 1.0, 2);

    TrialResult ok;
    ok.config = {"m", MetricKind::euclidean, UmapParams{}, 2, 42};
    ok.ok = true;
    ok.k_used = 2;
    ok.silhouette_mean = 0.9;
    ok.ci_low = 0.85;
    ok.ci_high = 0.95;
    ok.embedding.coords = RowMatrix(4, 2, std::vector<double>{0, 0, 1, 0, 10, 0, 11, 0});
    for (const auto& r : run.sample) ok.embedding.row_ids.push_back(r.id);
    ok.model.k = 2;
    ok.model.assignments = {0, 0, 1, 1};
    ok.model.centroids = RowMatrix(2, 2, std::vector<double>{0.5, 0, 10.5, 0});
    TrialResult bad;
    bad.config = {"m", MetricKind::euclidean, TsneParams{}, 2, 42};
    bad.error = "t-SNE perplexity 30 is infeasible for n=4";
    run.grid.trials = {ok, bad};
    run.grid.winner = 0;
    run.grid.candidates = {0};
    run.grid.selection_trace = "winner: m/euclidean/umap-nn15\n";
    run.labels = labels_from_map({{0, "Violence"}, {1, "PII/Privacy"}}, 2);
    run.label_source = "file";
    run.frequency = frequency_table(ok.model.assignments, 2, run.sample, {"Violence", "PII/Privacy"});
    return run;
}

}  // namespace

TEST(Frequency, OnePerCell) {
    const auto t = frequency_table({0, 1, 0, 1}, 2, tagged({"a", "a", "b", "b"}));
    EXPECT_EQ(t.corpus_ids, (std::vector<std::string>{"a", "b"}));
    for (const auto& row : t.counts) EXPECT_EQ(row, (std::vector<std::size_t>{1, 1}));
    for (const auto& row : t.row_proportions)
        for (double p : row) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(Frequency, DegenerateRow) {
    const auto t = frequency_table({1, 1, 0}, 2, tagged({"a", "a", "b"}));
    EXPECT_DOUBLE_EQ(t.row_proportions[0][1], 1.0);
    EXPECT_DOUBLE_EQ(t.row_proportions[0][0], 0.0);
}

TEST(Frequency, MatchesTallyOracle) {
    std::mt19937_64 gen(3);
    std::vector<std::string> corpora;
    std::vector<std::size_t> assign;
    std::map<std::pair<std::string, std::size_t>, std::size_t> tally;
    for (int i = 0; i < 1000; ++i) {
        corpora.push_back("c" + std::to_string(gen() % 5));
        assign.push_back(gen() % 7);
        ++tally[{corpora.back(), assign.back()}];
    }
    const auto t = frequency_table(assign, 7, tagged(corpora));
    EXPECT_EQ(t.total(), 1000u);
    for (std::size_t r = 0; r < t.corpus_ids.size(); ++r)
        for (std::size_t j = 0; j < 7; ++j) {
            auto it = tally.find({t.corpus_ids[r], j});
            EXPECT_EQ(t.counts[r][j], it == tally.end() ? 0u : it->second);
        }
}

TEST(Frequency, CsvHasTotalsAndLabels) {
    const auto t = frequency_table({0, 1, 0}, 2, tagged({"a", "a", "b"}), {"Violence", "Other"});
    const auto rows = parse_delimited(t.counts_csv());
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].back(), "total");
    EXPECT_NE(rows[0][1].find("Violence"), std::string::npos);
    EXPECT_EQ(rows[1].back(), "2");
    EXPECT_THROW(frequency_table({0, 1}, 2, tagged({"a"})), ValidationError);
    EXPECT_THROW(frequency_table({0, 5}, 2, tagged({"a", "b"})), ValidationError);
}

TEST(Kde, SinglePointPeak) {
    const std::vector<double> v{3.0};
    EXPECT_NEAR(kde_density(v, 1.0, 3.0), 0.398942, 1e-6);
    EXPECT_NEAR(kde_density(v, 2.0, 3.0), 0.398942 / 2.0, 1e-6);
}

TEST(Kde, TwoPointMidpoint) {
    const std::vector<double> v{0.0, 10.0};
    const double expected = 2.0 * 0.5 / std::sqrt(2.0 * std::numbers::pi) * std::exp(-12.5);
    EXPECT_NEAR(kde_density(v, 1.0, 5.0), expected, 1e-15);
    EXPECT_NEAR(kde_density(v, 1.0, 5.0), 1.49e-6, 0.01e-6);
}

TEST(Kde, IntegratesToOne) {
    std::mt19937_64 gen(4);
    std::lognormal_distribution<double> ln(4.5, 1.0);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> v(50 + gen() % 500);
        for (double& x : v) x = ln(gen);
        KdeOptions opt;
        opt.clip_at_zero = false;
        const auto c = kde(v, opt);
        EXPECT_NEAR(trapezoid(c.grid, c.density), 1.0, 0.01);
        EXPECT_GE(c.grid.size(), 512u);
    }
}

TEST(Kde, SilvermanAndDegenerateData) {
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double sd = 0;
    for (double x : v) sd += (x - 5.5) * (x - 5.5);
    sd = std::sqrt(sd / 9.0);
    const double iqr = testsupport::quantile_oracle(v, 0.75) - testsupport::quantile_oracle(v, 0.25);
    EXPECT_NEAR(silverman_bandwidth(v), 0.9 * std::min(sd, iqr / 1.34) * std::pow(10.0, -0.2), 1e-12);
    const std::vector<double> same{4, 4, 4};
    EXPECT_THROW(kde(same), ValidationError);
    KdeOptions opt;
    opt.bandwidth = 1.0;
    EXPECT_NO_THROW(kde(same, opt));
    opt.bandwidth = -1.0;
    EXPECT_THROW(kde(same, opt), ValidationError);
}

TEST(Kde, GridClippedAtZeroForLengths) {
    const std::vector<double> v{1, 2, 3, 50};
    const auto c = kde(v);
    EXPECT_GE(c.grid.front(), 0.0);
    KdeOptions opt;
    opt.clip_at_zero = false;
    EXPECT_LT(kde(v, opt).grid.front(), 0.0);
}

TEST(Scatter, SvgAndSidecar) {
    Embedding2D e;
    e.coords = RowMatrix(4, 2, std::vector<double>{0, 0, 1, 0, 10, 0, 11, 1});
    e.row_ids = {"a", "b", "c", "d"};
    const auto recs = tagged({"x", "y", "x", "y"});
    const auto with = render_scatter(e, {0, 0, 1, 1}, {"Violence", "Hate/<Identity> Hate"}, recs);
    EXPECT_EQ(with.svg.rfind("<?xml", 0), 0u);
    EXPECT_NE(with.svg.find("</svg>"), std::string::npos);
    EXPECT_NE(with.svg.find("&lt;Identity&gt;"), std::string::npos);
    std::size_t anchors = 0;
    for (auto p = with.svg.find("cluster-label"); p != std::string::npos; p = with.svg.find("cluster-label", p + 1)) ++anchors;
    EXPECT_EQ(anchors, 2u);
    const auto rows = parse_delimited(with.table);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], (CsvRow{"id", "x", "y", "cluster", "label", "corpus"}));
    EXPECT_EQ(rows[3][4], "Hate/<Identity> Hate");

    const auto without = render_scatter(e, {0, 0, 1, 1}, {}, recs);
    EXPECT_EQ(without.svg.find("cluster-label"), std::string::npos);
    EXPECT_EQ(parse_delimited(without.table).size(), 5u);
}

TEST(WriteReport, SchemaAndFailures) {
    testsupport::TempDir dir("report");
    const auto run = tiny_run();
    const auto files = write_report(run, dir.path().string());
    for (const char* name : {"report", "grid", "timings", "frequency", "labels", "scatter_svg", "scatter_table", "coords"})
        ASSERT_TRUE(files.contains(name)) << name;
    const auto j = json::parse(testsupport::slurp(files.at("report")));
    EXPECT_EQ(j["schema_version"], 1);
    for (const char* key : {"tool_version", "generated_at", "seeds", "corpus", "outliers", "sample_plan", "grid",
                            "chosen_config", "labels", "warnings", "artifacts"})
        EXPECT_TRUE(j.contains(key)) << key;
    ASSERT_EQ(j["grid"]["failures"].size(), 1u);
    EXPECT_NE(j["grid"]["failures"][0]["error"].get<std::string>().find("infeasible"), std::string::npos);
    EXPECT_EQ(j["grid"]["trials"][1]["status"], "failed");
    EXPECT_EQ(j["chosen_config"]["k"], 2);
    EXPECT_TRUE(j["labels"]["complete"].get<bool>());
}

TEST(WriteReport, TablesAreByteIdenticalAcrossWrites) {
    testsupport::TempDir a("report"), b("report");
    const auto run = tiny_run();
    const auto fa = write_report(run, a.path().string());
    const auto fb = write_report(run, b.path().string());
    for (const auto& [name, path] : fa) {
        if (name == "report") continue;
        EXPECT_EQ(testsupport::slurp(path), testsupport::slurp(fb.at(name))) << name;
    }
}

TEST(WriteReport, GridCsvOmitsTimings) {
    const auto rows = parse_delimited(grid_csv(tiny_run().grid));
    for (const auto& h : rows[0]) EXPECT_EQ(h.find("time"), std::string::npos) << h;
    EXPECT_EQ(rows.size(), 3u);
}
