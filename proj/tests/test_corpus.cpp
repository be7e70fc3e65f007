#include <gtest/gtest.h>

#include <random>

#include "semortho/corpus.hpp"
#include "support.hpp"

using namespace semortho;
using testsupport::TempDir;

namespace {

std::vector<PromptRecord> records_with_lengths(const std::vector<std::size_t>& lengths, const std::string& corpus = "c") {
    std::vector<PromptRecord> out;
    for (std::size_t i = 0; i < lengths.size(); ++i)
        out.push_back(make_record(corpus + "-" + std::to_string(i), corpus, std::string(lengths[i], 'x')));
    return out;
}

}  // namespace

TEST(LoadCorpus, ConcatenatesFilesWithCorpusIds) {
    TempDir dir("corpus");
    testsupport::write(dir.file("a.jsonl"), "{\"id\":\"a1\",\"text\":\"one\"}\n{\"id\":\"a2\",\"text\":\"two\"}\n"
                                            "{\"id\":\"a3\",\"text\":\"three\"}\n");
    testsupport::write(dir.file("b.jsonl"), "{\"id\":\"b1\",\"text\":\"uno\"}\n\n{\"id\":\"b2\",\"text\":\"dos\"}\n"
                                            "{\"id\":\"b3\",\"text\":\"tres\"}\n");
    const auto recs = load_corpus({{"alpha", dir.file("a.jsonl")}, {"beta", dir.file("b.jsonl")}});
    ASSERT_EQ(recs.size(), 6u);
    EXPECT_EQ(corpus_ids(recs), (std::vector<std::string>{"alpha", "beta"}));
    EXPECT_EQ(recs[3].id, "b1");
    EXPECT_EQ(recs[3].corpus_id, "beta");
    EXPECT_EQ(recs[2].char_length, 5u);
}

TEST(LoadCorpus, EmptyTextNamesTheRow) {
    TempDir dir("corpus");
    testsupport::write(dir.file("a.jsonl"), "{\"id\":\"a1\",\"text\":\"ok\"}\n{\"id\":\"a2\",\"text\":\"\"}\n");
    try {
        load_corpus({{"alpha", dir.file("a.jsonl")}});
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("a.jsonl"), std::string::npos) << msg;
        EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    }
}

TEST(LoadCorpus, RejectsDuplicateIdsAcrossFiles) {
    TempDir dir("corpus");
    testsupport::write(dir.file("a.jsonl"), "{\"id\":\"x\",\"text\":\"ok\"}\n");
    testsupport::write(dir.file("b.jsonl"), "{\"id\":\"x\",\"text\":\"ok\"}\n");
    EXPECT_THROW(load_corpus({{"a", dir.file("a.jsonl")}, {"b", dir.file("b.jsonl")}}), ValidationError);
}

TEST(LoadCorpus, MissingFileIsValidationError) {
    EXPECT_THROW(load_corpus({{"a", "/nonexistent/file.jsonl"}}), ValidationError);
}

TEST(LoadCorpus, DelimitedRowsGetPositionalIds) {
    TempDir dir("corpus");
    testsupport::write(dir.file("a.csv"), "corpus,text\nx,\"hello, world\"\ny,second\n");
    CorpusSchema schema;
    schema.format = CorpusFormat::delimited;
    schema.has_header = true;
    const auto recs = load_corpus({{"", dir.file("a.csv")}}, schema);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].corpus_id, "x");
    EXPECT_EQ(recs[0].text, "hello, world");
    EXPECT_EQ(recs[1].id, "y-1");
}

TEST(LoadCorpus, FiveCorporaGiveFiveIds) {
    TempDir dir("corpus");
    std::vector<CorpusSource> src;
    for (int c = 0; c < 5; ++c) {
        const auto f = dir.file("c" + std::to_string(c) + ".jsonl");
        testsupport::write(f, "{\"id\":\"c" + std::to_string(c) + "\",\"text\":\"t\"}\n");
        src.push_back({"corpus" + std::to_string(c), f});
    }
    EXPECT_EQ(corpus_ids(load_corpus(src)).size(), 5u);
}

TEST(SampleSize, DerivedExamples) {
    EXPECT_EQ(required_sample_size({0.5, 0.05, 0.8, Tails::two}), 63u);
    EXPECT_EQ(required_sample_size({0.5, 0.15, 0.8, Tails::two}), 42u);
    EXPECT_EQ(required_sample_size({2.0, 0.05, 0.8, Tails::two}), 4u);
    EXPECT_NEAR(sample_size_exact({0.5, 0.05, 0.8, Tails::two}), 62.79, 0.01);
}

TEST(SampleSize, QuarterAtDoubleEffect) {
    for (double alpha : {0.05, 0.15})
        EXPECT_NEAR(sample_size_exact({1.0, alpha, 0.8, Tails::two}) * 4.0,
                    sample_size_exact({0.5, alpha, 0.8, Tails::two}), 1e-9);
}

TEST(SampleSize, MatchesBoostOracle) {
    for (double d : {0.2, 0.5, 0.8, 1.0})
        for (double a : {0.05, 0.15})
            for (double p : {0.8, 0.9})
                for (bool two : {true, false}) {
                    const double oracle = testsupport::sample_size_oracle(d, a, p, two);
                    EXPECT_NEAR(sample_size_exact({d, a, p, two ? Tails::two : Tails::one}), oracle, 1e-7 * oracle);
                }
}

TEST(SampleSize, RejectsBadParameters) {
    EXPECT_THROW(required_sample_size({0.0, 0.05, 0.8, Tails::two}), ValidationError);
    EXPECT_THROW(required_sample_size({0.5, 1.0, 0.8, Tails::two}), ValidationError);
    EXPECT_THROW(required_sample_size({0.5, 0.05, 0.0, Tails::two}), ValidationError);
}

TEST(SamplePlan, PublishedTotals) {
    auto p = plan_total_sample(109, 15, 1.0, 5);
    EXPECT_EQ(p.n_per_benchmark, 1635u);
    EXPECT_EQ(p.n_total, 8175u);
    p = plan_total_sample(109, 15, 1.2, 5);
    EXPECT_EQ(p.n_per_benchmark, 1962u);
    EXPECT_EQ(p.n_total, 9810u);
    EXPECT_EQ(plan_total_sample(1, 1, 1.0, 1).n_total, 1u);
    EXPECT_THROW(plan_total_sample(1, 1, 0.5, 1), ValidationError);
}

TEST(Outliers, IqrHandExample) {
    const std::vector<double> v{1, 2, 3, 4, 100};
    const auto b = outlier_bounds(v, OutlierMethod::iqr);
    EXPECT_DOUBLE_EQ(b.q1, 2.0);
    EXPECT_DOUBLE_EQ(b.q3, 4.0);
    EXPECT_DOUBLE_EQ(b.lower, -1.0);
    EXPECT_DOUBLE_EQ(b.upper, 7.0);
    const auto part = filter_outliers(records_with_lengths({1, 2, 3, 4, 100}), b);
    ASSERT_EQ(part.removed.size(), 1u);
    EXPECT_EQ(part.removed[0].char_length, 100u);
}

TEST(Outliers, ZscoreHandExample) {
    const std::vector<double> v{0, 0, 0, 0, 100};
    const auto b = outlier_bounds(v, OutlierMethod::zscore);
    EXPECT_DOUBLE_EQ(b.mu, 20.0);
    EXPECT_DOUBLE_EQ(b.sigma, 40.0);
    EXPECT_DOUBLE_EQ(b.lower, -100.0);
    EXPECT_DOUBLE_EQ(b.upper, 140.0);
    const auto part = filter_outliers(records_with_lengths({0, 0, 0, 0, 100}), b);
    EXPECT_EQ(part.retained.size(), 5u);
    EXPECT_TRUE(part.removed.empty());
}

TEST(Outliers, ZeroSpreadKeepsEverything) {
    const std::vector<double> v{5, 5, 5, 5};
    for (auto m : {OutlierMethod::iqr, OutlierMethod::zscore}) {
        const auto b = outlier_bounds(v, m);
        EXPECT_TRUE(b.contains(5.0));
        EXPECT_TRUE(filter_outliers(records_with_lengths({5, 5, 5, 5}), b).removed.empty());
    }
}

TEST(Outliers, RandomArraysMatchOracles) {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 5 + gen() % 200;
        std::vector<std::size_t> lens(n);
        for (auto& l : lens) l = gen() % 50 + (gen() % 10 == 0 ? gen() % 5000 : 0);
        const auto recs = records_with_lengths(lens);
        const auto v = lengths_of(recs);
        for (auto m : {OutlierMethod::iqr, OutlierMethod::zscore}) {
            const auto keep = m == OutlierMethod::iqr ? testsupport::iqr_keep_oracle(v) : testsupport::z_keep_oracle(v);
            const auto part = filter_outliers(recs, outlier_bounds(v, m));
            ASSERT_EQ(part.retained.size(), keep.size());
            for (std::size_t i = 0; i < keep.size(); ++i) EXPECT_EQ(part.retained[i].id, recs[keep[i]].id);
        }
    }
}

TEST(Outliers, PerCorpusScopeUsesOwnBounds) {
    auto recs = records_with_lengths({10, 10, 11, 12, 10, 300}, "a");
    auto more = records_with_lengths({300, 310, 320, 305, 315, 299}, "b");
    recs.insert(recs.end(), more.begin(), more.end());
    OutlierSummary s;
    const auto part = filter_corpus(recs, OutlierMethod::iqr, OutlierScope::per_corpus, &s);
    EXPECT_EQ(s.bounds.size(), 2u);
    ASSERT_EQ(part.removed.size(), 1u);
    EXPECT_EQ(part.removed[0].id, "a-5");
    EXPECT_EQ(s.retained + s.removed, recs.size());
}

TEST(StratifiedSample, QuotasShortfallsAndDeterminism) {
    std::vector<PromptRecord> recs;
    for (int c = 0; c < 3; ++c) {
        const std::size_t size = c == 2 ? 5 : 50;
        for (std::size_t i = 0; i < size; ++i)
            recs.push_back(make_record("c" + std::to_string(c) + "-" + std::to_string(i), "c" + std::to_string(c), "text"));
    }
    const auto plan = plan_total_sample(2, 5, 1.0, 3);  // 10 per benchmark
    const auto a = stratified_sample(recs, plan, 7);
    const auto b = stratified_sample(recs, plan, 7);
    const auto c = stratified_sample(recs, plan, 8);
    EXPECT_EQ(a.records.size(), 25u);
    ASSERT_EQ(a.shortfalls.size(), 1u);
    EXPECT_EQ(a.shortfalls[0].corpus_id, "c2");
    EXPECT_EQ(a.shortfalls[0].available, 5u);
    std::vector<std::string> ia, ib, ic;
    for (const auto& r : a.records) ia.push_back(r.id);
    for (const auto& r : b.records) ib.push_back(r.id);
    for (const auto& r : c.records) ic.push_back(r.id);
    EXPECT_EQ(ia, ib);
    EXPECT_NE(ia, ic);
}

TEST(StratifiedSample, PaperScaleTotal) {
    std::vector<PromptRecord> recs;
    for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 2000; ++i)
            recs.push_back(make_record(std::to_string(c) + "-" + std::to_string(i), std::to_string(c), "t"));
    const auto s = stratified_sample(recs, plan_total_sample(109, 15, 1.0, 5), 1);
    EXPECT_EQ(s.records.size(), 8175u);
    EXPECT_TRUE(s.shortfalls.empty());
}

TEST(LengthStats, Examples) {
    auto one = compute_length_stats(records_with_lengths({157}));
    EXPECT_DOUBLE_EQ(one.pooled.median, 157.0);
    EXPECT_DOUBLE_EQ(one.pooled.mean, 157.0);
    auto five = compute_length_stats(records_with_lengths({1, 2, 3, 4, 5}));
    EXPECT_DOUBLE_EQ(five.pooled.median, 3.0);
    EXPECT_DOUBLE_EQ(five.pooled.q1, 2.0);
    EXPECT_DOUBLE_EQ(five.pooled.q3, 4.0);
    EXPECT_EQ(five.per_corpus.at("c").count, 5u);
}
