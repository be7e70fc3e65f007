#include <gtest/gtest.h>

#include <atomic>
#include <mutex>

#include "mock_server.hpp"
#include "semortho/embed.hpp"
#include "support.hpp"

using namespace semortho;
using testsupport::TempDir;

namespace {

EmbeddingMatrix sample_matrix(std::size_t n, std::size_t d) {
    EmbeddingMatrix m;
    m.model_id = "toy model/v1";
    m.dim = d;
    m.vectors = testsupport::random_matrix(n, d, 3);
    for (std::size_t i = 0; i < n; ++i) m.row_ids.push_back("p" + std::to_string(i));
    return m;
}

std::vector<PromptRecord> records(std::size_t n) {
    std::vector<PromptRecord> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_record("p" + std::to_string(i), "c", "text " + std::to_string(i)));
    return out;
}

ServiceConfig fast_service(const std::string& url) {
    ServiceConfig s;
    s.endpoint = url;
    s.model_id = "mock-embed";
    s.timeout = std::chrono::milliseconds(2000);
    s.retries = 2;
    s.backoff = std::chrono::milliseconds(5);
    return s;
}

/// Embedding for "text i" is [i, 2i, 1].
nlohmann::json embed_inputs(const nlohmann::json& inputs, std::size_t dim_override = 0) {
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        const double i = std::stod(inputs[j].get<std::string>().substr(5));
        std::vector<double> v{i, 2 * i, 1.0};
        if (dim_override) v.resize(dim_override, 0.5);
        data.push_back({{"index", j}, {"embedding", v}});
    }
    return {{"model", "mock-embed"}, {"data", data}};
}

}  // namespace

TEST(VectorFile, BinaryRoundTripIsFloatExact) {
    TempDir dir("vec");
    auto m = sample_matrix(20, 7);
    write_vector_file(dir.file("m.vec"), m);
    const auto back = read_vector_file(dir.file("m.vec"));
    EXPECT_EQ(back.model_id, m.model_id);
    EXPECT_EQ(back.row_ids, m.row_ids);
    ASSERT_EQ(back.dim, 7u);
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t d = 0; d < 7; ++d) EXPECT_EQ(back.vectors(i, d), static_cast<double>(static_cast<float>(m.vectors(i, d))));
}

TEST(VectorFile, TextRoundTripIsExact) {
    TempDir dir("vec");
    auto m = sample_matrix(10, 4);
    write_vector_file(dir.file("m.vec"), m, VectorEncoding::text);
    const auto back = read_vector_file(dir.file("m.vec"));
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(back.vectors(i, d), m.vectors(i, d));
}

TEST(VectorFile, MalformedFilesAreRejected) {
    TempDir dir("vec");
    testsupport::write(dir.file("a"), "NOTVEC\n");
    EXPECT_THROW(read_vector_file(dir.file("a")), ValidationError);
    testsupport::write(dir.file("b"), "SEMVEC 1\ndim 2\ncount 1\nmodel_id m\nencoding text\n\np0\t1 2 3\n");
    EXPECT_THROW(read_vector_file(dir.file("b")), ValidationError);
    testsupport::write(dir.file("c"), "SEMVEC 1\ndim 2\ncount 1\nmodel_id m\nencoding text\n\np0\t1 nan\n");
    EXPECT_THROW(read_vector_file(dir.file("c")), ValidationError);
    auto m = sample_matrix(3, 2);
    write_vector_file(dir.file("d"), m);
    auto bytes = testsupport::slurp(dir.file("d"));
    testsupport::write(dir.file("d"), bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_vector_file(dir.file("d")), ValidationError);
}

TEST(ImportEmbeddings, ReordersToExpectedIds) {
    TempDir dir("vec");
    auto m = sample_matrix(5, 3);
    write_vector_file(dir.file("m.vec"), m, VectorEncoding::text);
    const auto got = import_embeddings(dir.file("m.vec"), {"p4", "p0", "p2", "p1", "p3"});
    EXPECT_EQ(got.row_ids.front(), "p4");
    EXPECT_EQ(got.vectors(0, 1), m.vectors(4, 1));
    EXPECT_EQ(got.vectors(1, 2), m.vectors(0, 2));
}

TEST(ImportEmbeddings, MissingIdIsNamed) {
    TempDir dir("vec");
    write_vector_file(dir.file("m.vec"), sample_matrix(3, 2));
    try {
        import_embeddings(dir.file("m.vec"), {"p0", "p1", "p2", "p9"});
        FAIL() << "expected validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("id mismatch"), std::string::npos) << msg;
        EXPECT_NE(msg.find("p9"), std::string::npos) << msg;
    }
    EXPECT_THROW(import_embeddings(dir.file("m.vec"), {"p0", "p1"}), ValidationError);
}

TEST(Normalize, RowsHaveUnitNorm) {
    auto m = l2_normalize(sample_matrix(50, 9));
    EXPECT_TRUE(m.normalized);
    for (std::size_t i = 0; i < 50; ++i) {
        double ss = 0;
        for (double v : m.vectors.row(i)) ss += v * v;
        EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-12);
    }
}

TEST(Normalize, ZeroRowIsNumericalError) {
    auto m = sample_matrix(3, 2);
    m.vectors(1, 0) = 0;
    m.vectors(1, 1) = 0;
    EXPECT_THROW(l2_normalize(m), NumericalError);
}

TEST(EmbeddingClient, RowsFollowRecordOrderAcrossBatchSizes) {
    std::atomic<int> calls{0};
    testsupport::MockServer server("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        const auto body = nlohmann::json::parse(req.body);
        EXPECT_EQ(body["model"], "mock-embed");
        res.set_content(embed_inputs(body["input"]).dump(), "application/json");
    });
    const auto recs = records(23);
    for (std::size_t batch : {1u, 5u, 64u}) {
        for (unsigned par : {1u, 3u}) {
            calls = 0;
            EmbeddingClientConfig cfg{fast_service(server.url("/v1/embeddings")), batch, par};
            const auto m = fetch_embeddings(cfg, recs);
            EXPECT_EQ(calls.load(), static_cast<int>((23 + batch - 1) / batch));
            ASSERT_EQ(m.rows(), 23u);
            ASSERT_EQ(m.dim, 3u);
            for (std::size_t i = 0; i < 23; ++i) {
                EXPECT_EQ(m.row_ids[i], recs[i].id);
                EXPECT_EQ(m.vectors(i, 0), static_cast<double>(i));
                EXPECT_EQ(m.vectors(i, 1), 2.0 * static_cast<double>(i));
            }
        }
    }
}

TEST(EmbeddingClient, RetriesTransientFailures) {
    std::atomic<int> calls{0};
    testsupport::MockServer server("/e", [&](const httplib::Request& req, httplib::Response& res) {
        if (calls++ < 2) {
            res.status = 503;
            return;
        }
        res.set_content(embed_inputs(nlohmann::json::parse(req.body)["input"]).dump(), "application/json");
    });
    EmbeddingClientConfig cfg{fast_service(server.url("/e")), 64, 1};
    const auto m = fetch_embeddings(cfg, records(4));
    EXPECT_EQ(calls.load(), 3);
    EXPECT_EQ(m.rows(), 4u);
}

TEST(EmbeddingClient, PermanentFailureIsServiceError) {
    testsupport::MockServer server("/e", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    EmbeddingClientConfig cfg{fast_service(server.url("/e")), 2, 1};
    EXPECT_THROW(fetch_embeddings(cfg, records(4)), ServiceError);
}

TEST(EmbeddingClient, DimensionDriftIsServiceError) {
    std::atomic<int> calls{0};
    testsupport::MockServer server("/e", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(embed_inputs(body["input"], calls++ == 1 ? 4 : 0).dump(), "application/json");
    });
    EmbeddingClientConfig cfg{fast_service(server.url("/e")), 2, 1};
    try {
        fetch_embeddings(cfg, records(6));
        FAIL() << "expected service error";
    } catch (const ServiceError& e) {
        EXPECT_NE(std::string(e.what()).find("drift"), std::string::npos) << e.what();
    }
}

TEST(EmbeddingClient, UnreachableEndpointIsServiceError) {
    EmbeddingClientConfig cfg{fast_service("http://127.0.0.1:9/e"), 8, 1};
    cfg.service.retries = 0;
    EXPECT_THROW(fetch_embeddings(cfg, records(2)), ServiceError);
}
