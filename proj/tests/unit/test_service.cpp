#include "hdae/checkpoint.hpp"
#include "hdae/editing.hpp"
#include "hdae/hash.hpp"
#include "hdae/image_io.hpp"
#include "hdae/service.hpp"
#include "hdae/shapes.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <future>
#include <thread>

using namespace hdae;
using hdae::test::TempDir;
using hdae::test::tiny_model;
using json = nlohmann::json;

namespace {

AttributeDirection toy_attribute(const std::string& name, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto w = torch::randn({8}, gen, torch::kFloat64);
    AttributeDirection d;
    d.name = name;
    d.n.assign(w.data_ptr<double>(), w.data_ptr<double>() + 8);
    d.levels = 2;
    d.dim = 4;
    d.n_hat = normalize_direction(d.n);
    return d;
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        DiffusionAutoencoder m(tiny_model());
        hdae::test::randomize_code_heads(m);
        save_model(dir_ / "m.hdae", m, nullptr, json::object(), 0);
        registry_ = {toy_attribute("hue", 1), toy_attribute("shape", 2)};
        ServiceConfig cfg;
        cfg.max_body_bytes = 64 * 1024;
        cfg.session_ttl = std::chrono::seconds(60);
        service_ = std::make_unique<InferenceService>(load_model(dir_ / "m.hdae"), registry_, cfg,
                                                      [this] { return now_; });
    }

    std::string png(uint64_t seed) {
        ShapesSpec s;
        s.canvas = 16;
        s.count = 1;
        s.seed = seed;
        return encode_png(generate_shapes(s).images[0]);
    }

    std::string session(uint64_t seed) {
        auto r = service_->encode(png(seed));
        EXPECT_EQ(r.status, 200) << r.body;
        return json::parse(r.body).at("session_id").get<std::string>();
    }

    TempDir dir_;
    std::vector<AttributeDirection> registry_;
    std::chrono::steady_clock::time_point now_{};
    std::unique_ptr<InferenceService> service_;
};

} // namespace

TEST_F(ServiceTest, EncodeReturnsSessionAndShape) {
    auto r = service_->encode(png(0));
    ASSERT_EQ(r.status, 200);
    auto j = json::parse(r.body);
    EXPECT_EQ(j["session_id"].get<std::string>().size(), 32u);
    EXPECT_EQ(j["L"], 2);
    EXPECT_EQ(j["d"], 4);
}

TEST_F(ServiceTest, EncodeErrors) {
    EXPECT_EQ(service_->encode("plain text, not an image").status, 400);
    EXPECT_EQ(service_->encode(std::string(64 * 1024 + 1, 'x')).status, 413);
}

TEST_F(ServiceTest, SameImageGivesDistinctSessionsSameCode) {
    auto a = session(3), b = session(3);
    EXPECT_NE(a, b);
    auto ca = service_->session_code(a), cb = service_->session_code(b);
    ASSERT_EQ(ca.status, 200);
    EXPECT_EQ(ca.body, cb.body);
    std::string hash;
    code_from_json(ca.body, &hash);
    EXPECT_EQ(hash, service_->model_hash());
    auto thumb = service_->session_thumbnail(a);
    EXPECT_EQ(thumb.content_type, "image/png");
    EXPECT_EQ(service_->session_thumbnail("nope").status, 404);
}

TEST_F(ServiceTest, IdentityEditsMatchReconstruct) {
    auto id = session(4);
    auto rec = service_->reconstruct(json{{"session_id", id}}.dump());
    ASSERT_EQ(rec.status, 200);
    EXPECT_EQ(rec.content_type, "image/png");
    auto full = service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", 0.0}, {"k", "full"}}.dump());
    ASSERT_EQ(full.status, 200);
    EXPECT_EQ(full.body, rec.body);
    auto k0 = service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", 3.0}, {"k", 0}}.dump());
    EXPECT_EQ(k0.body, rec.body);
}

TEST_F(ServiceTest, LogitHeaderIncreasesWithAlpha) {
    auto id = session(5);
    double prev = -1e300;
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
        auto r = service_->edit(json{{"session_id", id}, {"attribute", "shape"}, {"alpha", alpha}, {"k", 3}}.dump());
        ASSERT_EQ(r.status, 200);
        const double after = std::stod(r.headers.at("X-Logit-After"));
        EXPECT_GT(after, prev);
        prev = after;
        if (alpha == 0.0) {
            EXPECT_EQ(r.headers.at("X-Logit-Before"), r.headers.at("X-Logit-After"));
        }
    }
}

TEST_F(ServiceTest, EditErrors) {
    auto id = session(6);
    EXPECT_EQ(service_->edit(json{{"session_id", "missing"}, {"attribute", "hue"}, {"alpha", 1.0}}.dump()).status, 404);
    EXPECT_EQ(service_->edit(json{{"session_id", id}, {"attribute", "smile"}, {"alpha", 1.0}}.dump()).status, 422);
    EXPECT_EQ(service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", 1.0}, {"k", 9}}.dump()).status,
              422);
    EXPECT_EQ(service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", 1.0}, {"k", -1}}.dump()).status,
              422);
    EXPECT_EQ(
        service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", 1.0}, {"k", "most"}}.dump()).status,
        422);
    EXPECT_EQ(service_->edit(json{{"session_id", id}, {"attribute", "hue"}}.dump()).status, 400);
    EXPECT_EQ(service_->edit("{not json").status, 400);
    EXPECT_EQ(service_->edit(json{{"session_id", id}, {"attribute", "hue"}, {"alpha", "big"}}.dump()).status, 400);
}

TEST_F(ServiceTest, MixAndInterpolateEndpoints) {
    auto a = session(7), b = session(8);
    auto rec_a = service_->reconstruct(json{{"session_id", a}}.dump());
    auto rec_b = service_->reconstruct(json{{"session_id", b}}.dump());
    auto mix0 = service_->mix(json{{"session_a", a}, {"session_b", b}, {"split", 0}}.dump());
    ASSERT_EQ(mix0.status, 200);
    EXPECT_EQ(mix0.body, rec_a.body);
    auto mix1 = service_->mix(json{{"session_a", a}, {"session_b", b}, {"split", 1}}.dump());
    EXPECT_EQ(mix1.body, service_->mix(json{{"session_a", a}, {"session_b", b}, {"split", 1}}.dump()).body);
    EXPECT_EQ(service_->mix(json{{"session_a", a}, {"session_b", b}, {"split", 3}}.dump()).status, 422);
    EXPECT_EQ(service_->mix(json{{"session_a", a}, {"session_b", "zz"}, {"split", 1}}.dump()).status, 404);

    auto end = service_->interpolate(
        json{{"session_a", a}, {"session_b", b}, {"lambdas", {1.0, 1.0}}, {"xT_weight", 1.0}}.dump());
    ASSERT_EQ(end.status, 200);
    EXPECT_EQ(end.body, rec_b.body);
    auto start = service_->interpolate(json{{"session_a", a}, {"session_b", b}, {"lambdas", {0.0, 0.0}}}.dump());
    EXPECT_EQ(start.body, rec_a.body);
    EXPECT_EQ(service_->interpolate(json{{"session_a", a}, {"session_b", b}, {"lambdas", {0.5}}}.dump()).status, 422);
    EXPECT_EQ(
        service_->interpolate(json{{"session_a", a}, {"session_b", b}, {"lambdas", {0.5, 2.0}}}.dump()).status, 422);
    EXPECT_EQ(service_->interpolate(json{{"session_a", a}, {"session_b", b}}.dump()).status, 400);
}

TEST_F(ServiceTest, AttributesMassSumsToOne) {
    auto r = service_->attributes();
    auto arr = json::parse(r.body);
    ASSERT_EQ(arr.size(), 2u);
    for (const auto& a : arr) {
        double total = 0;
        for (double m : a["mass"]) total += m;
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_GE(a["argmax_level"].get<int>(), 0);
    }
    InferenceService empty(load_model(dir_ / "m.hdae"), {});
    EXPECT_EQ(json::parse(empty.attributes().body), json::array());
}

TEST_F(ServiceTest, RegistryShapeMismatchRejected) {
    auto bad = toy_attribute("x", 3);
    bad.levels = 4;
    bad.dim = 2;
    EXPECT_THROW(InferenceService(load_model(dir_ / "m.hdae"), {bad}), std::invalid_argument);
}

TEST_F(ServiceTest, HealthEchoesHash) {
    auto j = json::parse(service_->health().body);
    EXPECT_EQ(j["model_hash"], sha256_file(dir_ / "m.hdae"));
    EXPECT_EQ(j["variant"], "HDAE_U");
    EXPECT_EQ(j["image_size"], 8);
}

TEST_F(ServiceTest, SessionsExpireAfterTtl) {
    auto id = session(9);
    now_ += std::chrono::seconds(59);
    EXPECT_EQ(service_->reconstruct(json{{"session_id", id}}.dump()).status, 200);
    now_ += std::chrono::seconds(1);
    EXPECT_EQ(service_->reconstruct(json{{"session_id", id}}.dump()).status, 404);
    EXPECT_EQ(service_->sessions().size(), 0u);
}

TEST_F(ServiceTest, DispatchRoutesAndCors) {
    auto health = service_->dispatch("GET", "/api/health", "");
    EXPECT_EQ(health.status, 200);
    EXPECT_EQ(health.headers.at("Access-Control-Allow-Origin"), "*");
    EXPECT_NE(health.headers.at("Access-Control-Expose-Headers").find("X-Logit-After"), std::string::npos);
    EXPECT_EQ(service_->dispatch("OPTIONS", "/api/edit", "").status, 204);
    EXPECT_EQ(service_->dispatch("GET", "/api/nowhere", "").status, 404);
    EXPECT_EQ(service_->dispatch("GET", "/api/sessions/abc/other", "").status, 404);
    auto enc = service_->dispatch("POST", "/api/encode", png(1));
    ASSERT_EQ(enc.status, 200);
    auto id = json::parse(enc.body)["session_id"].get<std::string>();
    EXPECT_EQ(service_->dispatch("GET", "/api/sessions/" + id + "/code", "").status, 200);
    EXPECT_EQ(service_->dispatch("POST", "/api/reconstruct", json{{"session_id", id}}.dump()).status, 200);
}

TEST(GenerationQueue, RejectsBeyondDepth) {
    GenerationQueue q(0);
    std::promise<void> started, release;
    auto release_future = release.get_future().share();
    std::thread worker([&] {
        q.run([&] {
            started.set_value();
            release_future.wait();
        });
    });
    started.get_future().wait();
    bool ran = false;
    EXPECT_FALSE(q.run([&] { ran = true; }));
    EXPECT_FALSE(ran);
    release.set_value();
    worker.join();
    EXPECT_TRUE(q.run([&] { ran = true; }));
    EXPECT_TRUE(ran);
    EXPECT_EQ(q.pending(), 0u);
}

TEST(GenerationQueue, SerializesJobs) {
    GenerationQueue q(8);
    std::atomic<int> inside{0}, worst{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&] {
            q.run([&] {
                worst = std::max(worst.load(), ++inside);
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
                --inside;
            });
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(worst.load(), 1);
}

TEST_F(ServiceTest, LiveHttpSmoke) {
    const int port = 20000 + static_cast<int>(std::random_device{}() % 20000);
    std::thread server([&] { serve(*service_, "127.0.0.1", port); });
    httplib::Client cli("127.0.0.1", port);
    httplib::Result res;
    for (int i = 0; i < 100 && !res; ++i) {
        res = cli.Get("/api/health");
        if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    auto enc = cli.Post("/api/encode", png(2), "image/png");
    ASSERT_TRUE(enc);
    EXPECT_EQ(enc->status, 200);
    auto big = cli.Post("/api/encode", std::string(64 * 1024 + 10, 'x'), "application/octet-stream");
    ASSERT_TRUE(big);
    EXPECT_EQ(big->status, 413);
    stop_server();
    server.join();
}
