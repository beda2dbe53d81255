#include "hdae/checkpoint.hpp"
#include "hdae/code.hpp"
#include "hdae/config.hpp"
#include "hdae/hash.hpp"
#include "hdae/image_io.hpp"
#include "hdae/shapes.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include <fstream>

using namespace hdae;
using hdae::test::TempDir;
using hdae::test::tiny_model;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

std::string solid_png(int w, int h, cv::Scalar bgr) {
    cv::Mat m(h, w, CV_8UC3, bgr);
    std::vector<uchar> buf;
    cv::imencode(".png", m, buf);
    return {buf.begin(), buf.end()};
}

} // namespace

// ---- config ----

TEST(Config, JsonRoundTrip) {
    ModelConfig mc = tiny_model(Variant::HDAE_UPLUS);
    nlohmann::json j = mc;
    auto back = j.get<ModelConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(back.variant, Variant::HDAE_UPLUS);
    TrainConfig tc = hdae::test::tiny_train(9);
    nlohmann::json jt = tc;
    EXPECT_EQ(nlohmann::json(jt.get<TrainConfig>()), jt);
}

TEST(Config, RejectsUnknownSchemaVersion) {
    nlohmann::json j = ModelConfig{};
    j["schema_version"] = kConfigSchemaVersion + 1;
    EXPECT_THROW(j.get<ModelConfig>(), std::invalid_argument);
}

TEST(Config, RejectsUnknownKeys) {
    nlohmann::json j = TrainConfig{};
    j["data"]["shapes"]["size_min"] = 0.5;
    EXPECT_THROW(j.get<TrainConfig>(), std::invalid_argument);
    nlohmann::json m = ModelConfig{};
    m["diffusion"]["beta_min"] = 0.1;
    EXPECT_THROW(m.get<ModelConfig>(), std::invalid_argument);
    EXPECT_THROW(nlohmann::json::array().get<ModelConfig>(), std::invalid_argument);
    EXPECT_NO_THROW(nlohmann::json::object().get<ModelConfig>());
}

TEST(Config, VariantNames) {
    for (auto v : {Variant::DAE, Variant::DAE_WIDE, Variant::DAE_U, Variant::HDAE_E, Variant::HDAE_U,
                   Variant::HDAE_UPLUS}) {
        EXPECT_EQ(parse_variant(to_string(v)), v);
    }
    EXPECT_THROW(parse_variant("HDAE_X"), std::invalid_argument);
    EXPECT_EQ(parse_variant_list("DAE,HDAE_U").size(), 2u);
    EXPECT_THROW(parse_variant_list(""), std::invalid_argument);
}

TEST(Config, DefaultsValidate) {
    EXPECT_NO_THROW(ModelConfig{}.validate());
    EXPECT_NO_THROW(TrainConfig{}.validate());
    ModelConfig mc;
    EXPECT_EQ(mc.code_levels(), 4);
    EXPECT_EQ(mc.code_width(), 128);
    mc.variant = Variant::DAE_WIDE;
    EXPECT_EQ(mc.code_levels(), 1);
    EXPECT_EQ(mc.code_width(), 512);
    mc.variant = Variant::HDAE_UPLUS;
    EXPECT_EQ(mc.code_levels(), 8);
}

TEST(Config, ValidationErrors) {
    auto bad = [](auto mutate) {
        ModelConfig mc;
        mutate(mc);
        return mc;
    };
    EXPECT_THROW(bad([](ModelConfig& m) { m.levels = 5; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](ModelConfig& m) { m.variant = Variant::HDAE_UPLUS; }).validate(), std::invalid_argument);
    EXPECT_NO_THROW(bad([](ModelConfig& m) {
                        m.variant = Variant::HDAE_UPLUS;
                        m.levels = 2;
                    }).validate());
    EXPECT_THROW(bad([](ModelConfig& m) { m.image_size = 30; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](ModelConfig& m) { m.groups = 7; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](ModelConfig& m) { m.attention_levels = {4}; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](ModelConfig& m) { m.diffusion.inference_steps = 1001; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](ModelConfig& m) { m.channel_mult.clear(); }).validate(), std::invalid_argument);
    TrainConfig tc;
    tc.ema_decay = 1.0;
    EXPECT_THROW(tc.validate(), std::invalid_argument);
}

// ---- codes ----

TEST(Code, ShapesAndFlatLayout) {
    auto t = torch::arange(12, torch::kFloat32).reshape({1, 3, 4});
    HierarchicalCode c(t);
    EXPECT_EQ(c.flat_size(), 12);
    EXPECT_TRUE(torch::equal(c.flat(), torch::arange(12, torch::kFloat32).reshape({1, 12})));
    EXPECT_TRUE(torch::equal(HierarchicalCode::from_flat(c.flat(), 3, 4).tensor(), t));
    EXPECT_TRUE(torch::equal(c.level(2), t.select(1, 2)));
    EXPECT_THROW(c.level(3), std::out_of_range);
    EXPECT_THROW(HierarchicalCode::from_flat(c.flat(), 5, 4), std::invalid_argument);
    EXPECT_THROW(HierarchicalCode(torch::zeros({4})), std::invalid_argument);
    EXPECT_THROW(HierarchicalCode::from_levels({torch::zeros({1, 3}), torch::zeros({1, 4})}), std::invalid_argument);
    EXPECT_EQ(HierarchicalCode(torch::zeros({3, 4})).batch(), 1);
}

TEST(Code, JsonRoundTripExact) {
    auto c = HierarchicalCode(torch::randn({2, 3}));
    std::string hash;
    auto back = code_from_json(code_to_json(c, "abc123"), &hash);
    EXPECT_EQ(hash, "abc123");
    EXPECT_TRUE(torch::equal(back.tensor(), c.tensor()));
    auto j = nlohmann::json::parse(code_to_json(c, "h"));
    j["L"] = 4;
    EXPECT_THROW(code_from_json(j.dump()), std::invalid_argument);
}

TEST(Code, NoiseMapRoundTrip) {
    TempDir dir;
    auto xT = torch::randn({3, 5, 7});
    save_noise_map(dir / "x.bin", xT);
    EXPECT_TRUE(torch::equal(load_noise_map(dir / "x.bin"), xT));
    save_noise_map(dir / "y.bin", xT.unsqueeze(0));
    EXPECT_TRUE(torch::equal(load_noise_map(dir / "y.bin"), xT));
    auto bytes = read_bytes(dir / "x.bin");
    write_bytes(dir / "z.bin", bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(load_noise_map(dir / "z.bin"), std::runtime_error);
    EXPECT_THROW(save_noise_map(dir / "w.bin", torch::randn({2, 3, 4, 4})), std::invalid_argument);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripAndTamperDetection) {
    TempDir dir;
    Checkpoint ck;
    ck.config = {{"a", 1}, {"b", "x"}};
    ck.tensors["w"] = torch::randn({2, 3});
    ck.tensors["d"] = torch::randn({4}, torch::kFloat64);
    write_checkpoint(dir / "c.bin", ck);
    auto back = read_checkpoint(dir / "c.bin");
    EXPECT_EQ(back.config, ck.config);
    EXPECT_TRUE(torch::equal(back.tensors.at("w"), ck.tensors.at("w")));
    EXPECT_EQ(back.tensors.at("d").scalar_type(), torch::kFloat64);

    auto bytes = read_bytes(dir / "c.bin");
    auto pos = bytes.find("\"x\"");
    ASSERT_NE(pos, std::string::npos);
    auto tampered = bytes;
    tampered[pos + 1] = 'y';
    write_bytes(dir / "t.bin", tampered);
    EXPECT_THROW(read_checkpoint(dir / "t.bin"), std::runtime_error);
    write_bytes(dir / "m.bin", "NOTACKPT" + bytes.substr(8));
    EXPECT_THROW(read_checkpoint(dir / "m.bin"), std::runtime_error);
    write_bytes(dir / "s.bin", bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint(dir / "s.bin"), std::runtime_error);
}

TEST(Checkpoint, ModelRoundTripPreservesOutputs) {
    TempDir dir;
    DiffusionAutoencoder m(tiny_model()), ema(tiny_model());
    hdae::test::randomize_code_heads(m);
    save_model(dir / "m.hdae", m, &ema, {{"k", 1}}, 17);
    auto raw = load_model(dir / "m.hdae", false);
    auto shadow = load_model(dir / "m.hdae", true);
    EXPECT_EQ(raw.step, 17);
    EXPECT_EQ(raw.hash, sha256_file(dir / "m.hdae"));
    EXPECT_EQ(raw.hash.size(), 64u);
    auto x = torch::randn({2, 3, 8, 8});
    m->eval();
    raw.model->eval();
    auto c = m->encode_semantic(x);
    EXPECT_TRUE(torch::equal(m->predict_noise(x, 30, c), raw.model->predict_noise(x, 30, c)));
    ema->eval();
    shadow.model->eval();
    EXPECT_TRUE(torch::equal(ema->predict_noise(x, 30, c), shadow.model->predict_noise(x, 30, c)));
}

TEST(Checkpoint, ShapeMismatchRejected) {
    TempDir dir;
    DiffusionAutoencoder m(tiny_model());
    Checkpoint ck;
    put_module(ck, "model.", *m);
    write_checkpoint(dir / "c.bin", ck);
    auto other = tiny_model();
    other.code_dim = 6;
    DiffusionAutoencoder wrong(other);
    EXPECT_THROW(take_module(read_checkpoint(dir / "c.bin"), "model.", *wrong), std::runtime_error);
}

TEST(Hash, KnownDigests) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Sha256 h;
    h.update("a").update("bc");
    EXPECT_EQ(h.hex_digest(), sha256_hex("abc"));
}

// ---- shapes ----

TEST(Shapes, ZeroCountIsEmpty) {
    ShapesSpec s;
    s.count = 0;
    auto d = generate_shapes(s);
    EXPECT_EQ(d.size(), 0);
    EXPECT_EQ(d.images.size(0), 0);
}

TEST(Shapes, ByteDeterministic) {
    ShapesSpec s;
    s.count = 16;
    s.canvas = 16;
    s.seed = 42;
    auto a = generate_shapes(s), b = generate_shapes(s);
    EXPECT_TRUE(torch::equal(a.images, b.images));
    s.seed = 43;
    EXPECT_FALSE(torch::equal(a.images, generate_shapes(s).images));
}

TEST(Shapes, ValuesInRangeAndFactorsWithinSpec) {
    ShapesSpec s;
    s.count = 64;
    s.canvas = 16;
    auto d = generate_shapes(s);
    EXPECT_GE(d.images.min().item<float>(), -1.0f);
    EXPECT_LE(d.images.max().item<float>(), 1.0f);
    for (const auto& f : d.factors) {
        EXPECT_GE(f.size, s.size_min);
        EXPECT_LE(f.size, s.size_max);
        EXPECT_GE(f.shape, 0);
        EXPECT_LT(f.shape, 4);
    }
}

// Hue angle from RGB by the textbook max/min formula, as an independent check.
TEST(Shapes, RenderedHueTracksFactor) {
    ShapesSpec s;
    s.count = 200;
    s.canvas = 32;
    s.size_min = 0.7;
    s.size_max = 0.75;
    s.position_min = 0.49;
    s.position_max = 0.51;
    auto d = generate_shapes(s);
    std::vector<double> factor, measured;
    for (int64_t i = 0; i < d.size(); ++i) {
        auto px = (d.images[i].index({torch::indexing::Slice(), 16, 16}).to(torch::kFloat64) + 1.0) / 2.0;
        const double r = px[0].item<double>(), g = px[1].item<double>(), b = px[2].item<double>();
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        double h = 0;
        if (mx == r) h = 60.0 * std::fmod((g - b) / (mx - mn) + 6.0, 6.0);
        else if (mx == g) h = 60.0 * ((b - r) / (mx - mn) + 2.0);
        else h = 60.0 * ((r - g) / (mx - mn) + 4.0);
        factor.push_back(d.factors[static_cast<size_t>(i)].hue);
        measured.push_back(h);
    }
    auto f = torch::tensor(factor), m = torch::tensor(measured);
    auto fc = f - f.mean(), mc = m - m.mean();
    const double corr = ((fc * mc).sum() / (fc.norm() * mc.norm())).item<double>();
    EXPECT_GT(corr, 0.99);
}

TEST(Shapes, DegenerateRangeMustBeFlagged) {
    ShapesSpec s;
    s.hue_min = s.hue_max = 0.5;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.constant = {"hue"};
    EXPECT_NO_THROW(s.validate());
    s.size_min = 0.8;
    s.size_max = 0.5;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Shapes, MidpointLabels) {
    ShapesSpec s;
    s.count = 400;
    s.canvas = 8;
    s.supersample = 1;
    auto d = generate_shapes(s);
    auto labels = binary_labels(d, s, "hue");
    int ones = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        EXPECT_EQ(labels[i], d.factors[i].hue > 0.5 ? 1 : 0);
        ones += labels[i];
    }
    EXPECT_GT(ones, 150);
    EXPECT_LT(ones, 250);
    EXPECT_THROW(binary_labels(d, s, "texture"), std::invalid_argument);
}

TEST(Shapes, FactorCsv) {
    TempDir dir;
    ShapesSpec s;
    s.count = 3;
    s.canvas = 8;
    auto d = generate_shapes(s);
    write_factor_csv(dir / "f.csv", d);
    std::ifstream in(dir / "f.csv");
    std::string line;
    int rows = 0;
    std::getline(in, line);
    EXPECT_NE(line.find("hue"), std::string::npos);
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}

TEST(Shapes, SplitRatio) {
    auto split = split_indices(70000);
    EXPECT_EQ(split.train.size() + split.validation.size(), 70000u);
    const double frac = static_cast<double>(split.validation.size()) / 70000.0;
    EXPECT_NEAR(frac, 5.0 / 70.0, 0.01);
    EXPECT_EQ(is_validation_index(12345), is_validation_index(12345));
}

// ---- image io ----

TEST(ImageIo, WhiteImageIsAllOnes) {
    auto img = decode_image(solid_png(20, 12, {255, 255, 255}), 8);
    EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 8, 8}));
    EXPECT_TRUE(torch::allclose(img, torch::ones_like(img)));
}

TEST(ImageIo, ChannelOrderIsRgb) {
    auto img = decode_image(solid_png(8, 8, {0, 0, 255}), 8); // BGR red
    EXPECT_FLOAT_EQ(img[0][0][0].item<float>(), 1.0f);
    EXPECT_FLOAT_EQ(img[2][0][0].item<float>(), -1.0f);
}

TEST(ImageIo, UndecodableInputRejected) {
    EXPECT_THROW(decode_image("", 8), std::invalid_argument);
    EXPECT_THROW(decode_image("definitely not an image", 8), std::invalid_argument);
}

TEST(ImageIo, EmptyFolderErrors) {
    TempDir dir;
    EXPECT_THROW(load_image_folder(dir.path(), 8), std::runtime_error);
    EXPECT_THROW(load_image_folder(dir / "missing", 8), std::runtime_error);
    write_bytes(dir / "a.png", solid_png(4, 4, {0, 0, 0}));
    write_bytes(dir / "b.png", solid_png(4, 4, {255, 255, 255}));
    auto batch = load_image_folder(dir.path(), 4);
    EXPECT_EQ(batch.size(0), 2);
    EXPECT_FLOAT_EQ(batch[0].mean().item<float>(), -1.0f);
}

TEST(ImageIo, GoldenCropResize) {
    auto img = read_image(std::filesystem::path(HDAE_FIXTURE_DIR) / "resize_src.png", 32);
    EXPECT_NEAR(img.to(torch::kFloat64).sum().item<double>(), -408.59607843137246, 1e-3);
    auto u8 = ((img + 1.0) * 127.5).round().to(torch::kUInt8).contiguous();
    std::string bytes(reinterpret_cast<const char*>(u8.data_ptr<uint8_t>()), static_cast<size_t>(u8.numel()));
    EXPECT_EQ(sha256_hex(bytes), "237b08d99caf296b34de8f99fed2044b56e009616286f01f6b3ac7ada4cfb999");
}

TEST(ImageIo, PngRoundTripAndGrid) {
    auto img = torch::rand({3, 6, 5}) * 2 - 1;
    auto back = decode_image(encode_png(img), 5);
    // crop keeps the central 5x5 rows 0..4 offset by (6-5)/2 = 0
    EXPECT_LE((back - img.narrow(1, 0, 5)).abs().max().item<float>(), 1.0f / 127.0f + 1e-6f);
    auto grid = make_grid(torch::zeros({5, 3, 4, 4}), 3, 1);
    EXPECT_EQ(grid.size(1), 2 * 4 + 3);
    EXPECT_EQ(grid.size(2), 3 * 4 + 4);
}
