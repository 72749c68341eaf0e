#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "support.hpp"
#include "tkc/io.hpp"

using namespace tkc;
using namespace tkc::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / fs::path("tkc-io-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                     "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

ErrorCode decode_error(const std::string& bytes, std::string* message = nullptr) {
    try {
        decode_stdt(bytes);
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return ErrorCode::InvalidArgument;
}

std::string le16(std::uint16_t v) { return std::string{char(v & 0xFF), char(v >> 8)}; }
std::string le32(std::uint32_t v) {
    return std::string{char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF), char(v >> 24)};
}

}  // namespace

TEST(Stdt, ByteLayout) {
    const DenseTensor t({2}, {1.0, -2.5});
    std::string want = "STDT" + le16(1);
    want += le16(1) + "w" + std::string(1, '\x01') + le32(2) + std::string(1, '\x02');
    for (double v : {1.0, -2.5}) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        want.append(buf, 8);
    }
    EXPECT_EQ(encode_stdt({{"w", t}}), want);
}

TEST(Stdt, RoundTripIsBitExact) {
    Rng rng(1);
    std::vector<NamedTensor> ts{{"a", rng.normal_tensor({3, 4, 2})}, {"b/c", DenseTensor({1, 1, 1, 1})},
                                {"single", DenseTensor({1}, {3.25})}, {"tiny", DenseTensor({1}, {5e-324})}};
    EXPECT_EQ(decode_stdt(encode_stdt(ts)), ts);
}

TEST(Stdt, Float32Widens) {
    const std::vector<NamedTensor> ts{{"x", DenseTensor({3}, {0.1, 1.5, -3.0})}};
    const auto back = decode_stdt(encode_stdt(ts, DType::F32));
    EXPECT_EQ(back[0].tensor[0], static_cast<double>(0.1f));
    EXPECT_EQ(back[0].tensor[1], 1.5);
    EXPECT_EQ(back[0].tensor[2], -3.0);
}

TEST(Stdt, DistinctErrors) {
    const std::string good = encode_stdt({{"x", DenseTensor({2}, {1, 2})}, {"y", DenseTensor({1}, {3})}});

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(decode_error(bad_magic), ErrorCode::BadMagic);

    std::string bad_version = good;
    bad_version[4] = 9;
    EXPECT_EQ(decode_error(bad_version), ErrorCode::VersionMismatch);

    std::string msg;
    EXPECT_EQ(decode_error(good.substr(0, good.size() - 3), &msg), ErrorCode::Truncated);
    EXPECT_NE(msg.find("offset"), std::string::npos);
    EXPECT_EQ(decode_error(good.substr(0, 2)), ErrorCode::Truncated);

    // the second record renamed to "x"
    std::string dup = good;
    const auto pos = dup.rfind('y');
    dup[pos] = 'x';
    EXPECT_EQ(decode_error(dup, &msg), ErrorCode::DuplicateName);

    EXPECT_THROW(encode_stdt({{"x", DenseTensor({1})}, {"x", DenseTensor({1})}}), Error);

    std::string bad_dtype = good;
    bad_dtype[4 + 2 + 2 + 1 + 1 + 4] = 7;
    EXPECT_EQ(decode_error(bad_dtype), ErrorCode::Parse);
}

TEST(Stdt, TruncationNamesOffset) {
    const std::string good = encode_stdt({{"x", DenseTensor({4}, {1, 2, 3, 4})}});
    std::string msg;
    decode_error(good.substr(0, 20), &msg);
    EXPECT_NE(msg.find("offset 15"), std::string::npos) << msg;
}

TEST(Stdt, HugeDeclaredDimsAreTruncationNotOverflow) {
    std::string bytes = "STDT" + le16(1) + le16(1) + "h" + std::string(1, '\x03') + le32(0xFFFFFFFFu) +
                        le32(0xFFFFFFFFu) + le32(0xFFFFFFFFu) + std::string(1, '\x02');
    EXPECT_EQ(decode_error(bytes), ErrorCode::Truncated);
}

// ---------------------------------------------------------------------------

TEST(ModelFile, RoundTripReproducesModelAndOutputs) {
    TempDir dir;
    const ModelSpec m = build_srnetc64(7);
    save_model(m, dir.file("m.json"));
    EXPECT_TRUE(fs::exists(dir.file("m.stdt")));
    const ModelSpec back = load_model(dir.file("m.json"));
    EXPECT_EQ(back, m);
    Rng rng(1);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 32, 32}));
    EXPECT_EQ(forward(back, batch), forward(m, batch));
}

TEST(ModelFile, DecomposedLayersRoundTrip) {
    TempDir dir;
    const ModelSpec m = toy_model(2, {});
    const ModelSpec r = replace_layer(m, "T2", tucker_decompose(m.node("T2").kernel, 9, 11));
    save_model(r, dir.file("r.json"));
    const ModelSpec back = load_model(dir.file("r.json"));
    EXPECT_EQ(back, r);
    EXPECT_EQ(back.node("T2").factors->rank_out(), 11u);
}

TEST(ModelFile, Float32WeightsWiden) {
    TempDir dir;
    const ModelSpec m = build_srnetc64(7);
    save_model(m, dir.file("m32.json"), DType::F32);
    const ModelSpec back = load_model(dir.file("m32.json"));
    Rng rng(3);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 32, 32}));
    EXPECT_LT(relative_error(forward(m, batch).tensor(), forward(back, batch).tensor()), 1e-6);
}

TEST(ModelFile, WeightShapeMismatchIsDimError) {
    const ModelSpec m = toy_model(3, {});
    auto weights = model_weights(m);
    for (auto& w : weights)
        if (w.name == "T3/kernel") w.tensor = DenseTensor({32, 32, 1, 1});
    try {
        model_from_json(model_to_json(m, "x.stdt"), weights);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    }
}

TEST(ModelFile, MissingAndExtraWeights) {
    const ModelSpec m = toy_model(3, {});
    auto weights = model_weights(m);
    auto extra = weights;
    extra.push_back({"ghost", DenseTensor({1})});
    EXPECT_THROW(model_from_json(model_to_json(m, "x.stdt"), extra), Error);
    weights.pop_back();
    EXPECT_THROW(model_from_json(model_to_json(m, "x.stdt"), weights), Error);
}

TEST(ModelFile, BadJson) {
    const ModelSpec m = toy_model(3, {});
    EXPECT_THROW(model_from_json("{not json", model_weights(m)), Error);
    EXPECT_THROW(model_from_json(R"({"version": 2, "nodes": []})", {}), Error);
    EXPECT_THROW(model_from_json(R"({"version": 1, "nodes": [{"name": "a", "kind": "warp"}]})", {}), Error);
}

TEST(ModelFile, JsonIsStable) {
    const ModelSpec m = build_srnetc64(7);
    EXPECT_EQ(model_to_json(m, "w.stdt"), model_to_json(build_srnetc64(7), "w.stdt"));
    const std::string json = model_to_json(m, "w.stdt");
    EXPECT_NE(json.find("\"source\": \"L8-s/bn\""), std::string::npos);
    EXPECT_NE(json.find("\"bottom\""), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Curves, SevenSamplesMakeEightLines) {
    DistortionCurve c{"L2", {}};
    for (double g : gamma_schedule(0.5, 0.05, 0.2)) c.samples.push_back({g, 1, 1, g / 3});
    const std::string csv = curves_to_csv({c});
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,gamma,distortion");
}

TEST(Curves, GroupedByLayerInGivenOrderWithDescendingGamma) {
    DistortionCurve a{"L3-1", {{0.3, 1, 1, 0.2}, {0.5, 1, 1, 0.1}}};
    DistortionCurve b{"L2", {{0.5, 1, 1, 0.0}, {0.45, 1, 1, 0.05}}};
    const std::string csv = curves_to_csv({a, b});
    EXPECT_EQ(csv, "layer,gamma,distortion\nL3-1,0.5,0.1\nL3-1,0.3,0.2\nL2,0.5,0\nL2,0.45,0.05\n");
}

TEST(Curves, ParseBackToPrintedPrecision) {
    Rng rng(4);
    std::vector<DistortionCurve> curves;
    for (const char* name : {"A", "B"}) {
        DistortionCurve c{name, {}};
        for (double g : gamma_schedule(0.5, 0.05, 0.2)) c.samples.push_back({g, 0, 0, std::abs(rng.normal()) / 7});
        curves.push_back(c);
    }
    const auto back = curves_from_csv(curves_to_csv(curves));
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].layer, curves[i].layer);
        ASSERT_EQ(back[i].samples.size(), 7u);
        for (std::size_t j = 0; j < 7; ++j) {
            const double want = curves[i].samples[j].distortion;
            EXPECT_NEAR(back[i].samples[j].distortion, want, 5e-9 * want);
            EXPECT_NEAR(back[i].samples[j].gamma, curves[i].samples[j].gamma, 1e-12);
        }
    }
    // a second trip through the text is a fixed point
    EXPECT_EQ(curves_to_csv(back), curves_to_csv(curves));
}

TEST(Curves, RejectsMalformed) {
    EXPECT_THROW(curves_from_csv(""), Error);
    EXPECT_THROW(curves_from_csv("a,b,c\n"), Error);
    EXPECT_THROW(curves_from_csv("layer,gamma,distortion\nL2,x,0.1\n"), Error);
    EXPECT_THROW(curves_from_csv("layer,gamma,distortion\nL2,0.5\n"), Error);
    EXPECT_THROW(curves_from_csv("layer,gamma,distortion\nL2,0.5,0\nL3,0.5,0\nL2,0.45,0\n"), Error);
    EXPECT_THROW(curves_from_csv("layer,gamma,distortion\nL2,0.4,0\nL2,0.45,0\n"), Error);
}

TEST(Thresholds, JsonRoundTrip) {
    const std::string json = thresholds_to_json({{"L2", 0.125}, {"L10-1", 1e-4}});
    EXPECT_LT(json.find("L2"), json.find("L10-1"));
    const auto back = thresholds_from_json(json);
    EXPECT_EQ(back.at("L2"), 0.125);
    EXPECT_EQ(back.at("L10-1"), 1e-4);
    EXPECT_EQ(thresholds_from_json(R"({"L2": 0.5})").at("L2"), 0.5);
    EXPECT_THROW(thresholds_from_json(R"({"L2": "x"})"), Error);
}

TEST(Reports, CostCsvAndTable) {
    const ModelSpec base = build_srnetc64(0);
    const CostReport r = cost_report(with_ranks(base, cylinder_ranks()), base);
    const std::string csv = cost_to_csv(r);
    const auto first_row = csv.substr(csv.find('\n') + 1, csv.find('\n', csv.find('\n') + 1) - csv.find('\n') - 1);
    EXPECT_EQ(first_row.substr(0, first_row.find(',')), "L1");
    EXPECT_NE(csv.find("\nL2,main,32,8,256,256,9216,4480,"), std::string::npos);
    EXPECT_NE(csv.find("\ntotal,"), std::string::npos);
    EXPECT_LT(csv.find("\nL12-2,"), csv.find("\nL8-s,"));
    const std::string table = cost_to_table(r);
    EXPECT_NE(table.find("0.44"), std::string::npos);
    EXPECT_NE(table.find("vs baseline"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Batches, SyntheticIsSeeded) {
    const FeatureBatch a = load_batch("synthetic:3x8x9:5");
    EXPECT_EQ(a.tensor().shape(), (Shape{3, 1, 8, 9}));
    EXPECT_EQ(a, load_batch("synthetic:3x8x9:5"));
    EXPECT_FALSE(a == load_batch("synthetic:3x8x9:6"));
    EXPECT_EQ(load_batch("synthetic:3x8x9", 5), a);
    EXPECT_THROW(load_batch("synthetic:3x8"), Error);
    EXPECT_THROW(load_batch("synthetic:0x8x8"), Error);
    EXPECT_THROW(load_batch("synthetic:2x8x8:abc"), Error);
}

TEST(Batches, FromContainer) {
    TempDir dir;
    Rng rng(5);
    const DenseTensor t = rng.normal_tensor({2, 1, 4, 4});
    write_stdt(dir.file("b.stdt"), {{"batch", t}});
    EXPECT_EQ(load_batch(dir.file("b.stdt")).tensor(), t);
    write_stdt(dir.file("c.stdt"), {{"images", t}});
    EXPECT_THROW(load_batch(dir.file("c.stdt")), Error);
    EXPECT_THROW(load_batch(dir.file("missing.stdt")), Error);
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
    TempDir dir;
    write_file_atomic(dir.file("out.txt"), "one");
    write_file_atomic(dir.file("out.txt"), "two");
    EXPECT_EQ(read_file(dir.file("out.txt")), "two");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(fs::path(dir.file("")))) ++entries;
    EXPECT_EQ(entries, 1u);
    EXPECT_THROW(write_file_atomic(dir.file("no/such/dir/x.txt"), "x"), Error);
}
