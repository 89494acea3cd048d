#include "swm/vqvae.hpp"

#include "swm/cae.hpp"

#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace swm;
using swm::testing::TempDir;

namespace {

VqvaeConfig toy_config(std::uint64_t seed = 1) {
    VqvaeConfig c;
    c.in_channels = 1;
    c.input_hw = 16;
    c.enc_channels = {4, 4};
    c.strides = {2, 2};
    c.grid_hw = 4;
    c.K = 4;
    c.D = 1;
    c.seed = seed;
    return c;
}

PreprocessedMap constant_map(float v, std::string id, int hw = 16, int channels = 1) {
    PreprocessedMap m;
    m.raster = Raster(hw, hw, channels, v);
    m.source_id = std::move(id);
    return m;
}

// Exhaustive nearest code with plain Euclidean distance, first minimum wins.
std::size_t brute_nearest(const std::vector<double>& cell, const Tensor<double>& cb) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < cb.dim(0); ++k) {
        double s = 0;
        for (std::size_t j = 0; j < cell.size(); ++j) s += (cell[j] - cb.data[k * cb.dim(1) + j]) * (cell[j] - cb.data[k * cb.dim(1) + j]);
        if (s < best_d) {
            best_d = s;
            best = k;
        }
    }
    return best;
}

} // namespace

TEST(Quantize, HandExample) {
    Tensor<double> cb({2, 2}, {0, 0, 1, 1});
    Tensor<double> ze({1, 2, 1, 1}, {0.9, 0.8});
    auto q = quantize(ze, cb);
    EXPECT_EQ(q.indices[0], 1u);
    EXPECT_EQ(q.z_q.data, (std::vector<double>{1, 1}));
}

TEST(Quantize, ExactMatchAndTieBreak) {
    Tensor<float> cb({4, 2}, {0, 0, 2, 0, 5, 5, -1, 3});
    auto q = quantize(Tensor<float>({1, 2, 1, 1}, {-1, 3}), cb);
    EXPECT_EQ(q.indices[0], 3u);
    EXPECT_EQ(q.z_q.data, (std::vector<float>{-1, 3}));
    // (1,0) is at distance 1 from both code 0 and code 1.
    EXPECT_EQ(quantize(Tensor<float>({1, 2, 1, 1}, {1, 0}), cb).indices[0], 0u);
}

TEST(Quantize, MatchesExhaustiveScan) {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng() % 9, d = 1 + rng() % 5, gh = 1 + rng() % 3, gw = 1 + rng() % 3;
        auto cb = ad::uniform<double>({k, d}, -1.0, 1.0, rng);
        auto ze = ad::uniform<double>({2, d, gh, gw}, -1.5, 1.5, rng);
        auto q = quantize(ze, cb);
        const std::size_t plane = gh * gw;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < plane; ++c) {
                std::vector<double> cell(d);
                for (std::size_t j = 0; j < d; ++j) cell[j] = ze.data[(b * d + j) * plane + c];
                const auto want = brute_nearest(cell, cb);
                ASSERT_EQ(q.indices[b * plane + c], want) << "trial " << trial;
                for (std::size_t j = 0; j < d; ++j) ASSERT_EQ(q.z_q.data[(b * d + j) * plane + c], cb.data[want * d + j]);
            }
    }
}

TEST(Quantize, RejectsNonFiniteAndMismatch) {
    Tensor<float> cb({2, 2}, {0, 0, 1, 1});
    EXPECT_THROW(quantize(Tensor<float>({1, 2, 1, 1}, {NAN, 0}), cb), Error);
    EXPECT_THROW(quantize(Tensor<float>({1, 3, 1, 1}), cb), Error);
}

TEST(VqLosses, ZeroWhenExact) {
    ad::Graph<double> g;
    auto z = g.constant(Tensor<double>({1, 2, 1, 1}, {0.3, 0.4}));
    auto r = g.constant(Tensor<double>({1, 1, 2, 2}, 0.5));
    auto l = vq_losses(z, z, r, r, 0.25);
    EXPECT_EQ(l.recon.value()[0], 0.0);
    EXPECT_EQ(l.codebook.value()[0], 0.0);
    EXPECT_EQ(l.commitment.value()[0], 0.0);
    EXPECT_EQ(l.total.value()[0], 0.0);
}

TEST(VqLosses, HandExampleAndBetaLinearity) {
    ad::Graph<double> g;
    auto ze = g.constant(Tensor<double>({1, 1, 1, 1}, {1.0}));
    auto zq = g.constant(Tensor<double>({1, 1, 1, 1}, {0.0}));
    auto r = g.constant(Tensor<double>({1, 1, 2, 2}, 0.5));
    auto l = vq_losses(ze, zq, r, r, 0.25);
    EXPECT_EQ(l.codebook.value()[0], 1.0);
    EXPECT_EQ(l.commitment.value()[0], 1.0);
    EXPECT_EQ(l.total.value()[0], 1.25);
    auto l2 = vq_losses(ze, zq, r, r, 0.5);
    EXPECT_EQ(l2.total.value()[0] - l2.recon.value()[0] - l2.codebook.value()[0],
              2 * (l.total.value()[0] - l.recon.value()[0] - l.codebook.value()[0]));
}

TEST(VqLosses, GradientsRouteToCodesAndEncoder) {
    // codebook loss moves only z_q, commitment only z_e.
    Tensor<double> ze({1, 1, 1, 1}, {1.0}), zq({1, 1, 1, 1}, {0.0});
    ad::Graph<double> g;
    auto a = g.param(ze);
    auto b = g.param(zq);
    auto r = g.constant(Tensor<double>({1}, 0.0));
    auto l = vq_losses(a, b, r, r, 0.25);
    g.backward(l.total);
    EXPECT_DOUBLE_EQ(ze.grad[0], 0.25 * 2.0);
    EXPECT_DOUBLE_EQ(zq.grad[0], -2.0);
}

TEST(VqvaeConfig, Validation) {
    auto c = toy_config();
    EXPECT_NO_THROW(c.validate());
    c.grid_hw = 8;
    EXPECT_THROW(c.validate(), Error);
    c = toy_config();
    c.K = 1;
    EXPECT_THROW(c.validate(), Error);
    c = toy_config();
    c.beta = 0;
    EXPECT_THROW(c.validate(), Error);
    nlohmann::json j = toy_config(7);
    EXPECT_EQ(j.get<VqvaeConfig>(), toy_config(7));
    j["extra"] = true;
    EXPECT_THROW(j.get<VqvaeConfig>(), Error);
}

namespace {

enum class Term { Recon, Codebook, Commitment, Total };

struct FrozenProblem {
    VqvaeConfig cfg;
    std::vector<Tensor<double>> params;
    Tensor<double> codebook;
    Tensor<double> x;
    FrozenAssignment<double> frozen;
};

// Toy problem with codes drawn from encoder outputs plus jitter, the regime
// training operates in; assignments pinned at the unperturbed point.
FrozenProblem frozen_problem(std::uint64_t seed) {
    FrozenProblem fp;
    fp.cfg = toy_config(seed);
    fp.cfg.in_channels = 2;
    auto p = vqvae_init(fp.cfg);
    std::mt19937_64 rng(seed * 7 + 1);
    fp.params = cast_all<double>(p.tensors);
    for (auto& t : fp.params) {
        if (t.rank() == 1) t = ad::uniform<double>(t.shape, -0.1, 0.1, rng);
    }
    fp.x = ad::uniform<double>({2, 2, 16, 16}, 0.0, 1.0, rng);
    ad::Graph<double> g;
    std::vector<ad::Var<double>> v;
    for (auto& t : fp.params) v.push_back(g.constant(t));
    const auto ze = vq_encode(fp.cfg, v, g.constant(fp.x)).value();
    fp.codebook = Tensor<double>({fp.cfg.K, fp.cfg.D});
    const std::size_t plane = fp.cfg.grid_hw * fp.cfg.grid_hw, cells = ze.dim(0) * plane;
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    for (std::size_t k = 0; k < fp.cfg.K; ++k) {
        const std::size_t cell = rng() % cells, b = cell / plane, c = cell % plane;
        for (std::size_t j = 0; j < fp.cfg.D; ++j) fp.codebook.data[k * fp.cfg.D + j] = ze.data[(b * fp.cfg.D + j) * plane + c] + jitter(rng);
    }
    auto q = quantize(ze, fp.codebook);
    fp.frozen = {q.indices, ze, q.z_q};
    return fp;
}

ad::GradCheckReport check_term(FrozenProblem& fp, Term term) {
    std::vector<Tensor<double>*> ptrs;
    for (auto& t : fp.params) ptrs.push_back(&t);
    ptrs.push_back(&fp.codebook);
    return ad::grad_check(
        [&](ad::Graph<double>& g, std::vector<ad::Var<double>>& v) {
            std::vector<ad::Var<double>> net(v.begin(), v.end() - 1);
            auto l = vq_graph(fp.cfg, net, v.back(), g.constant(fp.x), &fp.frozen).losses;
            switch (term) {
                case Term::Recon: return l.recon;
                case Term::Codebook: return l.codebook;
                case Term::Commitment: return l.commitment;
                default: return l.total;
            }
        },
        ptrs, {1e-5, 0});
}

} // namespace

TEST(VqvaeGradCheck, FrozenAssignmentTenSeeds) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto fp = frozen_problem(seed);
        for (Term term : {Term::Recon, Term::Codebook, Term::Commitment, Term::Total}) {
            auto report = check_term(fp, term);
            EXPECT_LT(report.max_rel_error, 1e-4) << "seed " << seed << " term " << static_cast<int>(term) << " param " << report.worst_param
                                                    << " idx " << report.worst_index << " analytic " << report.worst_analytic << " numeric "
                                                    << report.worst_numeric;
            EXPECT_GT(report.checked, 500u);
        }
    }
}

TEST(VqvaeGradCheck, FrozenGradientEqualsStraightThroughGradient) {
    auto cfg = toy_config(3);
    auto p = vqvae_init(cfg);
    auto params = cast_all<double>(p.tensors);
    auto codebook = p.codebook.vectors.cast<double>();
    std::mt19937_64 rng(5);
    auto x = ad::uniform<double>({2, 1, 16, 16}, 0.0, 1.0, rng);

    auto run = [&](const FrozenAssignment<double>* frozen) {
        ad::Graph<double> g;
        std::vector<ad::Var<double>> v;
        for (auto& t : params) v.push_back(g.param(t));
        auto cb = g.param(codebook);
        auto out = vq_graph(cfg, v, cb, g.constant(x), frozen);
        g.backward(out.losses.total);
        std::vector<std::vector<double>> grads;
        for (auto& t : params) grads.push_back(t.grad);
        grads.push_back(codebook.grad);
        return std::pair{grads, FrozenAssignment<double>{out.indices, out.z_e.value(), out.z_q.value()}};
    };
    auto [st_grads, frozen] = run(nullptr);
    auto frozen_grads = run(&frozen).first;
    for (std::size_t t = 0; t < st_grads.size(); ++t)
        for (std::size_t i = 0; i < st_grads[t].size(); ++i) ASSERT_NEAR(st_grads[t][i], frozen_grads[t][i], 1e-12);
}

TEST(VqvaeInit, DeterministicAndEpochsZero) {
    auto a = vqvae_init(toy_config(4));
    auto b = vqvae_init(toy_config(4));
    EXPECT_EQ(encode_params(a), encode_params(b));
    EXPECT_NE(encode_params(a), encode_params(vqvae_init(toy_config(5))));
    HyperParams hp;
    hp.epochs = 0;
    auto [p, log] = vqvae_train(toy_config(4), {constant_map(0.2f, "a")}, hp, 1);
    EXPECT_EQ(encode_params(p), encode_params(a));
}

TEST(VqvaeTrain, TwoConstantImagesConverge) {
    std::vector<PreprocessedMap> data{constant_map(0.15f, "dark"), constant_map(0.85f, "light")};
    HyperParams hp;
    hp.epochs = 300;
    hp.batch_size = 2;
    hp.lr = 3e-3;
    auto cfg = toy_config(2);
    auto [p, log] = vqvae_train(cfg, data, hp, 7);
    auto f = vqvae_forward(p, make_batch({&data[0], &data[1]}));
    double mse = 0;
    auto x = make_batch({&data[0], &data[1]});
    for (std::size_t i = 0; i < x.size(); ++i) mse += (f.recon[i] - x[i]) * (f.recon[i] - x[i]);
    mse /= static_cast<double>(x.size());
    EXPECT_LT(mse, 0.01);
    std::set<std::uint32_t> used;
    for (const auto& grid : f.codes) used.insert(grid.indices.begin(), grid.indices.end());
    EXPECT_GE(used.size(), 2u);
    EXPECT_LT(log.epochs.back().commitment, log.epochs.front().commitment);
    EXPECT_EQ(log.epochs.back().code_usage.size(), cfg.K);

    auto [p2, log2] = vqvae_train(cfg, data, hp, 7);
    EXPECT_TRUE(same_losses(log, log2));
    EXPECT_EQ(p.param_hash, p2.param_hash);
}

TEST(VqvaeEmbed, FlattenedCodebookRows) {
    auto cfg = toy_config(6);
    auto p = vqvae_init(cfg);
    std::mt19937_64 rng(8);
    PreprocessedMap m;
    m.raster = Raster(16, 16, 1);
    for (auto& v : m.raster.data) v = static_cast<float>(rng() % 2);
    m.source_id = "r";
    auto e = vqvae_embed(p, m);
    ASSERT_EQ(e.dim(), cfg.D * cfg.grid_hw * cfg.grid_hw);
    EXPECT_EQ(e.model_hash, p.param_hash);
    EXPECT_EQ(vqvae_embed(p, m).vector, e.vector);
    const std::size_t plane = cfg.grid_hw * cfg.grid_hw;
    auto grid = vqvae_codes(p, m);
    for (std::size_t c = 0; c < plane; ++c) {
        const auto row = p.codebook.row(grid.indices[c]);
        for (std::size_t j = 0; j < cfg.D; ++j) ASSERT_EQ(e.vector[j * plane + c], row[j]);
    }
    auto f = vqvae_forward(p, make_batch({&m}));
    EXPECT_EQ(f.z_q.data, e.vector);
    EXPECT_EQ(f.codes[0], grid);
}

TEST(RenderCodeGrid, Examples) {
    CodeGrid zeros{3, 3, std::vector<std::uint32_t>(9, 0)};
    auto img = render_code_grid(zeros, 4, 4);
    std::set<std::array<std::uint8_t, 3>> colors;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) colors.insert({img.px(x, y)[0], img.px(x, y)[1], img.px(x, y)[2]});
    EXPECT_EQ(colors.size(), 1u);

    CodeGrid checker{2, 2, {0, 1, 1, 0}};
    auto c = render_code_grid(checker, 2, 5);
    ASSERT_EQ(c.width, 10);
    auto at = [&](int x, int y) { return std::array<std::uint8_t, 3>{c.px(x, y)[0], c.px(x, y)[1], c.px(x, y)[2]}; };
    EXPECT_EQ(at(0, 0), at(9, 9));
    EXPECT_EQ(at(9, 0), at(0, 9));
    EXPECT_NE(at(0, 0), at(9, 0));
    EXPECT_EQ(encode_png(c), encode_png(render_code_grid(checker, 2, 5)));
    EXPECT_THROW(render_code_grid(checker, 1, 5), Error);
}

TEST(RenderCodeGrid, PaletteEntriesDistinct) {
    std::set<std::array<std::uint8_t, 3>> colors;
    for (std::size_t i = 0; i < 64; ++i) colors.insert(code_color(i));
    EXPECT_EQ(colors.size(), 64u);
}

TEST(VqvaeParamsFile, RoundTripAndKinds) {
    TempDir dir;
    auto p = vqvae_init(toy_config(3));
    save_params(p, dir / "m.vqv");
    auto bytes = bin::read_file(dir / "m.vqv");
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VQV1");
    auto q = load_vqvae_params(dir / "m.vqv");
    EXPECT_EQ(q.param_hash, p.param_hash);
    EXPECT_EQ(q.codebook.vectors.data, p.codebook.vectors.data);
    EXPECT_EQ(encode_params(q), bytes);
    try {
        decode_cae_params(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::WrongModelKind);
    }
    auto corrupt = bytes;
    corrupt[10] ^= 0x20;
    EXPECT_THROW(decode_vqvae_params(corrupt), Error);
    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    try {
        decode_vqvae_params(truncated);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::FormatError);
    }
}
