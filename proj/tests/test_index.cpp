#include "swm/index.hpp"

#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace swm;

namespace {

const UtcHour kBase = UtcHour::from_civil(2020, 1, 1, 0);

Digest model(int tag) { return sha256("model-" + std::to_string(tag)); }

Embedding emb(std::vector<float> v, int step, Digest h = model(0)) {
    const UtcHour t(kBase.epoch_hours() + 12 * step);
    return {std::move(v), "m" + t.iso(), t, h};
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::Io;
}

// Random toy index; integer-valued components when `ties` so equal scores occur.
std::vector<Embedding> random_entries(std::mt19937_64& rng, std::size_t n, std::size_t dim, bool ties) {
    std::vector<Embedding> out;
    std::normal_distribution<float> g(0, 1);
    std::uniform_int_distribution<int> small(-2, 2);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(dim);
        do {
            for (auto& x : v) x = ties ? static_cast<float>(small(rng)) : g(rng);
        } while (std::all_of(v.begin(), v.end(), [](float x) { return x == 0; }));
        out.push_back(emb(std::move(v), static_cast<int>(i) * 3 + static_cast<int>(rng() % 3)));
    }
    return out;
}

// Full sort of every candidate; independent of the partial-sort path.
std::vector<Hit> oracle(const std::vector<Embedding>& all, const Embedding& q, MetricKind m, std::size_t k, const ExclusionWindow& ex) {
    std::vector<Hit> hits;
    for (const auto& e : all) {
        const auto d = e.timestamp.epoch_hours() - ex.center.epoch_hours();
        if (ex.half_width_hours > 0 && std::llabs(d) <= ex.half_width_hours) continue;
        hits.push_back({e.source_id, e.timestamp, m == MetricKind::Cosine ? cosine(q.vector, e.vector) : euclidean(q.vector, e.vector), 0});
    }
    std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) {
        if (a.score != b.score) return m == MetricKind::Cosine ? a.score > b.score : a.score < b.score;
        return a.timestamp < b.timestamp;
    });
    if (hits.size() > k) hits.resize(k);
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = i + 1;
    return hits;
}

} // namespace

TEST(ExclusionWindow, Semantics) {
    const UtcHour c = UtcHour::from_civil(2021, 12, 15, 0);
    auto w = ExclusionWindow::days_around(c, 7);
    EXPECT_TRUE(w.contains(c));
    EXPECT_TRUE(w.contains(UtcHour(c.epoch_hours() + 7 * 24)));
    EXPECT_TRUE(w.contains(UtcHour(c.epoch_hours() - 7 * 24)));
    EXPECT_FALSE(w.contains(UtcHour(c.epoch_hours() + 7 * 24 + 1)));
    EXPECT_FALSE(ExclusionWindow::days_around(c, 0).contains(c));
    EXPECT_FALSE(ExclusionWindow::none().contains(c));
    EXPECT_THROW(ExclusionWindow::days_around(c, -1), Error);
}

TEST(EmbeddingIndex, InvariantsEnforced) {
    EXPECT_EQ(code_of([] { EmbeddingIndex(std::vector<Embedding>{}); }), ErrorCode::EmptyIndex);
    EXPECT_EQ(code_of([] { EmbeddingIndex({emb({1, 0}, 0), emb({1, 0, 0}, 1)}); }), ErrorCode::DimMismatch);
    EXPECT_EQ(code_of([] { EmbeddingIndex({emb({1, 0}, 0), emb({1, 0}, 1, model(1))}); }), ErrorCode::ModelMismatch);
    EXPECT_EQ(code_of([] { EmbeddingIndex({emb({1, 0}, 0), emb({NAN, 0}, 1)}); }), ErrorCode::NonFinite);
    EXPECT_EQ(code_of([] { EmbeddingIndex({emb({1, 0}, 0), emb({0, 1}, 0)}); }), ErrorCode::InvalidArgument);
    EmbeddingIndex idx({emb({1, 0}, 5), emb({0, 1}, 2)});
    EXPECT_LT(idx.entries()[0].timestamp, idx.entries()[1].timestamp);
    EXPECT_EQ(idx.dim(), 2u);
    EXPECT_NE(idx.find(idx.entries()[1].timestamp), nullptr);
    EXPECT_EQ(idx.find(UtcHour(0)), nullptr);
}

TEST(BuildIndex, OneEntryPerRecordWithFailures) {
    std::vector<MapRecord> recs;
    for (int i = 0; i < 5; ++i) {
        const UtcHour t(kBase.epoch_hours() + 12 * i);
        recs.push_back({"r" + std::to_string(i), t, "x.png", 8, 8});
    }
    Manifest m(recs, "dir", kBase);
    auto ok = build_index(m, [](const MapRecord& r) { return Embedding{{1.0f, float(r.timestamp.hour())}, {}, {}, model(0)}; });
    EXPECT_EQ(ok.index.size(), 5u);
    EXPECT_EQ(ok.index.dim(), 2u);
    EXPECT_TRUE(ok.failures.empty());
    EXPECT_EQ(ok.index.entries()[3].source_id, "r3");

    auto flaky = [](const MapRecord& r) -> Embedding {
        if (r.id == "r1" || r.id == "r4") fail(ErrorCode::DecodeError, "broken png");
        return {{1.0f}, {}, {}, model(0)};
    };
    try {
        build_index(m, flaky, true);
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("r1"), std::string::npos);
        EXPECT_NE(msg.find("r4"), std::string::npos);
    }
    auto lax = build_index(m, flaky, false);
    EXPECT_EQ(lax.index.size(), 3u);
    ASSERT_EQ(lax.failures.size(), 2u);
    EXPECT_EQ(lax.failures[0].id, "r1");

    EXPECT_EQ(code_of([&] { build_index(Manifest({}, "d", kBase), flaky); }), ErrorCode::EmptyIndex);
    auto mixed = [](const MapRecord& r) { return Embedding{{1.0f}, {}, {}, model(r.id == "r2")}; };
    EXPECT_EQ(code_of([&] { build_index(m, mixed); }), ErrorCode::ModelMismatch);
}

TEST(QueryLatent, HandBuiltCosine) {
    const float r = static_cast<float>(1 / std::sqrt(2.0));
    EmbeddingIndex idx({emb({1, 0}, 0), emb({0, 1}, 1), emb({r, r}, 2)});
    auto res = query_latent(idx, emb({1, 0}, 10), MetricKind::Cosine, 2);
    ASSERT_EQ(res.hits.size(), 2u);
    EXPECT_EQ(res.hits[0].source_id, idx.entries()[0].source_id);
    EXPECT_EQ(res.hits[0].score, 1.0);
    EXPECT_EQ(res.hits[1].source_id, idx.entries()[2].source_id);
    EXPECT_NEAR(res.hits[1].score, 0.70711, 1e-5);
    EXPECT_EQ(res.hits[0].rank, 1u);
    EXPECT_EQ(res.hits[1].rank, 2u);
    EXPECT_FALSE(res.truncated);
}

TEST(QueryLatent, SelfHitAndExclusion) {
    std::mt19937_64 rng(11);
    auto entries = random_entries(rng, 60, 8, false);
    EmbeddingIndex idx(entries);
    const auto& q = idx.entries()[30];
    auto res = query_latent(idx, q, MetricKind::Cosine, 5);
    EXPECT_EQ(res.hits[0].source_id, q.source_id);
    EXPECT_EQ(res.hits[0].score, 1.0);
    auto ex = ExclusionWindow::days_around(q.timestamp, 7);
    auto res2 = query_latent(idx, q, MetricKind::Cosine, 60, ex);
    for (const auto& h : res2.hits) {
        EXPECT_NE(h.source_id, q.source_id);
        EXPECT_GT(std::llabs(h.timestamp.epoch_hours() - q.timestamp.epoch_hours()), 7 * 24);
    }
    EXPECT_TRUE(res2.truncated);
    EXPECT_EQ(res2.hits.size(), res2.candidates);
}

TEST(QueryLatent, Errors) {
    EmbeddingIndex idx({emb({1, 0}, 0), emb({0, 1}, 1)});
    EXPECT_EQ(code_of([&] { query_latent(idx, emb({1, 0}, 0, model(3)), MetricKind::Cosine, 1); }), ErrorCode::ModelMismatch);
    EXPECT_EQ(code_of([&] { query_latent(idx, emb({1, 0, 0}, 0), MetricKind::Cosine, 1); }), ErrorCode::DimMismatch);
    EXPECT_EQ(code_of([&] { query_latent(idx, emb({1, 0}, 0), MetricKind::Cosine, 0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { query_latent(idx, emb({1, 0}, 0), MetricKind::Ssim, 1); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { query_latent(idx, emb({0, 0}, 0), MetricKind::Cosine, 1); }), ErrorCode::ZeroVector);
    auto all = query_latent(idx, emb({1, 0}, 0), MetricKind::Euclidean, 10);
    EXPECT_EQ(all.hits.size(), 2u);
    EXPECT_TRUE(all.truncated);
}

TEST(QueryLatent, MatchesFullSortOracle) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 100; ++t) {
        const bool ties = t % 2 == 0;
        auto entries = random_entries(rng, 5 + rng() % 80, 1 + rng() % 6, ties);
        EmbeddingIndex idx(entries);
        const auto q = random_entries(rng, 1, idx.dim(), ties)[0];
        const auto metric = t % 4 < 2 ? MetricKind::Cosine : MetricKind::Euclidean;
        const std::size_t k = 1 + rng() % 12;
        const auto ex = t % 3 == 0 ? ExclusionWindow::days_around(entries[rng() % entries.size()].timestamp, 1 + int(rng() % 5))
                                   : ExclusionWindow::none();
        auto res = query_latent(idx, q, metric, k, ex);
        ASSERT_EQ(res.hits, oracle(entries, q, metric, k, ex)) << "trial " << t;
    }
}

TEST(QueryLatent, TopKPrefixAndPermutationInvariance) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 50; ++t) {
        auto entries = random_entries(rng, 40, 4, t % 2 == 0);
        const auto q = random_entries(rng, 1, 4, t % 2 == 0)[0];
        EmbeddingIndex idx(entries);
        auto r3 = query_latent(idx, q, MetricKind::Cosine, 3);
        auto r5 = query_latent(idx, q, MetricKind::Cosine, 5);
        ASSERT_TRUE(std::equal(r3.hits.begin(), r3.hits.end(), r5.hits.begin()));
        std::shuffle(entries.begin(), entries.end(), rng);
        EmbeddingIndex shuffled(entries);
        ASSERT_EQ(query_latent(shuffled, q, MetricKind::Cosine, 5), r5);
        ASSERT_EQ(to_json(query_latent(shuffled, q, MetricKind::Cosine, 5)).dump(), to_json(r5).dump());
    }
}

TEST(QueryLatent, ExclusionOnTimestampGrid) {
    // Hourly grid over 30 days; every returned timestamp must lie outside the window.
    std::vector<Embedding> entries;
    for (int h = 0; h < 30 * 24; ++h) {
        const UtcHour t(kBase.epoch_hours() + h);
        entries.push_back({{1.0f, float(h % 7)}, "h" + std::to_string(h), t, model(0)});
    }
    EmbeddingIndex idx(entries);
    for (int days : {1, 3, 7}) {
        for (int center : {0, 100, 400, 719}) {
            const auto ex = ExclusionWindow::days_around(UtcHour(kBase.epoch_hours() + center), days);
            auto res = query_latent(idx, entries[static_cast<std::size_t>(center)], MetricKind::Euclidean, entries.size(), ex);
            std::size_t expected = 0;
            for (int h = 0; h < 30 * 24; ++h) expected += std::abs(h - center) > days * 24;
            EXPECT_EQ(res.hits.size(), expected);
            for (const auto& hit : res.hits) EXPECT_FALSE(ex.contains(hit.timestamp));
        }
    }
}

namespace {
PreprocessedMap pattern_map(const std::string& id, int seed, bool invert = false) {
    PreprocessedMap m{Raster(16, 16, 1), id, "cfg"};
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    for (auto& v : m.raster.data) {
        v = static_cast<float>(rng() % 2);
        if (invert) v = 1 - v;
    }
    return m;
}
} // namespace

TEST(QueryPixel, IdenticalEntryRanksFirst) {
    std::vector<MapRecord> recs;
    std::vector<PreprocessedMap> maps;
    for (int i = 0; i < 6; ++i) {
        recs.push_back({"p" + std::to_string(i), UtcHour(kBase.epoch_hours() + 12 * i), "x.png", 16, 16});
        maps.push_back(pattern_map("p" + std::to_string(i), i));
    }
    Manifest m(recs, "d", kBase);
    auto cache = MapCache::in_memory(m, maps);
    auto rm = query_pixel(m, cache, maps[3], MetricKind::Rmse, 3);
    EXPECT_EQ(rm.hits[0].source_id, "p3");
    EXPECT_EQ(rm.hits[0].score, 0.0);
    auto ss = query_pixel(m, cache, maps[3], MetricKind::Ssim, 3);
    EXPECT_EQ(ss.hits[0].source_id, "p3");
    EXPECT_EQ(ss.hits[0].score, 1.0);
    EXPECT_GE(ss.hits[0].score, ss.hits[1].score);
    EXPECT_LE(rm.hits[0].score, rm.hits[1].score);
    EXPECT_THROW(query_pixel(m, cache, maps[3], MetricKind::Cosine, 3), Error);
}

TEST(QueryPixel, CopyBeatsInvertedCopy) {
    auto q = pattern_map("q", 99);
    std::vector<MapRecord> recs{{"inv", kBase, "a.png", 16, 16}, {"copy", UtcHour(kBase.epoch_hours() + 12), "b.png", 16, 16}};
    Manifest m(recs, "d", kBase);
    auto copy = q;
    copy.source_id = "copy";
    auto cache = MapCache::in_memory(m, {pattern_map("inv", 99, true), copy});
    auto res = query_pixel(m, cache, q, MetricKind::Ssim, 2);
    EXPECT_EQ(res.hits[0].source_id, "copy");
    EXPECT_EQ(res.hits[1].source_id, "inv");
    EXPECT_LT(res.hits[1].score, 0.0);
}

TEST(QueryPixel, MissingEntriesListed) {
    std::vector<MapRecord> recs{{"a", kBase, "a.png", 16, 16}, {"b", UtcHour(kBase.epoch_hours() + 1), "b.png", 16, 16},
                                {"c", UtcHour(kBase.epoch_hours() + 2), "c.png", 16, 16}};
    Manifest m(recs, "d", kBase);
    auto cache = MapCache::in_memory(m, {pattern_map("b", 1)});
    try {
        query_pixel(m, cache, pattern_map("q", 1), MetricKind::Rmse, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingData);
        const std::string msg = e.what();
        EXPECT_NE(msg.find(" a"), std::string::npos);
        EXPECT_NE(msg.find(" c"), std::string::npos);
    }
}

TEST(QueryPixel, DiskCacheMatchesMemory) {
    swm::testing::TempDir dir;
    std::vector<MapRecord> recs;
    std::vector<PreprocessedMap> maps;
    for (int i = 0; i < 4; ++i) {
        const UtcHour t(kBase.epoch_hours() + 12 * i);
        recs.push_back({"m" + t.iso(), t, "x.png", 16, 16});
        maps.push_back(pattern_map(recs.back().id, i + 10));
    }
    Manifest m(recs, "d", kBase);
    auto disk = MapCache::write(dir.path(), m, maps);
    EXPECT_EQ(disk.manifest().records(), m.records());
    EXPECT_EQ(disk.get(recs[2].id), maps[2]);
    auto mem = MapCache::in_memory(m, maps);
    EXPECT_EQ(query_pixel(m, disk, maps[1], MetricKind::Ssim, 4), query_pixel(m, mem, maps[1], MetricKind::Ssim, 4));
}

TEST(MapFile, RoundTripAndCorruption) {
    auto m = pattern_map("2020-01-01T00", 5);
    auto bytes = encode_map(m);
    EXPECT_EQ(decode_map(bytes), m);
    EXPECT_EQ(encode_map(decode_map(bytes)), bytes);
    auto bad = bytes;
    bad[40] ^= 1;
    EXPECT_EQ(code_of([&] { decode_map(bad); }), ErrorCode::ChecksumError);
    bad = bytes;
    bad[0] = 'X';
    EXPECT_EQ(code_of([&] { decode_map(bad); }), ErrorCode::FormatError);
    EXPECT_THROW(cache_filename("../x"), Error);
}

TEST(IndexFile, RoundTripByteExact) {
    swm::testing::TempDir dir;
    std::mt19937_64 rng(14);
    EmbeddingIndex idx(random_entries(rng, 25, 7, false));
    save_index(idx, dir / "a.swmi");
    auto back = load_index(dir / "a.swmi");
    EXPECT_EQ(back, idx);
    EXPECT_EQ(back.model_hash(), idx.model_hash());
    EXPECT_EQ(back.manifest_digest(), idx.manifest_digest());
    save_index(back, dir / "b.swmi");
    EXPECT_EQ(bin::read_file(dir / "a.swmi"), bin::read_file(dir / "b.swmi"));
    auto bytes = bin::read_file(dir / "a.swmi");
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SWMI");
    // dim field and count field at the documented offsets
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    std::memcpy(&dim, bytes.data() + 8, 4);
    std::memcpy(&count, bytes.data() + 44, 8);
    EXPECT_EQ(dim, 7u);
    EXPECT_EQ(count, 25u);
    EXPECT_EQ(bytes.size(), 52 + 25 * (2 + idx.entries()[0].source_id.size() + 8 + 7 * 4) + 32);
}

TEST(IndexFile, Corruption) {
    std::mt19937_64 rng(15);
    EmbeddingIndex idx(random_entries(rng, 5, 3, false));
    const auto bytes = encode_index(idx);
    auto bad = bytes;
    bad.back() ^= 0xFF;
    EXPECT_EQ(code_of([&] { decode_index(bad); }), ErrorCode::ChecksumError);
    bad = bytes;
    bad[60] ^= 0x10;
    EXPECT_EQ(code_of([&] { decode_index(bad); }), ErrorCode::ChecksumError);
    bad = bytes;
    bad[1] = 'X';
    EXPECT_EQ(code_of([&] { decode_index(bad); }), ErrorCode::FormatError);
    bad = bytes;
    bad[4] = 2;
    EXPECT_EQ(code_of([&] { decode_index(bad); }), ErrorCode::FormatError);
    std::vector<std::uint8_t> shortb(bytes.begin(), bytes.begin() + 20);
    EXPECT_EQ(code_of([&] { decode_index(shortb); }), ErrorCode::FormatError);
}

TEST(IndexFile, LoadedIndexRejectsOtherModelAtQueryTime) {
    std::mt19937_64 rng(16);
    EmbeddingIndex idx(random_entries(rng, 5, 3, false));
    auto back = decode_index(encode_index(idx));
    EXPECT_EQ(code_of([&] { query_latent(back, emb({1, 2, 3}, 0, model(9)), MetricKind::Cosine, 1); }), ErrorCode::ModelMismatch);
    EXPECT_EQ(code_of([&] { query_latent(back, emb({1, 2}, 0), MetricKind::Cosine, 1); }), ErrorCode::DimMismatch);
}
