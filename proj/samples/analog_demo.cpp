// End-to-end walk through the library on a generated archive:
// synth charts -> rasters -> CAE -> index -> metric comparison + montage.
//
//   swm_demo [out_dir] [epochs]

#include <iostream>
#include <map>

#include "swm/cae.hpp"
#include "swm/evalharness.hpp"
#include "swm/synthgen.hpp"

using namespace swm;

int main(int argc, char** argv) try {
    const std::filesystem::path out = argc > 1 ? argv[1] : "swm_demo_out";
    const std::size_t epochs = argc > 2 ? std::stoul(argv[2]) : 20;

    SynthSpec spec;
    spec.width = spec.height = 128;
    spec.seed = 1;
    const auto archive = generate_synth(spec, out / "archive");
    std::cout << "archive: " << archive.truth.size() << " charts in " << (out / "archive").string() << "\n";

    const auto pc = spec.preprocess_config(32, 32);
    const FilenamePattern pattern(spec.pattern);
    const auto held_out = UtcHour::from_civil(2022, 12, 19, 0);
    std::vector<MapRecord> records;
    std::vector<PreprocessedMap> maps;
    PreprocessedMap query_map;
    for (const auto& t : archive.truth) {
        const auto file = out / "archive" / pattern.format(t.timestamp);
        auto m = preprocess(load_image(file), pc, t.timestamp.iso());
        if (t.timestamp == held_out) {
            query_map = std::move(m);
            continue;
        }
        records.push_back({t.timestamp.iso(), t.timestamp, file.filename().string(), spec.width, spec.height});
        maps.push_back(std::move(m));
    }
    const Manifest pool(records, out / "archive", held_out);
    const auto cache = MapCache::in_memory(pool, maps);

    CaeConfig cfg;
    cfg.input_hw = 32;
    cfg.enc_channels = {8, 16, 32};
    cfg.strides = {2, 2, 2};
    cfg.latent_dim = 64;
    cfg.seed = 1;
    HyperParams hp;
    hp.lr = 1e-3;
    hp.batch_size = 16;
    hp.epochs = epochs;
    auto [params, log] = cae_train(cfg, maps, hp, 1, [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " (" << static_cast<long>(e.wall_ms) << " ms)\n";
    });
    save_params(params, out / "cae.bin");

    std::map<std::string, const PreprocessedMap*> by_id;
    for (const auto& m : maps) by_id[m.source_id] = &m;
    const auto built = build_index(pool, [&](const MapRecord& r) { return cae_embed(params, *by_id.at(r.id)); });
    save_index(built.index, out / "index.swmi");

    QueryInput q{held_out.iso(), held_out, query_map, cae_embed(params, query_map)};
    const SearchSources src{&built.index, &cache, &pool, {}};
    const auto report = compare_metrics(q, src, {MetricKind::Rmse, MetricKind::Ssim, MetricKind::Cosine}, 5, ExclusionWindow::days_around(held_out, 3));
    std::cout << "\n" << report.table() << "\n";
    for (const auto& row : report.rows)
        std::cout << display_name(row.metric) << " mean month distance " << fmt2(seasonal_consistency(held_out, row.result).mean) << "\n";

    const auto& cosine_row = report.rows.back();
    save_montage(montage(query_map, held_out, cosine_row.result, cache), out / "montage.png");
    std::cout << "montage: " << (out / "montage.png").string() << "\n";
    return 0;
} catch (const std::exception& e) {
    std::cerr << "swm_demo: " << e.what() << "\n";
    return 1;
}
