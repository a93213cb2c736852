#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "terse/error.hpp"
#include "terse/experiment.hpp"

using namespace terse;
namespace fs = std::filesystem;

namespace {

struct TinyScenario {
    fs::path dir;
    ExperimentConfig cfg;
    DomainData source, target;

    explicit TinyScenario(const std::string& name) {
        dir = fs::temp_directory_path() / ("terse_exp_" + name);
        fs::remove_all(dir);
        const auto d = synth_domains(make_default_spec(4, 3, 32), 12, 1);
        save_dataset(dir / "src", d.source);
        save_dataset(dir / "tgt", d.target);
        cfg.model.cnn_filters = {8, 8, 8};
        cfg.model.embed_dim = 8;
        cfg.train.epochs = 1;
        cfg.train.adapt_epochs = 1;
        cfg.train.batch_size = 16;
        cfg.seeds = {0, 1};
        cfg.scenarios = {{"s->t", dir / "src", dir / "tgt"}};
        source = load_domain(dir / "src", true);
        target = load_domain(dir / "tgt", true);
    }
    ~TinyScenario() { fs::remove_all(dir); }
};

std::string dump(const std::vector<ScenarioResult>& rs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rs) j.push_back(r.to_json(false));
    return j.dump();
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config JSON round trip and strict keys") {
    ExperimentConfig c;
    c.train.alpha = 0.25;
    c.train.adapt_lr = 5e-4;
    c.seeds = {4, 5};
    c.model.variant = EncoderVariant::spatial_only;
    c.scenarios = {{"a->b", "x/a", "x/b"}};
    c.sweep.spatial = {0.5};
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    c.train.beta = 0.75;
    CHECK(ExperimentConfig::from_json(c.to_json()).hash() != back.hash());

    CHECK_THROWS_AS(ExperimentConfig::from_json({{"trian", nlohmann::json::object()}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"train", {{"alpah", 1}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"model", {{"encoder", "bogus"}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"seeds", "zero"}}), ConfigError);

    const auto partial = ExperimentConfig::from_json({{"train", {{"epochs", 3}}}});
    CHECK(partial.train.epochs == 3);
    CHECK(partial.train.lr == TrainConfig{}.lr);
    CHECK(partial.seeds.size() == 3);

    ExperimentConfig bad;
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("defaults follow the paper's training setup") {
    const TrainConfig t;
    CHECK(t.epochs == 40);
    CHECK(t.batch_size == 32);
    CHECK(t.lr == 1e-3);
    CHECK(t.temporal_ratio == 0.125);
    CHECK(t.spatial_ratio == 0.5);
    const ModelConfig m;
    CHECK(m.embed_dim == 256);
    CHECK(ExperimentConfig{}.search.draws == 50);
}

TEST_CASE("search draws are uniform and seed deterministic") {
    SearchSpace s;
    const auto a = draw_configs(s), b = draw_configs(s);
    REQUIRE(a.size() == 50);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].to_json() == b[i].to_json());
    s.seed = 1;
    CHECK(draw_configs(s)[0].to_json() != a[0].to_json());
    for (const auto& d : a) {
        CHECK(d.alpha >= 0.0);
        CHECK(d.alpha <= 1.0);
        CHECK(std::find(s.lr.begin(), s.lr.end(), d.lr) != s.lr.end());
    }
    s.draws = 0;
    CHECK_THROWS_AS(draw_configs(s), ConfigError);
}

TEST_CASE("spearman correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    // Ties take the average rank: ranks (1.5, 1.5, 3) vs (1, 2, 3).
    CHECK(spearman({1, 1, 2}, {1, 2, 3}) == doctest::Approx(std::sqrt(0.75)));
    CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
    CHECK(spearman({1}, {1}) == 0.0);
}

TEST_CASE("summaries use the population std") {
    const auto s = summarize({0.9, 0.8, 0.7});
    CHECK(s.mean == doctest::Approx(0.8));
    CHECK(s.std == doctest::Approx(std::sqrt(0.02 / 3)));
    CHECK(summarize({}).n == 0);
}

TEST_CASE("scenario runs are deterministic apart from wall time") {
    TinyScenario t("det");
    const auto a = run_scenario(t.cfg, t.cfg.scenarios[0]);
    const auto b = run_scenario(t.cfg, t.cfg.scenarios[0]);
    REQUIRE(a.size() == 2);
    for (const auto& r : a) {
        CHECK(r.ok);
        std::int64_t total = 0;
        for (auto c : r.confusion) total += c;
        CHECK(total == t.target.test.size());
        CHECK_FALSE(r.to_json(false).contains("wall_ms"));
    }
    CHECK(dump(a) == dump(b));

    auto so = t.cfg;
    so.source_only = true;
    const auto s = run_scenario(so, so.scenarios[0]);
    CHECK(s[0].source_only);
    CHECK(s[0].to_json()["source_only"] == true);
}

TEST_CASE("a failing seed is recorded and the rest continue") {
    TinyScenario t("fail");
    auto cfg = t.cfg;
    cfg.scenarios[0].target = t.dir / "missing";
    const auto rs = run_scenario(cfg, cfg.scenarios[0]);
    REQUIRE(rs.size() == 2);
    for (const auto& r : rs) {
        CHECK_FALSE(r.ok);
        CHECK_FALSE(r.error.empty());
        CHECK(r.to_json()["status"] == "failed");
    }
    const auto table = format_scenario_table({rs}, "TERSE");
    CHECK(table.find("n/a") != std::string::npos);
}

TEST_CASE("scenario table layout") {
    F1Report f;
    f.macro = 0.9;
    f.per_class = {0.9};
    f.included = {true};
    f.confusion = {1};
    auto r1 = make_result("2->11", 0, f);
    f.macro = 0.8;
    auto r2 = make_result("2->11", 1, f);
    f.macro = 0.5;
    auto r3 = make_result("6->23", 0, f);
    const auto table = format_scenario_table({{r1, r2}, {r3}}, "TERSE");
    std::istringstream in(table);
    std::string header, rule, row1, row2, avg;
    std::getline(in, header);
    std::getline(in, rule);
    std::getline(in, row1);
    std::getline(in, row2);
    std::getline(in, avg);
    CHECK(header.find("Scenario") == 0);
    CHECK(header.find("TERSE") != std::string::npos);
    CHECK(rule.find_first_not_of('-') == std::string::npos);
    CHECK(row1.find("2->11") == 0);
    CHECK(row1.find("85.00±5.00") != std::string::npos);
    CHECK(row2.find("50.00±0.00") != std::string::npos);
    CHECK(avg.find("AVG") == 0);
    CHECK(avg.find("67.50") != std::string::npos);
    const auto csv = scenario_csv({{r1, r2}, {r3}});
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("feature export shape and repeatability") {
    TinyScenario t("export");
    TrainConfig tc = t.cfg.train;
    auto model = pretrain_source(t.source.train, model_for(t.cfg.model, t.source.meta), tc);
    std::ostringstream a, b;
    export_features(model, t.target.test, "target", a);
    export_features(model, t.target.test, "target", b);
    CHECK(a.str() == b.str());
    std::istringstream in(a.str());
    std::string line;
    std::int64_t rows = -1;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') + 1 == 4 * 8 + 2);
        ++rows;
    }
    CHECK(rows == t.target.test.size());
    CHECK(a.str().find(",target,") != std::string::npos);

    std::ostringstream c;
    export_features(model, TimeSeriesBatch{t.target.test.values, std::nullopt}, "target", c, false);
    CHECK(c.str().substr(c.str().size() - 9) == ",target,\n");
}

TEST_CASE("small ablation, sweep and search complete") {
    TinyScenario t("grid");
    auto cfg = t.cfg;
    cfg.seeds = {0};
    const auto ab = run_ablation(cfg, t.source, t.target);
    CHECK(ab.cells.size() == 12);
    const auto& both = ab.cell(TaskVariant::both, EncoderVariant::full);
    CHECK(both.f1.size() == 1);
    CHECK(ab.table().find("neither") != std::string::npos);

    cfg.sweep.temporal = {0.125, 0.25};
    cfg.sweep.spatial = {0.5};
    const auto sw = sweep_mask(cfg, t.source, t.target);
    CHECK(sw.cells.size() == 2);
    CHECK(sw.mean_at(0.125, 0.5) <= sw.max_mean());
    CHECK_THROWS_AS(sw.mean_at(0.5, 0.5), ConfigError);

    cfg.search.draws = 3;
    const auto rep = random_search(cfg, t.source, t.target);
    REQUIRE(rep.ranked.size() == 3);
    CHECK(rep.ranked[0].objective.total() <= rep.ranked[1].objective.total());
    CHECK(rep.ranked[1].objective.total() <= rep.ranked[2].objective.total());
    CHECK(rep.best_runs.size() == 1);
    CHECK(rep.to_json()["ranked"].size() == 3);
}

TEST_CASE("mismatched domains are a data error") {
    TinyScenario t("mismatch");
    auto other = synth_domains(make_default_spec(5, 3, 32), 4, 1);
    const auto wrong = prepare_domain(other.target, true);
    CHECK_THROWS_AS(run_seed(t.cfg, "x", t.source, wrong, 0, false), DataError);
}

}
