#include "doctest.h"

#include <filesystem>

#include "cxdi/datagen.hpp"
#include "cxdi/network.hpp"
#include "cxdi/optimize.hpp"

using namespace cxdi;

TEST_CASE("network output extent is half the input") {
    for (auto g : {Grid3::cube(8), Grid3{16, 8, 24}}) {
        nn::NetworkSpec spec;
        spec.input_grid = g;
        spec.encoder_widths = {2, 4};
        const nn::Network net(spec);
        const auto p = nn::init_params(spec, 1);
        CHECK(p.values.size() == net.param_count());
        const auto y = net.forward(RealVolume(g, 1.0), p.values);
        CHECK(y.amplitude.grid() == g.half());
        CHECK(y.phase.grid() == g.half());
    }
    nn::NetworkSpec bad;
    bad.input_grid = Grid3{12, 12, 12};
    bad.encoder_widths = {2, 4, 8};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("parameters survive a save/load round trip") {
    auto spec = nn::NetworkSpec::desk(8);
    spec.encoder_widths = {2, 4};
    const auto p = nn::init_params(spec, 7);
    const auto path = std::filesystem::temp_directory_path() / "cxdi_params_test.bin";
    nn::save_params(p, path);
    const auto q = nn::load_params(path);
    std::filesystem::remove(path);
    CHECK(q.spec == p.spec);
    CHECK(q.seed == 7);
    CHECK(q.values == p.values);
    CHECK(nn::encode_params(q) == nn::encode_params(p));
    CHECK_THROWS_AS(nn::decode_params("nonsense"), Error);
}

TEST_CASE("optimizer schedule") {
    const auto s = TrainSchedule::refine_default();
    CHECK(s.optimizer_at(0) == OptimizerKind::adam);
    CHECK(s.optimizer_at(199) == OptimizerKind::adam);
    CHECK(s.optimizer_at(200) == OptimizerKind::sgd);
    CHECK(s.optimizer_at(400) == OptimizerKind::adam);
    CHECK(s.lr_at(0) == 0.006);
    CHECK(s.lr_at(399) == 0.006 * 0.95);
    CHECK(s.lr_at(400) == 0.006 * 0.95 * 0.95);
}

TEST_CASE("ADAM first step moves each coordinate by lr against the gradient sign") {
    std::vector<double> x{1.0, -2.0, 3.0};
    const std::vector<double> g{0.5, -4.0, 1e-3};
    AdamState st;
    adam_step(x, g, st, 0.1);
    CHECK(x[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(x[1] == doctest::Approx(-1.9).epsilon(1e-6));
    CHECK(x[2] == doctest::Approx(2.9).epsilon(1e-4));
    std::vector<double> y{1.0};
    sgd_step(y, std::vector<double>{2.0}, 0.25);
    CHECK(y[0] == 0.5);
    CHECK_THROWS_AS(adam_step(y, std::vector<double>{1.0}, st, 0.1), Error);
}

TEST_CASE("refinement trace is finite and never worse than its start") {
    const Grid3 g = Grid3::cube(16);
    const auto rec = generate_sample(g, ParamRanges::defaults(g), 3, 0, 1);
    RefineConfig cfg;
    cfg.spec = nn::NetworkSpec::desk(16);
    cfg.spec.encoder_widths = {4, 8};
    cfg.init = RandomInit{5};
    cfg.schedule = {60, 20, 0.006, 0.95, 20};
    const auto r = unsupervised_refine(rec.pattern, cfg);
    REQUIRE(r.trace.size() == 60);
    double best = r.trace.front().loss;
    for (const auto& row : r.trace) {
        CHECK(std::isfinite(row.loss));
        CHECK(row.optimizer == cfg.schedule.optimizer_at(row.epoch));
        CHECK(row.lr == cfg.schedule.lr_at(row.epoch));
        best = std::min(best, row.loss);
    }
    CHECK(best <= r.trace.front().loss);
    CHECK(r.object.grid() == g.half());
    CHECK(r.predicted_amplitude.grid() == g);

    const auto again = unsupervised_refine(rec.pattern, cfg);
    CHECK(again.params.values == r.params.values);

    RefineConfig transfer = cfg;
    transfer.init = TransferInit{r.params};
    transfer.schedule.total_epochs = 5;
    CHECK(unsupervised_refine(rec.pattern, transfer).trace.front().loss <= r.trace.front().loss);
}

TEST_CASE("supervised training lowers the loss") {
    const Grid3 g = Grid3::cube(8);
    const auto data = generate_dataset(3, g, ParamRanges::defaults(g), 4);
    auto spec = nn::NetworkSpec::desk(8);
    spec.encoder_widths = {2, 4};
    TrainConfig cfg;
    cfg.schedule = {20, 5, 0.01, 0.95, 5};
    cfg.batch_size = 2;
    const auto r = supervised_train(data, spec, cfg);
    CHECK(r.curve.size() == 20);
    CHECK(r.best_loss < r.curve.front().train);
    CHECK(r.curve_csv().rfind("epoch,train_loss,validation_loss,lr,optimizer\n", 0) == 0);
    CHECK(predict(r.params, data[0].pattern).object.grid() == g.half());
}
