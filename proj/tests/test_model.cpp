#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "crac/losses.hpp"
#include "crac/model.hpp"
#include "test_util.hpp"

using namespace crac;
using testutil::rand_labels;
using testutil::rand_tensor;

namespace {

// Independent count straight from the documented architecture: a KxCx(k x k)
// conv carries K*C*k*k weights plus K biases.
std::size_t counted_params(std::size_t K, std::size_t in_c) {
    struct Conv {
        std::size_t out, in, k;
    };
    const Conv convs[] = {{8, in_c, 3}, {8, 8, 3},  {16, 8, 3},  {16, 16, 3},
                          {32, 16, 3},  {32, 32, 3}, {16, 48, 3}, {16, 16, 3},
                          {8, 24, 3},   {8, 8, 3},   {K, 8, 1}};
    std::size_t n = 0;
    for (const Conv& c : convs) n += c.out * c.in * c.k * c.k + c.out;
    return n;
}

}  // namespace

TEST_CASE("parameter count matches the frozen regression constant for K=4") {
    const ModelParams p = build_model(7, 4);
    CHECK(p.parameter_count() == 29644);  // frozen from the counting oracle
    CHECK(p.parameter_count() == counted_params(4, 1));
}

TEST_CASE("parameter count oracle holds for other class counts") {
    for (std::size_t K : {2, 3, 6}) {
        const ModelParams p = build_model(1, K);
        CHECK(p.parameter_count() == counted_params(K, 1));
    }
}

TEST_CASE("architecture table names and shapes match the built parameters") {
    const ModelParams p = build_model(3, 4);
    const auto table = architecture_table(4);
    REQUIRE(p.names.size() == table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        CHECK(p.names[i] == table[i].name);
        CHECK(p.values[i].shape == table[i].shape);
    }
}

TEST_CASE("same seed builds bit-identical parameters; different seeds differ") {
    const ModelParams a = build_model(42, 4);
    const ModelParams b = build_model(42, 4);
    const ModelParams c = build_model(43, 4);
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        all_equal = all_equal && a.values[i].data == b.values[i].data;
        any_diff = any_diff || a.values[i].data != c.values[i].data;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("forward shape contract and determinism") {
    Rng rng(5);
    const ModelParams p = build_model(11, 4);
    const Tensor batch = rand_tensor(rng, {2, 1, 16, 16}, 0.0, 1.0);

    Graph g1;
    const ModelForward f1 = model_forward(g1, p, batch);
    CHECK(f1.logits.shape() == Shape{2, 4, 16, 16});

    Graph g2;
    const ModelForward f2 = model_forward(g2, p, batch);
    CHECK(f1.logits.tensor().data == f2.logits.tensor().data);
}

TEST_CASE("indivisible extents are rejected") {
    Rng rng(5);
    const ModelParams p = build_model(11, 4);
    Graph g;
    CHECK_THROWS_AS(model_forward(g, p, rand_tensor(rng, {1, 1, 10, 16})),
                    std::invalid_argument);
}

TEST_CASE("gradient of mean(logits) w.r.t. every parameter passes grad_check") {
    Rng rng(7);
    const ModelParams p = build_model(3, 3);
    Graph g;
    const ModelForward fwd = model_forward(g, p, rand_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0));
    Value loss = g.mean(fwd.logits);
    GradCheckOptions opts;
    opts.max_elements_per_param = 4;
    opts.tie_exclude_eps = 0.0;  // relu-floor pooling ties are inert
    const GradCheckReport rep = grad_check(g, loss, opts);
    CHECK_FALSE(rep.excluded);
    CHECK(rep.pass);
}

TEST_CASE("full forward+loss+backward passes grad_check on a 2-sample 16x16 batch") {
    Rng rng(9);
    GradCheckOptions opts;
    opts.max_elements_per_param = 3;
    opts.tie_exclude_eps = 0.0;
    // Kink-adjacent draws are excluded by contract; regenerate them.
    for (int attempt = 0; attempt < 20; ++attempt) {
        const ModelParams p = build_model(rng.next_u64(), 3);
        Graph g;
        const ModelForward fwd = model_forward(g, p, rand_tensor(rng, {2, 1, 16, 16}, 0.0, 1.0));
        Value loss = cross_entropy(g, fwd.logits, rand_labels(rng, 2 * 16 * 16, 3));
        const GradCheckReport rep = grad_check(g, loss, opts);
        if (rep.excluded) continue;
        CHECK(rep.pass);
        CHECK(rep.max_rel_err < 1e-3);
        return;
    }
    FAIL("no kink-free batch found in 20 attempts");
}

TEST_CASE("checkpoint round trip preserves parameters bit-exactly") {
    ModelParams p = build_model(13, 4);
    // Parameters persist as f32; snap them to that grid first, as the
    // trainer does at every epoch boundary.
    for (Tensor& t : p.values)
        for (double& v : t.data) v = quantize_f32(v);

    const auto path =
        (std::filesystem::temp_directory_path() / "crac_model_roundtrip.crck").string();
    TensorStore store;
    save_model(p, store);
    write_store(store, path);
    const ModelParams back = load_model(read_store(path));

    CHECK(back.num_classes == p.num_classes);
    REQUIRE(back.names == p.names);
    for (std::size_t i = 0; i < p.values.size(); ++i) CHECK(back.values[i].data == p.values[i].data);
}

TEST_CASE("loading a checkpoint with mismatched shapes fails cleanly") {
    ModelParams p = build_model(13, 4);
    TensorStore store;
    save_model(p, store);
    store.put_scalar("meta.num_classes", 3.0);  // head shape no longer matches
    CHECK_THROWS_AS(load_model(store), std::runtime_error);
}
