#include <catch2/catch_amalgamated.hpp>

#include "attnlab/attention.hpp"
#include "attnlab/autodiff.hpp"
#include "attnlab/rng.hpp"

using namespace attnlab;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                             double std_dev = 1.0) {
    Tensor<double> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data) v = rng.normal(0.0, std_dev);
    return t;
}

// scalar head 0.5*sum(out^2); keeps every output coordinate live
ad::Id<double> half_sum_squares(GradTape<double>& t, ad::Id<double> x) {
    double s = 0.0;
    for (double v : t.val(x).data) s += v * v;
    const auto id = t.size();
    return t.node(Tensor<double>::from({1}, {0.5 * s}), [x, id](GradTape<double>& tp) {
        const double g = tp.grad(id).data[0];
        Tensor<double> gx = tp.val(x);
        for (auto& v : gx.data) v *= g;
        tp.add_grad(x, gx);
    });
}

// grad-checks a graph built by `build` against its tape gradient
double check_op(const Tensor<double>& x,
                const std::function<ad::Id<double>(GradTape<double>&, ad::Id<double>)>& build,
                double step = 1e-5) {
    auto scalar_of = [&](const Tensor<double>& in) {
        GradTape<double> t;
        auto xid = t.leaf(in);
        return t.val(half_sum_squares(t, build(t, xid))).data[0];
    };
    GradTape<double> t;
    auto xid = t.leaf(x);
    auto head = half_sum_squares(t, build(t, xid));
    t.backward(head);
    return grad_check<double>(scalar_of, t.grad(xid), x, step);
}

}  // namespace

TEST_CASE("grad_check on a constant-gradient function", "[autodiff]") {
    auto x = random_tensor({6}, 1);
    auto f = [](const Tensor<double>& t) {
        double s = 0.0;
        for (double v : t.data) s += v;
        return s;
    };
    Tensor<double> ones({6}, 1.0);
    CHECK(grad_check<double>(f, ones, x, 1e-5) < 1e-10);
}

TEST_CASE("grad_check on a quadratic", "[autodiff]") {
    auto x = Tensor<double>::from({2}, {1.0, 2.0});
    auto f = [](const Tensor<double>& t) {
        double s = 0.0;
        for (double v : t.data) s += v * v;
        return 0.5 * s;
    };
    CHECK(grad_check<double>(f, x, x, 1e-4) < 1e-8);  // gradient of 0.5||x||^2 is x
}

TEST_CASE("grad_check rejects non-finite values", "[autodiff]") {
    auto x = Tensor<double>::from({1}, {1.0});
    auto f = [](const Tensor<double>&) { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS(grad_check<double>(f, x, x, 1e-5));
}

TEST_CASE("matmul backward", "[autodiff]") {
    auto a = random_tensor({3, 4}, 2);
    auto b = random_tensor({4, 5}, 3);
    double err = check_op(a, [&](GradTape<double>& t, ad::Id<double> x) {
        auto bid = t.leaf(b);
        return ad::matmul(t, x, bid);
    });
    CHECK(err < 1e-6);
    err = check_op(b, [&](GradTape<double>& t, ad::Id<double> x) {
        auto aid = t.leaf(a);
        return ad::matmul(t, aid, x);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("rmsnorm backward", "[autodiff]") {
    auto x = random_tensor({5, 8}, 4);
    auto g = random_tensor({8}, 5, 0.3);
    for (auto& v : g.data) v += 1.0;
    double err = check_op(x, [&](GradTape<double>& t, ad::Id<double> xid) {
        auto gid = t.leaf(g);
        return ad::rmsnorm(t, xid, gid, 1e-6);
    });
    CHECK(err < 1e-6);
    err = check_op(g, [&](GradTape<double>& t, ad::Id<double> gid) {
        auto xid = t.leaf(x);
        return ad::rmsnorm(t, xid, gid, 1e-6);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm_rows backward", "[autodiff]") {
    auto x = random_tensor({4, 6}, 6);
    auto g = random_tensor({6}, 7, 0.2);
    for (auto& v : g.data) v += 1.0;
    double err = check_op(x, [&](GradTape<double>& t, ad::Id<double> xid) {
        auto gid = t.leaf(g);
        return ad::layer_norm_rows(t, xid, gid, 1e-6);
    });
    CHECK(err < 1e-5);
    err = check_op(g, [&](GradTape<double>& t, ad::Id<double> gid) {
        auto xid = t.leaf(x);
        return ad::layer_norm_rows(t, xid, gid, 1e-6);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("swiglu backward", "[autodiff]") {
    auto a = random_tensor({3, 7}, 8);
    auto b = random_tensor({3, 7}, 9);
    double err = check_op(a, [&](GradTape<double>& t, ad::Id<double> xid) {
        auto bid = t.leaf(b);
        return ad::swiglu(t, xid, bid);
    });
    CHECK(err < 1e-6);
    err = check_op(b, [&](GradTape<double>& t, ad::Id<double> xid) {
        auto aid = t.leaf(a);
        return ad::swiglu(t, aid, xid);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("embedding backward scatters into the table", "[autodiff]") {
    auto table = random_tensor({10, 4}, 10);
    std::vector<int> ids{3, 7, 3, 0};
    double err = check_op(table, [&](GradTape<double>& t, ad::Id<double> tid) {
        return ad::embedding(t, tid, ids);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("split and merge heads invert each other", "[autodiff]") {
    auto x = random_tensor({6, 8}, 11);
    GradTape<double> t;
    auto xid = t.leaf(x);
    auto split = ad::split_heads(t, xid, 4);
    auto merged = ad::merge_heads(t, split);
    CHECK(t.val(merged).data == x.data);
    CHECK(t.val(split).shape == std::vector<std::size_t>{4, 6, 2});
}

TEST_CASE("cross_entropy backward", "[autodiff]") {
    auto logits = random_tensor({5, 9}, 12);
    std::vector<int> targets{0, 3, 8, 1, 4};
    double err = check_op(logits, [&](GradTape<double>& t, ad::Id<double> lid) {
        return ad::cross_entropy(t, lid, targets);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("attend backward, full and windowed, with GQA", "[autodiff]") {
    const std::size_t L = 7, d = 4;
    auto q = random_tensor({4, L, d}, 13, 0.7);
    auto k = random_tensor({2, L, d}, 14, 0.7);
    auto v = random_tensor({2, L, d}, 15, 0.7);
    for (MaskKind kind : {MaskKind::causal_full, MaskKind::causal_swa}) {
        const AttnMask mask = kind == MaskKind::causal_swa
                                  ? build_mask(L, kind, std::size_t{3})
                                  : build_mask(L, kind);
        auto builder = [&](const Tensor<double>& which, int slot) {
            return check_op(which, [&, slot](GradTape<double>& t, ad::Id<double> xid) {
                auto qid = slot == 0 ? xid : t.leaf(q);
                auto kid = slot == 1 ? xid : t.leaf(k);
                auto vid = slot == 2 ? xid : t.leaf(v);
                return ad::attend(t, qid, kid, vid, mask, 4, 2, true);
            });
        };
        CHECK(builder(q, 0) < 1e-5);
        CHECK(builder(k, 1) < 1e-5);
        CHECK(builder(v, 2) < 1e-5);
    }
}

TEST_CASE("rope backward is the inverse rotation", "[autodiff]") {
    const std::size_t L = 5, d = 6;
    auto x = random_tensor({2, L, d}, 16);
    auto cache = std::make_shared<RopeCache<double>>(build_rope_cache(10000.0, d, 64));
    auto positions = std::make_shared<std::vector<std::size_t>>(iota_positions(L));
    double err = check_op(x, [&](GradTape<double>& t, ad::Id<double> xid) {
        return ad::rope(t, xid, positions, cache);
    });
    CHECK(err < 1e-6);
}
