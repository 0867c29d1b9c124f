#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "emgdis/network.hpp"

using namespace emgdis;
using namespace emgdis::ad;

namespace {

// Small architecture that keeps construction and forwards cheap.
Arch tiny_arch() {
    Arch a;
    a.in_len = 40;
    a.in_channels = 2;
    a.ext_channels = 4;
    a.enc1_channels = 4;
    a.enc2_channels = 6;
    a.bottleneck_dim = 8;
    return a;
}

TensorPtr<float> random_input(Rng& rng, int n, const Arch& a) {
    auto x = make_tensor<float>({n, a.in_len, a.in_channels});
    for (auto& v : x->v) v = static_cast<float>(rng.normal());
    return x;
}

bool same_values(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("variant names round-trip") {
    for (auto v : {Variant::Proposed, Variant::Erm, Variant::POnly, Variant::Mtl})
        CHECK(variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(variant_from_string("dann"), ValidationError);
}

TEST_CASE("default architecture walks the documented shape chain") {
    Arch a;
    CHECK(a.in_len == 408);
    CHECK(a.in_channels == 8);
    CHECK(a.ext_out_len() == 204);
    CHECK(a.enc1_out_len() == 102);
    CHECK(a.enc2_out_len() == 51);
    CHECK(a.flat_dim() == 6528);

    auto net = build_model<float>(Variant::Proposed, 6, 30, 1);
    Rng rng(2);
    auto x = random_input(rng, 2, net.arch);
    Graph<float> g;
    Rng drop(3);
    auto out = forward(net, g, x, Mode::Train, 0.1f, 1.0f, &drop);
    CHECK(out.features->shape == std::vector<int>{2, 204, 32});
    CHECK(out.z_p->shape == std::vector<int>{2, 256});
    CHECK(out.z_s->shape == std::vector<int>{2, 256});
    CHECK(out.logits_p->shape == std::vector<int>{2, 6});
    CHECK(out.logits_s->shape == std::vector<int>{2, 30});
    CHECK(out.logits_adv_s->shape == std::vector<int>{2, 30});
    CHECK(out.logits_adv_p->shape == std::vector<int>{2, 6});
    CHECK(out.y_p->shape == std::vector<int>{2, 6});
    CHECK(out.y_s->shape == std::vector<int>{2, 30});
    CHECK(out.y_adv_s->shape == std::vector<int>{2, 30});
    CHECK(out.y_adv_p->shape == std::vector<int>{2, 6});
    for (int i = 0; i < 2; ++i) {
        double row = 0.0;
        for (int j = 0; j < 6; ++j) row += out.y_p->v[static_cast<size_t>(i) * 6 + j];
        CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("parameter counts follow the variant wiring") {
    const Arch a;  // default sizes
    auto proposed = build_model<float>(Variant::Proposed, 6, 30, 1, a);
    auto erm = build_model<float>(Variant::Erm, 6, 30, 1, a);
    auto ponly = build_model<float>(Variant::POnly, 6, 30, 1, a);
    auto mtl = build_model<float>(Variant::Mtl, 6, 30, 1, a);

    const size_t conv_block = [](int cin, int cout, int k) {
        return static_cast<size_t>(cout) * cin * k + 3 * static_cast<size_t>(cout);
    }(8, 32, 5);
    const size_t branch_shared =
        static_cast<size_t>(64) * 32 * 3 + 3 * 64 + static_cast<size_t>(128) * 64 * 5 + 3 * 128 +
        static_cast<size_t>(256) * 6528 + 3 * 256;
    const size_t head6 = static_cast<size_t>(6) * 256 + 6;
    const size_t head30 = static_cast<size_t>(30) * 256 + 30;

    CHECK(erm.parameter_count() == conv_block + branch_shared + head6);
    CHECK(ponly.parameter_count() == erm.parameter_count() + head30);
    CHECK(proposed.parameter_count() == conv_block + 2 * (branch_shared) + head6 + head30);
    CHECK(mtl.parameter_count() == proposed.parameter_count());
    CHECK(erm.parameter_count() < proposed.parameter_count());

    // conv block = {w,b,gamma,beta}; branch = 2 blocks + bottleneck quad + head pair
    CHECK(proposed.parameters().size() == 4 + 14 + 14);
    CHECK(erm.parameters().size() == 4 + 14);
    CHECK(ponly.parameters().size() == 4 + 14 + 2);
    CHECK(proposed.buffers().size() == 2 + 6 + 6);
}

TEST_CASE("same seed builds bitwise-identical models") {
    const Arch a = tiny_arch();
    auto m1 = build_model<float>(Variant::Proposed, 3, 4, 42, a);
    auto m2 = build_model<float>(Variant::Proposed, 3, 4, 42, a);
    auto m3 = build_model<float>(Variant::Proposed, 3, 4, 43, a);
    auto p1 = m1.parameters(), p2 = m2.parameters(), p3 = m3.parameters();
    REQUIRE(p1.size() == p2.size());
    bool any_diff = false;
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].name == p2[i].name);
        CHECK(same_values(p1[i].t->v, p2[i].t->v));
        if (!same_values(p1[i].t->v, p3[i].t->v)) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("initialization bounds and constants") {
    auto net = build_model<float>(Variant::Proposed, 6, 30, 7, tiny_arch());
    for (auto& p : net.parameters()) {
        const bool is_weight = p.name.ends_with(".w");
        const bool is_gamma = p.name.ends_with(".gamma");
        if (is_weight) {
            int fan_in = 0;
            if (p.t->rank() == 3)
                fan_in = p.t->dim(1) * p.t->dim(2);
            else
                fan_in = p.t->dim(1);
            const double bound = std::sqrt(6.0 / fan_in);
            bool spread = false;
            for (float v : p.t->v) {
                CHECK(std::abs(v) <= bound);
                if (std::abs(v) > bound / 2) spread = true;
            }
            CHECK(spread);
        } else if (is_gamma) {
            for (float v : p.t->v) CHECK(v == 1.0f);
        } else {
            for (float v : p.t->v) CHECK(v == 0.0f);  // biases and betas
        }
        CHECK(p.t->requires_grad);
    }
    for (auto& b : net.buffers()) {
        const float expect = b.name.ends_with("running_var") ? 1.0f : 0.0f;
        for (float v : *b.data) CHECK(v == expect);
    }
}

TEST_CASE("variants expose exactly their paths") {
    const Arch a = tiny_arch();
    Rng rng(5);

    auto erm = build_model<float>(Variant::Erm, 3, 0, 1, a);
    CHECK(erm.capabilities() == kMainPattern);
    CHECK_FALSE(erm.has_subject_branch());
    CHECK_THROWS_AS(erm.subject_head(), ContractError);
    auto x = random_input(rng, 2, a);
    Graph<float> g;
    auto out = forward(erm, g, x, Mode::Eval, 0.f, 0.f, nullptr);
    CHECK(out.logits_p != nullptr);
    CHECK(out.logits_s == nullptr);
    CHECK(out.logits_adv_s == nullptr);
    CHECK(out.logits_adv_p == nullptr);
    CHECK(out.z_s == nullptr);
    Graph<float> g2;
    CHECK_THROWS_AS(forward(erm, g2, x, Mode::Eval, 0.f, 0.f, nullptr, kMainSubject),
                    ValidationError);

    auto ponly = build_model<float>(Variant::POnly, 3, 4, 1, a);
    CHECK(ponly.capabilities() == (kMainPattern | kAdvSubject));
    CHECK_FALSE(ponly.has_subject_branch());
    CHECK(ponly.adv_subject_head.has_value());
    CHECK(&ponly.subject_head() == &*ponly.adv_subject_head);
    Graph<float> g3;
    auto pout = forward(ponly, g3, x, Mode::Eval, 0.5f, 0.f, nullptr);
    CHECK(pout.logits_p != nullptr);
    CHECK(pout.logits_adv_s != nullptr);
    CHECK(pout.logits_s == nullptr);
    CHECK(pout.logits_adv_p == nullptr);

    auto mtl = build_model<float>(Variant::Mtl, 3, 4, 1, a);
    CHECK(mtl.capabilities() == (kMainPattern | kMainSubject));
    CHECK(mtl.has_subject_branch());
    Graph<float> g4;
    auto mout = forward(mtl, g4, x, Mode::Eval, 0.f, 0.f, nullptr);
    CHECK(mout.logits_p != nullptr);
    CHECK(mout.logits_s != nullptr);
    CHECK(mout.logits_adv_s == nullptr);
    CHECK(mout.logits_adv_p == nullptr);

    auto proposed = build_model<float>(Variant::Proposed, 3, 4, 1, a);
    CHECK(proposed.capabilities() == kAllPaths);
    CHECK(&proposed.subject_head() == &proposed.subject->classifier);
}

TEST_CASE("the reversed subject path feeds the shared subject head") {
    auto net = build_model<float>(Variant::Proposed, 3, 4, 9, tiny_arch());
    Rng rng(1);
    auto x = random_input(rng, 3, net.arch);
    auto& head = net.subject->classifier;
    REQUIRE_FALSE(head.w->has_grad());

    Graph<float> g;
    auto out = forward(net, g, x, Mode::Eval, 1.0f, 1.0f, nullptr);
    std::vector<float> ones(out.logits_adv_s->numel(), 1.0f);
    auto l = weighted_sum(g, out.logits_adv_s, ones);
    g.backward(l);
    CHECK(head.w->has_grad());
    bool nonzero = false;
    for (float v : head.w->g)
        if (v != 0.0f) nonzero = true;
    CHECK(nonzero);
}

TEST_CASE("model construction validates its inputs") {
    CHECK_THROWS_AS(build_model<float>(Variant::Proposed, 1, 30, 0), ValidationError);
    CHECK_THROWS_AS(build_model<float>(Variant::Proposed, 6, 1, 0), ValidationError);
    CHECK_THROWS_AS(build_model<float>(Variant::POnly, 6, 1, 0), ValidationError);
    CHECK_NOTHROW(build_model<float>(Variant::Erm, 6, 0, 0, tiny_arch()));
    Arch bad = tiny_arch();
    bad.in_len = 12;
    CHECK_THROWS_AS(build_model<float>(Variant::Erm, 6, 0, 0, bad), ValidationError);
}

TEST_CASE("forward rejects mismatched windows") {
    auto net = build_model<float>(Variant::Erm, 3, 0, 1, tiny_arch());
    auto bad = make_tensor<float>({2, 48, 2});
    Graph<float> g;
    CHECK_THROWS_AS(forward(net, g, bad, Mode::Eval, 0.f, 0.f, nullptr), ShapeError);
    auto bad_c = make_tensor<float>({2, 40, 3});
    CHECK_THROWS_AS(forward(net, g, bad_c, Mode::Eval, 0.f, 0.f, nullptr), ShapeError);
}

TEST_CASE("eval forwards are pure and repeatable") {
    auto net = build_model<float>(Variant::Proposed, 3, 4, 21, tiny_arch());
    Rng rng(8);
    auto x = random_input(rng, 4, net.arch);

    const auto mean_before = net.extractor.bn.running_mean;
    const auto updates_before = net.extractor.bn.updates;
    Graph<float> g1, g2;
    g1.set_recording(false);
    g2.set_recording(false);
    auto a = forward(net, g1, x, Mode::Eval, 0.f, 0.f, nullptr, kMainPattern);
    auto b = forward(net, g2, x, Mode::Eval, 0.f, 0.f, nullptr, kMainPattern);
    CHECK(same_values(a.y_p->v, b.y_p->v));
    CHECK(same_values(a.z_p->v, b.z_p->v));
    CHECK(net.extractor.bn.running_mean == mean_before);
    CHECK(net.extractor.bn.updates == updates_before);

    Graph<float> gt;
    Rng drop(9);
    (void)forward(net, gt, x, Mode::Train, 0.1f, 1.0f, &drop);
    CHECK(net.extractor.bn.updates == updates_before + 1);
}

TEST_CASE("feature export shapes and purity") {
    auto net = build_model<float>(Variant::Proposed, 3, 4, 33, tiny_arch());
    Rng rng(10);
    auto x = random_input(rng, 5, net.arch);

    int dim = 0;
    auto original = export_features(net, x, FeatureSpace::Original, &dim);
    CHECK(dim == net.arch.ext_out_len() * net.arch.ext_channels);
    CHECK(original.size() == static_cast<size_t>(5) * dim);

    auto pattern = export_features(net, x, FeatureSpace::Pattern, &dim);
    CHECK(dim == net.arch.bottleneck_dim);
    CHECK(pattern.size() == static_cast<size_t>(5) * 8);
    auto pattern2 = export_features(net, x, FeatureSpace::Pattern, &dim);
    CHECK(same_values(pattern, pattern2));

    auto subject = export_features(net, x, FeatureSpace::Subject, &dim);
    CHECK(subject.size() == pattern.size());
    CHECK_FALSE(same_values(subject, pattern));

    auto erm = build_model<float>(Variant::Erm, 3, 0, 1, tiny_arch());
    CHECK_THROWS_AS(export_features(erm, x, FeatureSpace::Subject), ValidationError);
    auto ponly = build_model<float>(Variant::POnly, 3, 4, 1, tiny_arch());
    CHECK_THROWS_AS(export_features(ponly, x, FeatureSpace::Subject), ValidationError);
}

TEST_CASE("default-size feature export matches the documented width") {
    auto net = build_model<float>(Variant::Erm, 6, 0, 3);
    Rng rng(4);
    auto x = random_input(rng, 3, net.arch);
    int dim = 0;
    auto original = export_features(net, x, FeatureSpace::Original, &dim);
    CHECK(dim == 6528);
    CHECK(original.size() == static_cast<size_t>(3) * 6528);
}
