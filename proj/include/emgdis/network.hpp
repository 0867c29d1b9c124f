#pragma once
// The dual-branch window classifier. A shared temporal extractor feeds two
// symmetric branches: the pattern branch classifies the gesture, the subject
// branch classifies the recording subject. Each branch's embedding is also
// routed through a gradient reversal into the other branch's classifier head,
// which is what pushes subject information out of the pattern embedding and
// vice versa. Variants enable subsets of that wiring.

#include <optional>
#include <string>
#include <vector>

#include "emgdis/ops.hpp"
#include "emgdis/rng.hpp"

namespace emgdis {

enum class Variant { Proposed, Erm, POnly, Mtl };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Proposed: return "proposed";
        case Variant::Erm: return "erm";
        case Variant::POnly: return "p-only";
        case Variant::Mtl: return "mtl";
    }
    throw ValidationError("unknown variant");
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "proposed") return Variant::Proposed;
    if (s == "erm") return Variant::Erm;
    if (s == "p-only") return Variant::POnly;
    if (s == "mtl") return Variant::Mtl;
    throw ValidationError("unknown variant '" + s + "' (expected proposed|erm|p-only|mtl)");
}

// Layer widths and kernel sizes. Convolutions use same-length padding and are
// each followed by batchnorm, relu and a 2x temporal maxpool.
struct Arch {
    int in_len = 408;
    int in_channels = 8;
    int ext_channels = 32, ext_kernel = 5;
    int enc1_channels = 64, enc1_kernel = 3;
    int enc2_channels = 128, enc2_kernel = 5;
    int bottleneck_dim = 256;
    double dropout_rate = 0.5;
    int n_patterns = 6;
    int n_subjects = 30;

    int ext_out_len() const { return in_len / 2; }
    int enc1_out_len() const { return ext_out_len() / 2; }
    int enc2_out_len() const { return enc1_out_len() / 2; }
    int flat_dim() const { return enc2_out_len() * enc2_channels; }
};

namespace net {

template <typename T>
struct ConvBlock {
    ad::TensorPtr<T> w, b, gamma, beta;
    ad::BatchNormState<T> bn;
    int padding = 0;
};

template <typename T>
struct BottleneckLayer {
    ad::TensorPtr<T> w, b, gamma, beta;
    ad::BatchNormState<T> bn;
};

template <typename T>
struct LinearHead {
    ad::TensorPtr<T> w, b;
};

template <typename T>
struct Branch {
    ConvBlock<T> enc1, enc2;
    BottleneckLayer<T> bottleneck;
    LinearHead<T> classifier;
};

}  // namespace net

// Which computation paths a forward pass should produce.
enum PathMask : unsigned {
    kMainPattern = 1u,   // pattern embedding and its classifier
    kMainSubject = 2u,   // subject embedding and its classifier
    kAdvSubject = 4u,    // pattern embedding -> reversal -> subject head
    kAdvPattern = 8u,    // subject embedding -> reversal -> pattern head
    kAllPaths = 15u,
};

template <typename T>
struct ForwardOutputs {
    ad::TensorPtr<T> features;    // extractor output [N, L/2, ext_channels]
    ad::TensorPtr<T> z_p, z_s;    // branch embeddings [N, bottleneck_dim]
    ad::TensorPtr<T> logits_p, logits_s;          // main heads
    ad::TensorPtr<T> logits_adv_s, logits_adv_p;  // reversed cross paths
    ad::TensorPtr<T> y_p, y_s;                    // softmax of the main heads, detached
    ad::TensorPtr<T> y_adv_s, y_adv_p;            // softmax of the reversed paths, detached
};

namespace net {

template <typename T>
ad::TensorPtr<T> detached_softmax(const ad::TensorPtr<T>& logits) {
    auto p = ad::make_tensor<T>(logits->shape);
    p->v = ad::softmax_values(logits->v.data(), logits->dim(0), logits->dim(1));
    return p;
}

}  // namespace net

template <typename T>
struct DualBranchNet {
    Variant variant = Variant::Proposed;
    Arch arch;
    uint64_t seed = 0;

    net::ConvBlock<T> extractor;
    net::Branch<T> pattern;
    std::optional<net::Branch<T>> subject;
    std::optional<net::LinearHead<T>> adv_subject_head;  // p-only variant

    struct ParamRef {
        std::string name;
        ad::TensorPtr<T> t;
    };
    struct BufferRef {
        std::string name;
        std::vector<T>* data;
    };

    bool has_subject_branch() const { return subject.has_value(); }
    bool has_adv_subject_path() const {
        return variant == Variant::Proposed || variant == Variant::POnly;
    }
    bool has_adv_pattern_path() const { return variant == Variant::Proposed; }

    // The head that classifies subjects, shared with the reversed path.
    const net::LinearHead<T>& subject_head() const {
        if (subject) return subject->classifier;
        if (adv_subject_head) return *adv_subject_head;
        throw ContractError("variant '" + to_string(variant) + "' has no subject head");
    }
    net::LinearHead<T>& subject_head() {
        if (subject) return subject->classifier;
        if (adv_subject_head) return *adv_subject_head;
        throw ContractError("variant '" + to_string(variant) + "' has no subject head");
    }

    unsigned capabilities() const {
        switch (variant) {
            case Variant::Proposed: return kAllPaths;
            case Variant::Erm: return kMainPattern;
            case Variant::POnly: return kMainPattern | kAdvSubject;
            case Variant::Mtl: return kMainPattern | kMainSubject;
        }
        throw ValidationError("unknown variant");
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        auto block = [&out](const std::string& prefix, net::ConvBlock<T>& b) {
            out.push_back({prefix + ".conv.w", b.w});
            out.push_back({prefix + ".conv.b", b.b});
            out.push_back({prefix + ".bn.gamma", b.gamma});
            out.push_back({prefix + ".bn.beta", b.beta});
        };
        auto branch = [&out, &block](const std::string& prefix, net::Branch<T>& br) {
            block(prefix + ".enc1", br.enc1);
            block(prefix + ".enc2", br.enc2);
            out.push_back({prefix + ".bottleneck.linear.w", br.bottleneck.w});
            out.push_back({prefix + ".bottleneck.linear.b", br.bottleneck.b});
            out.push_back({prefix + ".bottleneck.bn.gamma", br.bottleneck.gamma});
            out.push_back({prefix + ".bottleneck.bn.beta", br.bottleneck.beta});
            out.push_back({prefix + ".classifier.w", br.classifier.w});
            out.push_back({prefix + ".classifier.b", br.classifier.b});
        };
        block("extractor", extractor);
        branch("pattern", pattern);
        if (subject) branch("subject", *subject);
        if (adv_subject_head) {
            out.push_back({"adv_subject.w", adv_subject_head->w});
            out.push_back({"adv_subject.b", adv_subject_head->b});
        }
        return out;
    }

    std::vector<BufferRef> buffers() {
        std::vector<BufferRef> out;
        auto block = [&out](const std::string& prefix, net::ConvBlock<T>& b) {
            out.push_back({prefix + ".bn.running_mean", &b.bn.running_mean});
            out.push_back({prefix + ".bn.running_var", &b.bn.running_var});
        };
        auto bneck = [&out](const std::string& prefix, net::BottleneckLayer<T>& b) {
            out.push_back({prefix + ".bn.running_mean", &b.bn.running_mean});
            out.push_back({prefix + ".bn.running_var", &b.bn.running_var});
        };
        block("extractor", extractor);
        block("pattern.enc1", pattern.enc1);
        block("pattern.enc2", pattern.enc2);
        bneck("pattern.bottleneck", pattern.bottleneck);
        if (subject) {
            block("subject.enc1", subject->enc1);
            block("subject.enc2", subject->enc2);
            bneck("subject.bottleneck", subject->bottleneck);
        }
        return out;
    }

    size_t parameter_count() {
        size_t n = 0;
        for (auto& p : parameters()) n += p.t->numel();
        return n;
    }
};

namespace net {

template <typename T>
ad::TensorPtr<T> init_weight(Rng& rng, std::vector<int> shape, int fan_in, const std::string& name) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto t = ad::make_tensor<T>(std::move(shape), true, name);
    for (auto& v : t->v) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
ad::TensorPtr<T> init_const(std::vector<int> shape, T value, const std::string& name) {
    auto t = ad::make_tensor<T>(std::move(shape), true, name);
    std::fill(t->v.begin(), t->v.end(), value);
    return t;
}

template <typename T>
ConvBlock<T> make_conv_block(Rng& rng, int cin, int cout, int kernel, const std::string& name) {
    ConvBlock<T> b;
    b.w = init_weight<T>(rng, {cout, cin, kernel}, cin * kernel, name + ".conv.w");
    b.b = init_const<T>({cout}, T(0), name + ".conv.b");
    b.gamma = init_const<T>({cout}, T(1), name + ".bn.gamma");
    b.beta = init_const<T>({cout}, T(0), name + ".bn.beta");
    b.bn = ad::BatchNormState<T>(cout);
    b.padding = kernel / 2;
    return b;
}

template <typename T>
BottleneckLayer<T> make_bottleneck(Rng& rng, int fin, int fout, const std::string& name) {
    BottleneckLayer<T> b;
    b.w = init_weight<T>(rng, {fout, fin}, fin, name + ".linear.w");
    b.b = init_const<T>({fout}, T(0), name + ".linear.b");
    b.gamma = init_const<T>({fout}, T(1), name + ".bn.gamma");
    b.beta = init_const<T>({fout}, T(0), name + ".bn.beta");
    b.bn = ad::BatchNormState<T>(fout);
    return b;
}

template <typename T>
LinearHead<T> make_head(Rng& rng, int fin, int classes, const std::string& name) {
    LinearHead<T> h;
    h.w = init_weight<T>(rng, {classes, fin}, fin, name + ".w");
    h.b = init_const<T>({classes}, T(0), name + ".b");
    return h;
}

template <typename T>
Branch<T> make_branch(Rng& rng, const Arch& a, int classes, const std::string& name) {
    Branch<T> br;
    br.enc1 = make_conv_block<T>(rng, a.ext_channels, a.enc1_channels, a.enc1_kernel, name + ".enc1");
    br.enc2 = make_conv_block<T>(rng, a.enc1_channels, a.enc2_channels, a.enc2_kernel, name + ".enc2");
    br.bottleneck = make_bottleneck<T>(rng, a.flat_dim(), a.bottleneck_dim, name + ".bottleneck");
    br.classifier = make_head<T>(rng, a.bottleneck_dim, classes, name + ".classifier");
    return br;
}

}  // namespace net

template <typename T>
DualBranchNet<T> build_model(Variant variant, int n_patterns, int n_subjects, uint64_t seed,
                             Arch arch = {}) {
    if (n_patterns < 2) throw ValidationError("need at least 2 pattern classes");
    const bool needs_subjects = variant != Variant::Erm;
    if (needs_subjects && n_subjects < 2)
        throw ValidationError("variant '" + to_string(variant) + "' needs at least 2 subjects");
    if (arch.in_len < 8 || arch.in_len % 8 != 0)
        throw ValidationError("window length must be a positive multiple of 8");

    arch.n_patterns = n_patterns;
    arch.n_subjects = n_subjects;

    DualBranchNet<T> m;
    m.variant = variant;
    m.arch = arch;
    m.seed = seed;

    Rng rng(Rng::derive(seed, 0x1217));
    m.extractor = net::make_conv_block<T>(rng, arch.in_channels, arch.ext_channels,
                                          arch.ext_kernel, "extractor");
    m.pattern = net::make_branch<T>(rng, arch, n_patterns, "pattern");
    if (variant == Variant::Proposed || variant == Variant::Mtl)
        m.subject = net::make_branch<T>(rng, arch, n_subjects, "subject");
    else if (variant == Variant::POnly)
        m.adv_subject_head = net::make_head<T>(rng, arch.bottleneck_dim, n_subjects, "adv_subject");
    return m;
}

namespace net {

template <typename T>
ad::TensorPtr<T> conv_block_forward(ad::Graph<T>& g, ConvBlock<T>& b, const ad::TensorPtr<T>& x,
                                    ad::Mode mode) {
    auto h = ad::conv1d(g, x, b.w, b.b, b.padding);
    h = ad::batchnorm1d(g, h, b.gamma, b.beta, b.bn, mode);
    h = ad::relu(g, h);
    return ad::maxpool1d(g, h);
}

template <typename T>
ad::TensorPtr<T> bottleneck_forward(ad::Graph<T>& g, BottleneckLayer<T>& b,
                                    const ad::TensorPtr<T>& x, ad::Mode mode, double rate,
                                    Rng* rng) {
    auto h = ad::linear(g, x, b.w, b.b);
    h = ad::batchnorm1d(g, h, b.gamma, b.beta, b.bn, mode);
    h = ad::relu(g, h);
    return ad::dropout(g, h, rate, mode, rng);
}

// Branch body up to the embedding: two conv blocks, flatten, bottleneck.
template <typename T>
ad::TensorPtr<T> branch_embedding(ad::Graph<T>& g, Branch<T>& br, const Arch& a,
                                  const ad::TensorPtr<T>& feats, ad::Mode mode, Rng* rng) {
    auto h = conv_block_forward(g, br.enc1, feats, mode);
    h = conv_block_forward(g, br.enc2, h, mode);
    const int n = h->rank() == 3 ? h->dim(0) : 1;
    h = ad::reshape(g, h, {n, a.flat_dim()});
    return bottleneck_forward(g, br.bottleneck, h, mode, a.dropout_rate, rng);
}

}  // namespace net

// Runs the requested paths (intersected with what the variant supports).
// lambda_s scales the reversal feeding the subject head, lambda_p the one
// feeding the pattern head. rng is only touched by dropout in train mode.
template <typename T>
ForwardOutputs<T> forward(DualBranchNet<T>& m, ad::Graph<T>& g, const ad::TensorPtr<T>& x,
                          ad::Mode mode, T lambda_s, T lambda_p, Rng* rng,
                          unsigned paths = kAllPaths) {
    const auto d = ad::detail::as_nlc(x->shape, "forward");
    if (d.l != m.arch.in_len || d.c != m.arch.in_channels)
        throw ShapeError("input " + ad::shape_str(x->shape) + " does not match window [" +
                         std::to_string(m.arch.in_len) + "," + std::to_string(m.arch.in_channels) +
                         "]");
    const unsigned active = paths & m.capabilities();
    if (active == 0) throw ValidationError("no forward paths requested");

    ForwardOutputs<T> out;
    out.features = net::conv_block_forward(g, m.extractor, x, mode);

    const bool need_zp = (active & kMainPattern) || (active & kAdvSubject);
    const bool need_zs = (active & kMainSubject) || (active & kAdvPattern);

    if (need_zp)
        out.z_p = net::branch_embedding(g, m.pattern, m.arch, out.features, mode, rng);
    if (need_zs)
        out.z_s = net::branch_embedding(g, *m.subject, m.arch, out.features, mode, rng);

    if (active & kMainPattern) {
        out.logits_p = ad::linear(g, out.z_p, m.pattern.classifier.w, m.pattern.classifier.b);
        out.y_p = net::detached_softmax(out.logits_p);
    }
    if (active & kMainSubject) {
        auto& head = m.subject->classifier;
        out.logits_s = ad::linear(g, out.z_s, head.w, head.b);
        out.y_s = net::detached_softmax(out.logits_s);
    }
    if (active & kAdvSubject) {
        auto& head = m.subject_head();
        auto rev = ad::gradient_reversal(g, out.z_p, lambda_s);
        out.logits_adv_s = ad::linear(g, rev, head.w, head.b);
        out.y_adv_s = net::detached_softmax(out.logits_adv_s);
    }
    if (active & kAdvPattern) {
        auto rev = ad::gradient_reversal(g, out.z_s, lambda_p);
        out.logits_adv_p = ad::linear(g, rev, m.pattern.classifier.w, m.pattern.classifier.b);
        out.y_adv_p = net::detached_softmax(out.logits_adv_p);
    }
    return out;
}

enum class FeatureSpace { Original, Pattern, Subject };

inline FeatureSpace feature_space_from_string(const std::string& s) {
    if (s == "original") return FeatureSpace::Original;
    if (s == "pattern") return FeatureSpace::Pattern;
    if (s == "subject") return FeatureSpace::Subject;
    throw ValidationError("unknown feature space '" + s + "' (expected original|pattern|subject)");
}

// Deterministic embeddings for analysis: eval mode, no dropout, no tape.
// Original is the shared extractor output flattened per window; pattern and
// subject are the respective branch embeddings.
template <typename T>
std::vector<T> export_features(DualBranchNet<T>& m, const ad::TensorPtr<T>& x, FeatureSpace space,
                               int* out_dim = nullptr) {
    ad::detail::as_nlc(x->shape, "export_features");
    if (space == FeatureSpace::Subject && !m.has_subject_branch())
        throw ValidationError("variant '" + to_string(m.variant) + "' has no subject embedding");
    ad::Graph<T> g;
    g.set_recording(false);
    auto feats = net::conv_block_forward(g, m.extractor, x, ad::Mode::Eval);
    if (space == FeatureSpace::Original) {
        if (out_dim) *out_dim = m.arch.ext_out_len() * m.arch.ext_channels;
        return feats->v;
    }
    auto& branch = space == FeatureSpace::Pattern ? m.pattern : *m.subject;
    auto z = net::branch_embedding(g, branch, m.arch, feats, ad::Mode::Eval, nullptr);
    if (out_dim) *out_dim = m.arch.bottleneck_dim;
    return z->v;
}

}  // namespace emgdis
