#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "mul/adam.hpp"
#include "mul/checkpoint.hpp"
#include "mul/network.hpp"
#include "mul/trainer.hpp"

using namespace mul;

namespace {

ModelConfig tiny_feature_config(int heads = 1) {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kFeatures;
    cfg.input_dim = 5;
    cfg.num_layers = 2;
    cfg.embed_dim = 16;
    cfg.ffn_dim = 24;
    cfg.num_heads = 2;
    cfg.proj_dim = 8;
    cfg.pos_conv_kernel = 5;
    cfg.pos_conv_groups = 2;
    cfg.codebook_sizes = heads == 1 ? std::vector<int>{8} : std::vector<int>{8, 5};
    return cfg;
}

FeatureSequence random_features(int rows, int dim, uint64_t seed) {
    Rng rng(seed);
    FeatureSequence f;
    f.rows = rows;
    f.dim = dim;
    f.utterance_id = "t" + std::to_string(seed);
    f.data.resize(static_cast<size_t>(rows) * dim);
    for (auto& v : f.data) v = static_cast<float>(rng.gaussian());
    return f;
}

std::vector<std::vector<int>> random_targets(const ModelConfig& cfg, int rows, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> targets;
    for (int c : cfg.codebook_sizes) {
        std::vector<int> t(rows);
        for (int& z : t) z = static_cast<int>(rng.uniform_int(c));
        targets.push_back(std::move(t));
    }
    return targets;
}

double loss_value(MaskedPredictionModel& model, const FeatureSequence& f,
                  const std::vector<std::vector<int>>& targets, const MaskSpec& mask,
                  double alpha) {
    ad::Graph g(false);
    ForwardResult fwd = model.forward(g, f, &mask, false, nullptr);
    return model.loss(g, fwd.output, targets, mask, alpha).stats.total;
}

// central finite differences against the analytic gradient; error measured
// against the gradient scale with a unit floor so finite-difference
// truncation on near-zero components does not mask real defects elsewhere
void gradcheck(MaskedPredictionModel& model,
               const std::function<double()>& loss_fn,
               const std::function<void()>& backward_fn, double h = 1e-3,
               double rel_tol = 1e-4) {
    model.zero_grads();
    backward_fn();
    int checked = 0, failed = 0;
    for (auto& p : model.parameters()) {
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            const double up = loss_fn();
            p.value.data[i] = orig - h;
            const double down = loss_fn();
            p.value.data[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double analytic = p.grad.data[i];
            const double err = std::abs(fd - analytic);
            if (err > rel_tol * std::max({1.0, std::abs(fd), std::abs(analytic)})) {
                ++failed;
                if (failed <= 5)
                    MESSAGE("gradient mismatch at " << p.name << "[" << i << "]: analytic "
                                                    << analytic << " fd " << fd);
            }
            ++checked;
        }
    }
    CHECK(failed == 0);
    CHECK(checked > 0);
}

}  // namespace

TEST_CASE("conv geometry: standard strides and kernels give 49 frames for 16000 samples") {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kWaveform;

    // length-formula oracle applied layer by layer
    auto oracle_frames = [&](int64_t n) {
        for (const auto& l : cfg.conv) n = (n - l.kernel) / l.stride + 1;
        return n;
    };
    CHECK(cfg.conv_output_frames(16000) == 49);
    CHECK(oracle_frames(16000) == 49);
    for (int64_t n : {3200, 8000, 16000, 16320, 31999, 48000})
        CHECK(cfg.conv_output_frames(n) == oracle_frames(n));

    SUBCASE("output channel dimension and actual forward shape") {
        cfg.conv = {{6, 4, 2}, {4, 3, 2}};
        cfg.embed_dim = 8;
        cfg.num_heads = 2;
        cfg.ffn_dim = 16;
        cfg.proj_dim = 4;
        cfg.pos_conv_kernel = 3;
        cfg.pos_conv_groups = 1;
        cfg.num_layers = 1;
        cfg.codebook_sizes = {3};
        MaskedPredictionModel model(cfg, 1);
        std::vector<float> wave(41, 0.01f);
        ad::Graph g(false);
        ad::Var frames = model.conv_encode(g, wave);
        CHECK(frames->val.dim(0) == cfg.conv_output_frames(41));
        CHECK(frames->val.dim(1) == 4);
    }
    SUBCASE("doubling the input length doubles the output within one frame") {
        for (int64_t n : {16000, 24000}) {
            const int one = cfg.conv_output_frames(n);
            const int two = cfg.conv_output_frames(2 * n);
            CHECK(std::abs(two - 2 * one) <= 1);
        }
    }
    SUBCASE("too-short input errors") {
        CHECK_THROWS(cfg.conv_output_frames(5));
    }
}

TEST_CASE("forward: determinism, zero-layer identity, non-finite detection") {
    SUBCASE("eval mode is bit-identical across calls") {
        MaskedPredictionModel model(tiny_feature_config(), 3);
        const FeatureSequence f = random_features(12, 5, 17);
        ad::Graph g1(false), g2(false);
        const ForwardResult a = model.forward(g1, f, nullptr);
        const ForwardResult b = model.forward(g2, f, nullptr);
        CHECK(a.output->val.data == b.output->val.data);
        for (size_t l = 0; l < a.hidden.size(); ++l)
            CHECK(a.hidden[l]->val.data == b.hidden[l]->val.data);
    }
    SUBCASE("zero-layer model: hidden state is the projected input") {
        ModelConfig cfg = tiny_feature_config();
        cfg.num_layers = 0;
        MaskedPredictionModel model(cfg, 5);
        const FeatureSequence f = random_features(6, 5, 23);
        ad::Graph g(false);
        const ForwardResult fwd = model.forward(g, f, nullptr);
        REQUIRE(fwd.hidden.size() == 1);

        // straight-line projection + positional conv oracle
        const Tensor& w = model.param("input_proj.weight").value;
        const Tensor& b = model.param("input_proj.bias").value;
        const Tensor& pw = model.param("pos_conv.weight").value;
        const Tensor& pb = model.param("pos_conv.bias").value;
        const int e = cfg.embed_dim, gs = e / cfg.pos_conv_groups, k = cfg.pos_conv_kernel;
        std::vector<std::vector<double>> proj(f.rows, std::vector<double>(e));
        for (int t = 0; t < f.rows; ++t)
            for (int j = 0; j < e; ++j) {
                double acc = b.data[j];
                for (int i = 0; i < f.dim; ++i) acc += double(f.row(t)[i]) * w.at(i, j);
                proj[t][j] = acc;
            }
        const int pad = (k - 1) / 2;
        for (int t = 0; t < f.rows; ++t) {
            for (int o = 0; o < e; ++o) {
                double acc = pb.data[o];
                const int g0 = (o / gs) * gs;
                for (int j = 0; j < gs; ++j)
                    for (int kk = 0; kk < k; ++kk) {
                        const int src = t + kk - pad;
                        if (src < 0 || src >= f.rows) continue;
                        acc += proj[src][g0 + j] *
                               pw.data[(static_cast<size_t>(o) * gs + j) * k + kk];
                    }
                const double pos = 0.5 * acc * (1.0 + std::erf(acc * M_SQRT1_2));
                const double expect = proj[t][o] + pos;
                CHECK(fwd.hidden[0]->val.at(t, o) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
    SUBCASE("non-finite input is reported with a layer name") {
        MaskedPredictionModel model(tiny_feature_config(), 3);
        FeatureSequence f = random_features(4, 5, 31);
        f.data[7] = std::numeric_limits<float>::infinity();
        ad::Graph g(false);
        CHECK_THROWS_WITH_AS(model.forward(g, f, nullptr), doctest::Contains("layer"),
                             std::runtime_error);
    }
}

TEST_CASE("codeword logits follow the scaled cosine rule") {
    ModelConfig cfg = tiny_feature_config();
    MaskedPredictionModel model(cfg, 11);
    Tensor& proj = model.param("heads.0.proj").value;
    Tensor& codewords = model.param("heads.0.codewords").value;

    // A maps o to its first proj_dim coordinates
    std::fill(proj.data.begin(), proj.data.end(), 0.0);
    for (int j = 0; j < cfg.proj_dim; ++j) proj.at(j, j) = 1.0;

    SUBCASE("parallel projected vector gives logit 1/tau = 10") {
        std::vector<double> o(cfg.embed_dim, 0.0);
        for (int j = 0; j < cfg.proj_dim; ++j) o[j] = 2.0 * codewords.at(0, j);
        const std::vector<double> logits = model.head_logits(0, o);
        CHECK(logits[0] == doctest::Approx(10.0).epsilon(1e-6));
    }
    SUBCASE("orthogonal projected vector gives logit 0") {
        std::fill(codewords.row(1), codewords.row(1) + cfg.proj_dim, 0.0);
        codewords.at(1, 0) = 1.0;
        std::vector<double> o(cfg.embed_dim, 0.0);
        o[1] = 3.0;  // projects onto coordinate 1, orthogonal to codeword 1
        const std::vector<double> logits = model.head_logits(0, o);
        CHECK(logits[1] == 0.0);
    }
    SUBCASE("random vectors match a direct cosine computation") {
        Rng rng(77);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> o(cfg.embed_dim);
            for (auto& v : o) v = rng.gaussian();
            const std::vector<double> logits = model.head_logits(0, o);
            for (int c = 0; c < cfg.codebook_sizes[0]; ++c) {
                std::vector<double> u(cfg.proj_dim, 0.0);
                for (int i = 0; i < cfg.embed_dim; ++i)
                    for (int j = 0; j < cfg.proj_dim; ++j) u[j] += o[i] * proj.at(i, j);
                double dot = 0, un = 0, en = 0;
                for (int j = 0; j < cfg.proj_dim; ++j) {
                    dot += u[j] * codewords.at(c, j);
                    un += u[j] * u[j];
                    en += codewords.at(c, j) * codewords.at(c, j);
                }
                const double want = dot / (std::sqrt(un) * std::sqrt(en)) / cfg.tau;
                CHECK(logits[c] == doctest::Approx(want).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("loss identities") {
    ModelConfig cfg = tiny_feature_config();
    MaskedPredictionModel model(cfg, 19);
    const int rows = 10;
    const FeatureSequence f = random_features(rows, 5, 41);
    auto targets = random_targets(cfg, rows, 43);
    MaskSpec mask;
    mask.T = rows;
    mask.masked = {1, 2, 3, 7};

    SUBCASE("uniform logits give |M| * ln C exactly") {
        // identical codewords make every cosine equal, hence a uniform softmax
        Tensor& codewords = model.param("heads.0.codewords").value;
        for (int c = 1; c < cfg.codebook_sizes[0]; ++c)
            std::copy(codewords.row(0), codewords.row(0) + cfg.proj_dim, codewords.row(c));
        const double value = loss_value(model, f, targets, mask, 1.0);
        const double expect = mask.masked.size() * std::log(double(cfg.codebook_sizes[0]));
        CHECK(std::abs(value - expect) < 1e-9);
    }
    SUBCASE("alpha=1: editing unmasked targets leaves the loss bit-identical") {
        const double base = loss_value(model, f, targets, mask, 1.0);
        auto edited = targets;
        for (int t = 0; t < rows; ++t)
            if (!mask.is_masked(t)) edited[0][t] = (edited[0][t] + 1) % cfg.codebook_sizes[0];
        CHECK(loss_value(model, f, edited, mask, 1.0) == base);
    }
    SUBCASE("alpha=0: editing masked targets leaves the loss bit-identical") {
        const double base = loss_value(model, f, targets, mask, 0.0);
        auto edited = targets;
        for (int t : mask.masked) edited[0][t] = (edited[0][t] + 1) % cfg.codebook_sizes[0];
        CHECK(loss_value(model, f, edited, mask, 0.0) == base);
    }
    SUBCASE("out-of-range label is rejected") {
        auto bad = targets;
        bad[0][0] = cfg.codebook_sizes[0];
        ad::Graph g;
        ForwardResult fwd = model.forward(g, f, &mask);
        CHECK_THROWS_WITH_AS(model.loss(g, fwd.output, bad, mask, 1.0),
                             doctest::Contains("out of range"), std::runtime_error);
    }
    SUBCASE("softmax rows from the logits sum to one") {
        ad::Graph g;
        ForwardResult fwd = model.forward(g, f, &mask);
        ad::Var logits = model.sequence_logits(g, fwd.output, 0);
        ad::Var probs = g.softmax_rows(logits);
        for (int t = 0; t < rows; ++t) {
            double total = 0;
            for (int c = 0; c < cfg.codebook_sizes[0]; ++c) {
                const double p = probs->val.at(t, c);
                CHECK(p > 0.0);
                CHECK(p < 1.0);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("two-frame two-class straight-line loss oracle") {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kFeatures;
    cfg.input_dim = 3;
    cfg.num_layers = 0;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.ffn_dim = 4;
    cfg.proj_dim = 3;
    cfg.pos_conv_kernel = 3;
    cfg.pos_conv_groups = 1;
    cfg.codebook_sizes = {2};
    MaskedPredictionModel model(cfg, 7);

    const FeatureSequence f = random_features(2, 3, 3);
    MaskSpec mask;
    mask.T = 2;
    mask.masked = {1};
    const std::vector<std::vector<int>> targets = {{1, 0}};
    const double alpha = 0.7;

    ad::Graph g;
    ForwardResult fwd = model.forward(g, f, &mask);
    LossResult res = model.loss(g, fwd.output, targets, mask, alpha);

    // oracle: replay the whole computation with straight-line arithmetic
    auto& m = model;
    const Tensor& xt = m.param("mask_embedding").value;
    const Tensor& w = m.param("input_proj.weight").value;
    const Tensor& b = m.param("input_proj.bias").value;
    const Tensor& pw = m.param("pos_conv.weight").value;
    const Tensor& pb = m.param("pos_conv.bias").value;
    const Tensor& lg = m.param("final_ln.gamma").value;
    const Tensor& lb = m.param("final_ln.beta").value;
    const Tensor& a = m.param("heads.0.proj").value;
    const Tensor& e = m.param("heads.0.codewords").value;

    auto gelu = [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); };
    double x[2][3];
    for (int t = 0; t < 2; ++t)
        for (int i = 0; i < 3; ++i) x[t][i] = t == 1 ? xt.data[i] : double(f.row(t)[i]);
    double proj[2][4];
    for (int t = 0; t < 2; ++t)
        for (int j = 0; j < 4; ++j) {
            proj[t][j] = b.data[j];
            for (int i = 0; i < 3; ++i) proj[t][j] += x[t][i] * w.at(i, j);
        }
    double h0[2][4];
    for (int t = 0; t < 2; ++t)
        for (int o = 0; o < 4; ++o) {
            double acc = pb.data[o];
            for (int j = 0; j < 4; ++j)
                for (int kk = 0; kk < 3; ++kk) {
                    const int src = t + kk - 1;
                    if (src < 0 || src >= 2) continue;
                    acc += proj[src][j] * pw.data[(static_cast<size_t>(o) * 4 + j) * 3 + kk];
                }
            h0[t][o] = proj[t][o] + gelu(acc);
        }
    double out[2][4];
    for (int t = 0; t < 2; ++t) {
        double mean = 0;
        for (int o = 0; o < 4; ++o) mean += h0[t][o];
        mean /= 4;
        double var = 0;
        for (int o = 0; o < 4; ++o) var += (h0[t][o] - mean) * (h0[t][o] - mean);
        var /= 4;
        for (int o = 0; o < 4; ++o)
            out[t][o] = (h0[t][o] - mean) / std::sqrt(var + 1e-5) * lg.data[o] + lb.data[o];
    }
    double expect = 0;
    for (int t = 0; t < 2; ++t) {
        double u[3] = {0, 0, 0};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) u[j] += out[t][i] * a.at(i, j);
        double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        double logits[2];
        for (int c = 0; c < 2; ++c) {
            double dot = 0, en = 0;
            for (int j = 0; j < 3; ++j) {
                dot += u[j] * e.at(c, j);
                en += e.at(c, j) * e.at(c, j);
            }
            en = std::sqrt(en);
            logits[c] = dot / ((un + 1e-8) * (en + 1e-8)) / cfg.tau;
        }
        const double lse = std::log(std::exp(logits[0]) + std::exp(logits[1]));
        const double nll = lse - logits[targets[0][t]];
        expect += (t == 1 ? alpha : 1.0 - alpha) * nll;
    }
    CHECK(res.stats.total == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("single-head transformer block matches a straight-line evaluation") {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kFeatures;
    cfg.input_dim = 3;
    cfg.num_layers = 1;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.ffn_dim = 6;
    cfg.proj_dim = 3;
    cfg.pos_conv_kernel = 3;
    cfg.pos_conv_groups = 1;
    cfg.codebook_sizes = {2};
    MaskedPredictionModel model(cfg, 71);

    const FeatureSequence f = random_features(2, 3, 5);
    ad::Graph g(false);
    const ForwardResult fwd = model.forward(g, f, nullptr);
    REQUIRE(fwd.hidden.size() == 2);

    auto& m = model;
    const int e = 4, dh = 4, ff = 6;
    auto gelu = [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); };
    auto layer_norm = [&](const double* x, const Tensor& gamma, const Tensor& beta, double* y) {
        double mean = 0;
        for (int i = 0; i < e; ++i) mean += x[i];
        mean /= e;
        double var = 0;
        for (int i = 0; i < e; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= e;
        for (int i = 0; i < e; ++i)
            y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gamma.data[i] + beta.data[i];
    };
    auto affine = [&](const double in[2][4], const Tensor& w, const Tensor& b, int out_dim,
                      double out[2][6]) {
        for (int t = 0; t < 2; ++t)
            for (int j = 0; j < out_dim; ++j) {
                out[t][j] = b.data[j];
                for (int i = 0; i < e; ++i) out[t][j] += in[t][i] * w.at(i, j);
            }
    };

    // transformer input is the model's layer 0
    double x[2][4];
    for (int t = 0; t < 2; ++t)
        for (int i = 0; i < e; ++i) x[t][i] = fwd.hidden[0]->val.at(t, i);

    double norm1[2][4];
    layer_norm(x[0], m.param("blocks.0.ln1.gamma").value, m.param("blocks.0.ln1.beta").value,
               norm1[0]);
    layer_norm(x[1], m.param("blocks.0.ln1.gamma").value, m.param("blocks.0.ln1.beta").value,
               norm1[1]);
    double q[2][6], k[2][6], v[2][6];
    affine(norm1, m.param("blocks.0.attn.wq").value, m.param("blocks.0.attn.bq").value, e, q);
    affine(norm1, m.param("blocks.0.attn.wk").value, m.param("blocks.0.attn.bk").value, e, k);
    affine(norm1, m.param("blocks.0.attn.wv").value, m.param("blocks.0.attn.bv").value, e, v);
    double ctx[2][4];
    for (int t = 0; t < 2; ++t) {
        double scores[2];
        for (int s = 0; s < 2; ++s) {
            scores[s] = 0;
            for (int i = 0; i < dh; ++i) scores[s] += q[t][i] * k[s][i];
            scores[s] /= std::sqrt(double(dh));
        }
        const double mx = std::max(scores[0], scores[1]);
        const double w0 = std::exp(scores[0] - mx), w1 = std::exp(scores[1] - mx);
        for (int i = 0; i < dh; ++i) ctx[t][i] = (w0 * v[0][i] + w1 * v[1][i]) / (w0 + w1);
    }
    double attn_out[2][6];
    affine(ctx, m.param("blocks.0.attn.wo").value, m.param("blocks.0.attn.bo").value, e, attn_out);
    double mid[2][4];
    for (int t = 0; t < 2; ++t)
        for (int i = 0; i < e; ++i) mid[t][i] = x[t][i] + attn_out[t][i];

    double norm2[2][4];
    layer_norm(mid[0], m.param("blocks.0.ln2.gamma").value, m.param("blocks.0.ln2.beta").value,
               norm2[0]);
    layer_norm(mid[1], m.param("blocks.0.ln2.gamma").value, m.param("blocks.0.ln2.beta").value,
               norm2[1]);
    const Tensor& w1t = m.param("blocks.0.ffn.w1").value;
    const Tensor& b1t = m.param("blocks.0.ffn.b1").value;
    const Tensor& w2t = m.param("blocks.0.ffn.w2").value;
    const Tensor& b2t = m.param("blocks.0.ffn.b2").value;
    for (int t = 0; t < 2; ++t) {
        double hidden_ff[6];
        for (int j = 0; j < ff; ++j) {
            hidden_ff[j] = b1t.data[j];
            for (int i = 0; i < e; ++i) hidden_ff[j] += norm2[t][i] * w1t.at(i, j);
            hidden_ff[j] = gelu(hidden_ff[j]);
        }
        for (int i = 0; i < e; ++i) {
            double out = b2t.data[i];
            for (int j = 0; j < ff; ++j) out += hidden_ff[j] * w2t.at(j, i);
            const double expect = mid[t][i] + out;
            CHECK(fwd.hidden[1]->val.at(t, i) == doctest::Approx(expect).epsilon(1e-10));
        }
    }
}

TEST_CASE("gradients match central finite differences (feature mode)") {
    ModelConfig cfg = tiny_feature_config(2);  // two heads
    MaskedPredictionModel model(cfg, 29);
    const int rows = 7;
    const FeatureSequence f = random_features(rows, 5, 53);
    const auto targets = random_targets(cfg, rows, 59);
    MaskSpec mask;
    mask.T = rows;
    mask.masked = {0, 2, 3};
    const double alpha = 0.6;

    auto loss_fn = [&]() { return loss_value(model, f, targets, mask, alpha); };
    auto backward_fn = [&]() {
        ad::Graph g;
        ForwardResult fwd = model.forward(g, f, &mask);
        LossResult res = model.loss(g, fwd.output, targets, mask, alpha);
        g.backward(res.loss);
    };
    gradcheck(model, loss_fn, backward_fn);
}

TEST_CASE("gradients match central finite differences (waveform mode)") {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kWaveform;
    cfg.conv = {{4, 4, 2}, {4, 3, 2}};
    cfg.num_layers = 1;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 12;
    cfg.proj_dim = 4;
    cfg.pos_conv_kernel = 3;
    cfg.pos_conv_groups = 2;
    cfg.codebook_sizes = {4};
    MaskedPredictionModel model(cfg, 31);

    std::vector<float> wave(42);
    Rng rng(61);
    for (auto& v : wave) v = static_cast<float>(0.5 * rng.gaussian());
    const int frames = cfg.conv_output_frames(static_cast<int64_t>(wave.size()));
    MaskSpec mask;
    mask.T = frames;
    mask.masked = {1, 4};
    std::vector<std::vector<int>> targets = {std::vector<int>(frames)};
    for (int t = 0; t < frames; ++t) targets[0][t] = t % 4;

    auto loss_fn = [&]() {
        ad::Graph g(false);
        ForwardResult fwd = model.forward_waveform(g, wave, &mask);
        return model.loss(g, fwd.output, targets, mask, 0.5).stats.total;
    };
    auto backward_fn = [&]() {
        ad::Graph g;
        ForwardResult fwd = model.forward_waveform(g, wave, &mask);
        LossResult res = model.loss(g, fwd.output, targets, mask, 0.5);
        g.backward(res.loss);
    };
    // the conv stack has enough curvature that h=1e-3 leaves visible
    // truncation error; h=1e-4 isolates the gradient itself
    gradcheck(model, loss_fn, backward_fn, 1e-5);
}

TEST_CASE("gradient connectivity") {
    ModelConfig cfg = tiny_feature_config();
    MaskedPredictionModel model(cfg, 37);
    const int rows = 6;
    const FeatureSequence f = random_features(rows, 5, 67);
    const auto targets = random_targets(cfg, rows, 71);

    SUBCASE("mask embedding gets gradient when frames are masked") {
        MaskSpec mask;
        mask.T = rows;
        mask.masked = {2};
        model.zero_grads();
        ad::Graph g;
        ForwardResult fwd = model.forward(g, f, &mask);
        LossResult res = model.loss(g, fwd.output, targets, mask, 1.0);
        g.backward(res.loss);
        double norm = 0;
        for (double v : model.param("mask_embedding").grad.data) norm += v * v;
        CHECK(norm > 0.0);
    }
    SUBCASE("alpha=1 with an empty mask yields zero loss and zero gradients") {
        MaskSpec mask;
        mask.T = rows;
        model.zero_grads();
        ad::Graph g;
        ForwardResult fwd = model.forward(g, f, &mask);
        LossResult res = model.loss(g, fwd.output, targets, mask, 1.0);
        CHECK(res.stats.total == 0.0);
        g.backward(res.loss);
        for (const auto& p : model.parameters())
            for (double v : p.grad.data) CHECK(v == 0.0);
    }
}

TEST_CASE("freshly initialized loss sits near ln C per frame per head") {
    for (int c : {8, 100, 500}) {
        ModelConfig cfg = tiny_feature_config();
        cfg.codebook_sizes = {c};
        MaskedPredictionModel model(cfg, 101 + c);
        const int rows = 50;
        const FeatureSequence f = random_features(rows, 5, 73);
        std::vector<std::vector<int>> targets = random_targets(cfg, rows, 79);
        MaskSpec mask;
        mask.T = rows;
        for (int t = 0; t < rows; ++t) mask.masked.push_back(t);
        const double value = loss_value(model, f, targets, mask, 1.0) / rows;
        CHECK(value > 0.9 * std::log(double(c)));
        CHECK(value < 1.1 * std::log(double(c)));
    }

    SUBCASE("ensemble: sum of ln C_k per masked frame") {
        ModelConfig cfg = tiny_feature_config();
        cfg.codebook_sizes = {50, 100};
        MaskedPredictionModel model(cfg, 211);
        const int rows = 50;
        const FeatureSequence f = random_features(rows, 5, 73);
        std::vector<std::vector<int>> targets = random_targets(cfg, rows, 83);
        MaskSpec mask;
        mask.T = rows;
        for (int t = 0; t < rows; ++t) mask.masked.push_back(t);
        const double value = loss_value(model, f, targets, mask, 1.0) / rows;
        const double expect = std::log(50.0) + std::log(100.0);
        CHECK(value > 0.9 * expect);
        CHECK(value < 1.1 * expect);
    }
}

TEST_CASE("adam: first step matches the closed form") {
    std::vector<Parameter> params;
    params.emplace_back("theta", Tensor::scalar(3.0));
    Adam adam(params, 0.9, 0.98, 1e-8);
    // quadratic loss 0.5*(theta - 1)^2 at theta=3: gradient 2
    params[0].grad.data[0] = 2.0;
    adam.step(0.1);
    // m = 0.1*2, v = 0.02*4; m_hat = 2, v_hat = 4; update = 0.1 * 2/(2+1e-8)
    const double expect = 3.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    CHECK(params[0].value.data[0] == doctest::Approx(expect).epsilon(1e-12));

    // second step with the same gradient
    params[0].grad.data[0] = 2.0;
    adam.step(0.1);
    const double m2 = 0.9 * 0.2 + 0.1 * 2.0;
    const double v2 = 0.98 * 0.08 + 0.02 * 4.0;
    const double mh = m2 / (1 - 0.9 * 0.9), vh = v2 / (1 - 0.98 * 0.98);
    const double expect2 = expect - 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(params[0].value.data[0] == doctest::Approx(expect2).epsilon(1e-12));
}

TEST_CASE("learning rate schedule: zero at 0, peak at the 8% mark, zero at the end") {
    const double peak = 5e-4;
    const int total = 1000;
    CHECK(schedule_lr(peak, 0, total) == 0.0);
    CHECK(schedule_lr(peak, 80, total) == doctest::Approx(peak).epsilon(1e-12));
    CHECK(schedule_lr(peak, total, total) == 0.0);
    CHECK(schedule_lr(peak, 40, total) == doctest::Approx(peak * 0.5).epsilon(1e-12));
    CHECK(schedule_lr(peak, 540, total) == doctest::Approx(peak * 0.5).epsilon(1e-12));
    // monotone up then down
    for (int s = 1; s <= 80; ++s) CHECK(schedule_lr(peak, s, total) >= schedule_lr(peak, s - 1, total));
    for (int s = 81; s <= total; ++s) CHECK(schedule_lr(peak, s, total) <= schedule_lr(peak, s - 1, total));
}

TEST_CASE("training: determinism and divergence handling") {
    ModelConfig cfg = tiny_feature_config();
    std::vector<TrainUtterance> data;
    for (int u = 0; u < 3; ++u) {
        TrainUtterance t;
        t.id = "u" + std::to_string(u);
        t.features = random_features(30, 5, 200 + u);
        t.targets = random_targets(cfg, 30, 300 + u);
        data.push_back(std::move(t));
    }
    TrainConfig tc;
    tc.total_steps = 5;
    tc.batch_size = 2;
    tc.crop_frames = 20;
    tc.seed = 7;

    SUBCASE("same seed, bit-identical loss curve and parameters") {
        MaskedPredictionModel m1(cfg, 5), m2(cfg, 5);
        const TrainResult r1 = train(m1, data, tc);
        const TrainResult r2 = train(m2, data, tc);
        REQUIRE(r1.curve.size() == r2.curve.size());
        for (size_t i = 0; i < r1.curve.size(); ++i)
            CHECK(r1.curve[i].loss == r2.curve[i].loss);
        for (size_t i = 0; i < m1.parameters().size(); ++i)
            CHECK(m1.parameters()[i].value.data == m2.parameters()[i].value.data);
        CHECK(m1.step == 5);
    }
    SUBCASE("a poisoned parameter aborts with the last good state") {
        MaskedPredictionModel m(cfg, 5);
        m.param("input_proj.weight").value.data[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_WITH_AS(train(m, data, tc), doctest::Contains("diverged"),
                             std::runtime_error);
    }
    SUBCASE("checkpoints are written at the configured interval and at the end") {
        testutil::TempDir tmp("interval");
        MaskedPredictionModel m(cfg, 5);
        TrainConfig with_ckpt = tc;
        with_ckpt.total_steps = 3;
        with_ckpt.checkpoint_interval = 2;
        with_ckpt.checkpoint_path = tmp.path() / "c.muck";
        train(m, data, with_ckpt);
        CHECK(load_checkpoint(with_ckpt.checkpoint_path).step == 3);
    }
}

TEST_CASE("training accepts waveform-mode utterances") {
    ModelConfig cfg;
    cfg.input_mode = InputMode::kWaveform;
    cfg.conv = {{8, 10, 5}, {8, 3, 2}, {8, 3, 2}, {8, 3, 2}, {8, 3, 2}, {8, 2, 2}, {8, 2, 2}};
    cfg.num_layers = 1;
    cfg.embed_dim = 16;
    cfg.ffn_dim = 24;
    cfg.num_heads = 2;
    cfg.proj_dim = 8;
    cfg.pos_conv_kernel = 5;
    cfg.pos_conv_groups = 2;
    cfg.codebook_sizes = {4};

    std::vector<TrainUtterance> data;
    Rng rng(606);
    for (int u = 0; u < 2; ++u) {
        TrainUtterance t;
        t.id = "w" + std::to_string(u);
        t.samples.resize(4000 + 320 * u);
        for (auto& v : t.samples) v = static_cast<float>(0.3 * rng.gaussian());
        const int frames = cfg.conv_output_frames(static_cast<int64_t>(t.samples.size()));
        std::vector<int> z(frames);
        for (int i = 0; i < frames; ++i) z[i] = (i / 3) % 4;
        t.targets = {z};
        data.push_back(std::move(t));
    }
    TrainConfig tc;
    tc.total_steps = 3;
    tc.batch_size = 2;
    tc.crop_frames = 0;
    tc.mask = {0.1, 3};
    tc.seed = 3;
    MaskedPredictionModel m1(cfg, 9), m2(cfg, 9);
    const TrainResult r1 = train(m1, data, tc);
    const TrainResult r2 = train(m2, data, tc);
    REQUIRE(r1.curve.size() == 3);
    for (size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(std::isfinite(r1.curve[i].loss));
        CHECK(r1.curve[i].loss == r2.curve[i].loss);
    }
}

TEST_CASE("training: overfits a tiny batch") {
    ModelConfig cfg = tiny_feature_config();
    cfg.codebook_sizes = {6};
    cfg.input_dim = 8;
    // segment-structured utterances: features sit near orthogonal per-class
    // anchors, with a segment-phase cue so masked boundary frames are
    // recoverable from their unmasked neighbours
    std::vector<TrainUtterance> data;
    Rng rng(404);
    for (int u = 0; u < 4; ++u) {
        TrainUtterance t;
        t.id = "u" + std::to_string(u);
        t.features.rows = 60;
        t.features.dim = 8;
        t.features.utterance_id = t.id;
        std::vector<int> z(60);
        int cur = 0;
        for (int i = 0; i < 60; ++i) {
            if (i % 12 == 0) cur = static_cast<int>(rng.uniform_int(6));
            z[i] = cur;
            for (int d = 0; d < 6; ++d)
                t.features.data.push_back(
                    static_cast<float>((d == cur ? 3.0 : 0.0) + 0.1 * rng.gaussian()));
            t.features.data.push_back(static_cast<float>(2.0 * std::sin(2 * M_PI * i / 12.0)));
            t.features.data.push_back(static_cast<float>(2.0 * std::cos(2 * M_PI * i / 12.0)));
        }
        t.targets = {z};
        data.push_back(std::move(t));
    }
    TrainConfig tc;
    tc.total_steps = 500;
    tc.batch_size = 4;
    tc.crop_frames = 0;
    tc.peak_lr = 3e-3;
    tc.mask = {0.05, 2};
    tc.seed = 17;
    MaskedPredictionModel model(cfg, 23);
    train(model, data, tc);
    double acc = 0.0;
    for (int draw = 0; draw < 10; ++draw)
        acc += masked_prediction_accuracy(model, data, MaskConfig{0.05, 2}, 999 + draw)[0];
    acc /= 10.0;
    CHECK(acc > 0.95);
}

TEST_CASE("checkpoint round trip and extraction") {
    ModelConfig cfg = tiny_feature_config(2);
    MaskedPredictionModel model(cfg, 43);
    model.step = 123;
    testutil::TempDir tmp("ckpt");

    save_checkpoint(tmp.path() / "m.muck", model);
    MaskedPredictionModel loaded = load_checkpoint(tmp.path() / "m.muck");
    CHECK(loaded.step == 123);
    CHECK(loaded.config().embed_dim == cfg.embed_dim);
    CHECK(loaded.config().codebook_sizes == cfg.codebook_sizes);

    const FeatureSequence f = random_features(9, 5, 83);
    SUBCASE("same checkpoint loaded twice extracts bit-identical features") {
        MaskedPredictionModel again = load_checkpoint(tmp.path() / "m.muck");
        for (int layer = 0; layer <= cfg.num_layers; ++layer) {
            const FeatureSequence a = extract_features(loaded, f, layer);
            const FeatureSequence b = extract_features(again, f, layer);
            CHECK(a.data == b.data);
            CHECK(a.kind == FeatureKind::kEncoderLayer);
            CHECK(a.frame_rate_hz == 50);
            CHECK(a.rows == f.rows);
        }
    }
    SUBCASE("float32 storage round trips exactly") {
        save_checkpoint(tmp.path() / "m2.muck", loaded);
        MaskedPredictionModel second = load_checkpoint(tmp.path() / "m2.muck");
        for (size_t i = 0; i < loaded.parameters().size(); ++i)
            CHECK(loaded.parameters()[i].value.data == second.parameters()[i].value.data);
    }
    SUBCASE("layer out of range") {
        CHECK_THROWS(extract_features(loaded, f, cfg.num_layers + 1));
        CHECK_THROWS(extract_features(loaded, f, -1));
    }
    SUBCASE("extraction ignores masks: corrupted input changes features") {
        // the extraction path applies no mask, so extracting from a
        // pre-corrupted copy differs from extracting from the original
        FeatureSequence corrupted = f;
        for (int j = 0; j < f.dim; ++j) corrupted.row(2)[j] = 9.0f;
        const FeatureSequence a = extract_features(loaded, f, 1);
        const FeatureSequence b = extract_features(loaded, corrupted, 1);
        CHECK(a.data != b.data);
    }
}

TEST_CASE("layerdrop skips blocks only in training mode") {
    ModelConfig cfg = tiny_feature_config();
    cfg.layerdrop_prob = 0.99;
    MaskedPredictionModel model(cfg, 47);
    const FeatureSequence f = random_features(5, 5, 89);

    ad::Graph g(false);
    Rng drop(1);
    const ForwardResult trained = model.forward(g, f, nullptr, true, &drop);
    // with prob 0.99 both blocks are almost surely skipped: hidden states equal
    CHECK(trained.hidden[1]->val.data == trained.hidden[0]->val.data);

    ad::Graph g2(false);
    const ForwardResult eval = model.forward(g2, f, nullptr, false, nullptr);
    CHECK(eval.hidden[1]->val.data != eval.hidden[0]->val.data);
}
