#include "mul/network.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace mul {

void ModelConfig::validate() const {
    if (tau <= 0.0) throw std::runtime_error("tau must be positive");
    if (embed_dim < 1 || ffn_dim < 1 || proj_dim < 1 || num_heads < 1)
        throw std::runtime_error("model dimensions must be >= 1");
    if (num_layers < 0) throw std::runtime_error("num_layers must be >= 0");
    if (embed_dim % num_heads != 0)
        throw std::runtime_error("embed_dim must be divisible by num_heads");
    if (embed_dim % pos_conv_groups != 0)
        throw std::runtime_error("embed_dim must be divisible by pos_conv_groups");
    if (pos_conv_kernel % 2 == 0) throw std::runtime_error("pos_conv_kernel must be odd");
    if (codebook_sizes.empty()) throw std::runtime_error("at least one codebook required");
    for (int c : codebook_sizes)
        if (c < 1) throw std::runtime_error("codebook sizes must be >= 1");
    if (input_mode == InputMode::kWaveform && conv.empty())
        throw std::runtime_error("waveform mode requires conv layers");
    if (input_mode == InputMode::kFeatures && input_dim < 1)
        throw std::runtime_error("input_dim must be >= 1");
    if (layerdrop_prob < 0.0 || layerdrop_prob >= 1.0)
        throw std::runtime_error("layerdrop_prob must be in [0, 1)");
}

int ModelConfig::conv_output_frames(int64_t n) const {
    int64_t len = n;
    for (const auto& layer : conv) {
        if (len < layer.kernel)
            throw std::runtime_error("input too short for conv encoder (need >= " +
                                     std::to_string(layer.kernel) + " at some layer, have " +
                                     std::to_string(len) + ")");
        len = (len - layer.kernel) / layer.stride + 1;
    }
    return static_cast<int>(len);
}

int ModelConfig::pre_projection_dim() const {
    return input_mode == InputMode::kWaveform ? conv.back().channels : input_dim;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json::object();
    j["input_mode"] = cfg.input_mode == InputMode::kWaveform ? "waveform" : "features";
    j["input_dim"] = cfg.input_dim;
    j["conv"] = nlohmann::json::array();
    for (const auto& l : cfg.conv) j["conv"].push_back({l.channels, l.kernel, l.stride});
    j["num_layers"] = cfg.num_layers;
    j["embed_dim"] = cfg.embed_dim;
    j["ffn_dim"] = cfg.ffn_dim;
    j["num_heads"] = cfg.num_heads;
    j["proj_dim"] = cfg.proj_dim;
    j["pos_conv_kernel"] = cfg.pos_conv_kernel;
    j["pos_conv_groups"] = cfg.pos_conv_groups;
    j["layerdrop_prob"] = cfg.layerdrop_prob;
    j["tau"] = cfg.tau;
    j["codebook_sizes"] = cfg.codebook_sizes;
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    cfg = ModelConfig{};
    if (j.contains("input_mode"))
        cfg.input_mode = j.at("input_mode").get<std::string>() == "waveform"
                             ? InputMode::kWaveform
                             : InputMode::kFeatures;
    if (j.contains("input_dim")) cfg.input_dim = j.at("input_dim").get<int>();
    if (j.contains("conv")) {
        cfg.conv.clear();
        for (const auto& l : j.at("conv"))
            cfg.conv.push_back({l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>()});
    }
    if (j.contains("num_layers")) cfg.num_layers = j.at("num_layers").get<int>();
    if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<int>();
    if (j.contains("ffn_dim")) cfg.ffn_dim = j.at("ffn_dim").get<int>();
    if (j.contains("num_heads")) cfg.num_heads = j.at("num_heads").get<int>();
    if (j.contains("proj_dim")) cfg.proj_dim = j.at("proj_dim").get<int>();
    if (j.contains("pos_conv_kernel")) cfg.pos_conv_kernel = j.at("pos_conv_kernel").get<int>();
    if (j.contains("pos_conv_groups")) cfg.pos_conv_groups = j.at("pos_conv_groups").get<int>();
    if (j.contains("layerdrop_prob")) cfg.layerdrop_prob = j.at("layerdrop_prob").get<double>();
    if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
    if (j.contains("codebook_sizes"))
        cfg.codebook_sizes = j.at("codebook_sizes").get<std::vector<int>>();
}

MaskedPredictionModel::MaskedPredictionModel(ModelConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params(seed);
}

Parameter& MaskedPredictionModel::add_param(const std::string& name, Tensor t) {
    params_.emplace_back(name, std::move(t));
    return params_.back();
}

Parameter& MaskedPredictionModel::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw std::runtime_error("no such parameter: " + name);
}

void MaskedPredictionModel::zero_grads() {
    for (auto& p : params_) p.zero_grad();
}

void MaskedPredictionModel::check_finite_parameters() const {
    for (const auto& p : params_) {
        for (double v : p.value.data)
            if (!std::isfinite(v))
                throw NonFiniteError("non-finite parameter: " + p.name);
    }
}

void MaskedPredictionModel::init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, "model-init"));
    auto randn = [&](std::vector<int> shape, double std) {
        Tensor t(std::move(shape));
        for (double& v : t.data) v = std * rng.gaussian();
        return t;
    };
    auto linear_init = [&](int fan_in, std::vector<int> shape) {
        return randn(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
    };

    const int e = cfg_.embed_dim;
    if (cfg_.input_mode == InputMode::kWaveform) {
        int cin = 1;
        for (size_t i = 0; i < cfg_.conv.size(); ++i) {
            const auto& l = cfg_.conv[i];
            add_param("conv." + std::to_string(i) + ".weight",
                      linear_init(cin * l.kernel, {l.channels, cin, l.kernel}));
            add_param("conv." + std::to_string(i) + ".bias", Tensor::zeros({l.channels}));
            cin = l.channels;
        }
    }
    // trained mask embedding, N(0, 0.1^2)
    add_param("mask_embedding", randn({cfg_.pre_projection_dim()}, 0.1));
    add_param("input_proj.weight", linear_init(cfg_.pre_projection_dim(),
                                               {cfg_.pre_projection_dim(), e}));
    add_param("input_proj.bias", Tensor::zeros({e}));
    const int gs = e / cfg_.pos_conv_groups;
    add_param("pos_conv.weight", linear_init(gs * cfg_.pos_conv_kernel,
                                             {e, gs, cfg_.pos_conv_kernel}));
    add_param("pos_conv.bias", Tensor::zeros({e}));
    for (int l = 0; l < cfg_.num_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        auto ones = [&](int n) {
            Tensor t({n});
            std::fill(t.data.begin(), t.data.end(), 1.0);
            return t;
        };
        add_param(b + "ln1.gamma", ones(e));
        add_param(b + "ln1.beta", Tensor::zeros({e}));
        add_param(b + "attn.wq", linear_init(e, {e, e}));
        add_param(b + "attn.bq", Tensor::zeros({e}));
        add_param(b + "attn.wk", linear_init(e, {e, e}));
        add_param(b + "attn.bk", Tensor::zeros({e}));
        add_param(b + "attn.wv", linear_init(e, {e, e}));
        add_param(b + "attn.bv", Tensor::zeros({e}));
        add_param(b + "attn.wo", linear_init(e, {e, e}));
        add_param(b + "attn.bo", Tensor::zeros({e}));
        add_param(b + "ln2.gamma", ones(e));
        add_param(b + "ln2.beta", Tensor::zeros({e}));
        add_param(b + "ffn.w1", linear_init(e, {e, cfg_.ffn_dim}));
        add_param(b + "ffn.b1", Tensor::zeros({cfg_.ffn_dim}));
        add_param(b + "ffn.w2", linear_init(cfg_.ffn_dim, {cfg_.ffn_dim, e}));
        add_param(b + "ffn.b2", Tensor::zeros({e}));
    }
    {
        Tensor g({e});
        std::fill(g.data.begin(), g.data.end(), 1.0);
        add_param("final_ln.gamma", std::move(g));
        add_param("final_ln.beta", Tensor::zeros({e}));
    }
    for (size_t k = 0; k < cfg_.codebook_sizes.size(); ++k) {
        const std::string h = "heads." + std::to_string(k) + ".";
        add_param(h + "proj", linear_init(e, {e, cfg_.proj_dim}));
        // Codewords start as one shared direction plus small noise so the
        // initial softmax is near uniform and the starting loss sits at
        // ln C per frame.
        Tensor anchor({cfg_.proj_dim});
        double norm = 0.0;
        for (double& v : anchor.data) {
            v = rng.gaussian();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : anchor.data) v /= norm;
        Tensor emb({cfg_.codebook_sizes[k], cfg_.proj_dim});
        const double noise = 0.05 / std::sqrt(static_cast<double>(cfg_.proj_dim));
        for (int c = 0; c < cfg_.codebook_sizes[k]; ++c) {
            double* row = emb.row(c);
            for (int j = 0; j < cfg_.proj_dim; ++j)
                row[j] = anchor.data[j] + noise * rng.gaussian();
        }
        add_param(h + "codewords", std::move(emb));
    }
}

ad::Var MaskedPredictionModel::conv_encode(ad::Graph& g, std::span<const float> samples) {
    if (cfg_.input_mode != InputMode::kWaveform)
        throw std::runtime_error("conv_encode requires waveform input mode");
    cfg_.conv_output_frames(static_cast<int64_t>(samples.size()));  // validates length
    Tensor x({static_cast<int>(samples.size()), 1});
    for (size_t i = 0; i < samples.size(); ++i) x.data[i] = samples[i];
    ad::Var h = g.constant(std::move(x));
    for (size_t i = 0; i < cfg_.conv.size(); ++i) {
        const std::string base = "conv." + std::to_string(i);
        h = g.conv1d_valid(h, g.param(param(base + ".weight")), g.param(param(base + ".bias")),
                           cfg_.conv[i].stride);
        h = g.gelu(h);
    }
    return h;
}

namespace {

void check_finite_activations(const Tensor& t, const std::string& where) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw NonFiniteError("non-finite activation at " + where);
}

}  // namespace

ad::Var MaskedPredictionModel::transformer_block(ad::Graph& g, ad::Var x, int layer) {
    const std::string b = "blocks." + std::to_string(layer) + ".";
    const int e = cfg_.embed_dim;
    const int dh = e / cfg_.num_heads;

    ad::Var a = g.layer_norm(x, g.param(param(b + "ln1.gamma")), g.param(param(b + "ln1.beta")));
    ad::Var q = g.add_row_bias(g.matmul(a, g.param(param(b + "attn.wq"))),
                               g.param(param(b + "attn.bq")));
    ad::Var k = g.add_row_bias(g.matmul(a, g.param(param(b + "attn.wk"))),
                               g.param(param(b + "attn.bk")));
    ad::Var v = g.add_row_bias(g.matmul(a, g.param(param(b + "attn.wv"))),
                               g.param(param(b + "attn.bv")));
    std::vector<ad::Var> ctx;
    for (int h = 0; h < cfg_.num_heads; ++h) {
        ad::Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        ad::Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        ad::Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        ad::Var scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        ad::Var attn = g.softmax_rows(scores);
        ctx.push_back(g.matmul(attn, vh));
    }
    ad::Var merged = cfg_.num_heads == 1 ? ctx[0] : g.concat_cols(ctx);
    ad::Var attn_out = g.add_row_bias(g.matmul(merged, g.param(param(b + "attn.wo"))),
                                      g.param(param(b + "attn.bo")));
    x = g.add(x, attn_out);

    ad::Var n2 = g.layer_norm(x, g.param(param(b + "ln2.gamma")), g.param(param(b + "ln2.beta")));
    ad::Var f = g.add_row_bias(g.matmul(n2, g.param(param(b + "ffn.w1"))),
                               g.param(param(b + "ffn.b1")));
    f = g.gelu(f);
    f = g.add_row_bias(g.matmul(f, g.param(param(b + "ffn.w2"))), g.param(param(b + "ffn.b2")));
    return g.add(x, f);
}

ForwardResult MaskedPredictionModel::forward_frames(ad::Graph& g, ad::Var frames,
                                                    const MaskSpec* mask, bool training,
                                                    Rng* drop_rng) {
    if (frames->val.dim(1) != cfg_.pre_projection_dim())
        throw std::runtime_error("input dimension " + std::to_string(frames->val.dim(1)) +
                                 " does not match model (" +
                                 std::to_string(cfg_.pre_projection_dim()) + ")");
    if (mask && mask->T != frames->val.dim(0))
        throw std::runtime_error("mask length does not match frame count");

    ad::Var x = frames;
    if (mask && !mask->masked.empty())
        x = g.mask_rows(x, mask->masked, g.param(param("mask_embedding")));
    x = g.add_row_bias(g.matmul(x, g.param(param("input_proj.weight"))),
                       g.param(param("input_proj.bias")));
    ad::Var pos = g.conv1d_same_grouped(x, g.param(param("pos_conv.weight")),
                                        g.param(param("pos_conv.bias")), cfg_.pos_conv_groups);
    x = g.add(x, g.gelu(pos));

    ForwardResult res;
    res.hidden.push_back(x);
    check_finite_activations(x->val, "layer 0 (transformer input)");
    for (int l = 0; l < cfg_.num_layers; ++l) {
        if (training && cfg_.layerdrop_prob > 0.0) {
            if (drop_rng == nullptr)
                throw std::runtime_error("layerdrop requires a drop rng in training mode");
            if (drop_rng->uniform() < cfg_.layerdrop_prob) {
                res.hidden.push_back(x);  // block skipped
                continue;
            }
        }
        x = transformer_block(g, x, l);
        check_finite_activations(x->val, "layer " + std::to_string(l + 1));
        res.hidden.push_back(x);
    }
    res.output = g.layer_norm(x, g.param(param("final_ln.gamma")), g.param(param("final_ln.beta")));
    return res;
}

ForwardResult MaskedPredictionModel::forward(ad::Graph& g, const FeatureSequence& f,
                                             const MaskSpec* mask, bool training, Rng* drop_rng) {
    if (cfg_.input_mode != InputMode::kFeatures)
        throw std::runtime_error("forward(FeatureSequence) requires feature input mode");
    Tensor x({f.rows, f.dim});
    for (int64_t i = 0; i < x.numel(); ++i) x.data[i] = f.data[i];
    return forward_frames(g, g.constant(std::move(x)), mask, training, drop_rng);
}

ForwardResult MaskedPredictionModel::forward_waveform(ad::Graph& g, std::span<const float> samples,
                                                      const MaskSpec* mask, bool training,
                                                      Rng* drop_rng) {
    ad::Var frames = conv_encode(g, samples);
    return forward_frames(g, frames, mask, training, drop_rng);
}

ad::Var MaskedPredictionModel::sequence_logits(ad::Graph& g, ad::Var output, int head) {
    if (head < 0 || head >= static_cast<int>(cfg_.codebook_sizes.size()))
        throw std::runtime_error("head index " + std::to_string(head) + " out of range");
    const std::string h = "heads." + std::to_string(head) + ".";
    ad::Var u = g.matmul(output, g.param(param(h + "proj")));
    return g.cosine_scores(u, g.param(param(h + "codewords")), kCosineEps, 1.0 / cfg_.tau);
}

std::vector<double> MaskedPredictionModel::head_logits(int head,
                                                       std::span<const double> o_t) const {
    if (head < 0 || head >= static_cast<int>(cfg_.codebook_sizes.size()))
        throw std::runtime_error("head index " + std::to_string(head) + " out of range");
    auto& self = const_cast<MaskedPredictionModel&>(*this);
    const Tensor& a = self.param("heads." + std::to_string(head) + ".proj").value;
    const Tensor& e = self.param("heads." + std::to_string(head) + ".codewords").value;
    if (static_cast<int>(o_t.size()) != cfg_.embed_dim)
        throw std::runtime_error("head_logits input dimension mismatch");
    std::vector<double> u(cfg_.proj_dim, 0.0);
    for (int i = 0; i < cfg_.embed_dim; ++i)
        for (int j = 0; j < cfg_.proj_dim; ++j) u[j] += o_t[i] * a.at(i, j);
    double un = 0.0;
    for (double v : u) un += v * v;
    un = std::sqrt(un);
    std::vector<double> logits(e.dim(0));
    for (int c = 0; c < e.dim(0); ++c) {
        const double* row = e.row(c);
        double dot = 0.0, en = 0.0;
        for (int j = 0; j < cfg_.proj_dim; ++j) {
            dot += u[j] * row[j];
            en += row[j] * row[j];
        }
        en = std::sqrt(en);
        logits[c] = dot / ((un + kCosineEps) * (en + kCosineEps)) / cfg_.tau;
    }
    return logits;
}

LossResult MaskedPredictionModel::loss(ad::Graph& g, ad::Var output,
                                       const std::vector<std::vector<int>>& targets,
                                       const MaskSpec& mask, double alpha) {
    const size_t num_heads = cfg_.codebook_sizes.size();
    if (targets.size() != num_heads)
        throw std::runtime_error("expected " + std::to_string(num_heads) +
                                 " target sequences, got " + std::to_string(targets.size()));
    const int t = output->val.dim(0);
    for (size_t k = 0; k < num_heads; ++k) {
        if (static_cast<int>(targets[k].size()) != t)
            throw std::runtime_error("target length mismatch for head " + std::to_string(k));
        for (int z : targets[k])
            if (z < 0 || z >= cfg_.codebook_sizes[k])
                throw std::runtime_error("target label " + std::to_string(z) +
                                         " out of range for head " + std::to_string(k) + " (C=" +
                                         std::to_string(cfg_.codebook_sizes[k]) + ")");
    }
    if (alpha < 0.0 || alpha > 1.0) throw std::runtime_error("alpha must be in [0, 1]");
    if (mask.T != t) throw std::runtime_error("mask length does not match output length");

    std::vector<int> unmasked;
    unmasked.reserve(t - mask.masked.size());
    for (int i = 0; i < t; ++i)
        if (!mask.is_masked(i)) unmasked.push_back(i);

    LossResult res;
    res.stats.num_masked = static_cast<int>(mask.masked.size());
    res.stats.num_unmasked = static_cast<int>(unmasked.size());

    ad::Var total = nullptr;
    for (size_t k = 0; k < num_heads; ++k) {
        ad::Var logits = sequence_logits(g, output, static_cast<int>(k));

        // accuracies and per-region nats from the logit values
        auto tally = [&](const std::vector<int>& rows, double& nats, double& acc) {
            int correct = 0;
            for (int i : rows) {
                const double* row = logits->val.row(i);
                const int c = cfg_.codebook_sizes[k];
                double mx = row[0];
                int arg = 0;
                for (int j = 1; j < c; ++j)
                    if (row[j] > mx) {
                        mx = row[j];
                        arg = j;
                    }
                double lse = 0.0;
                for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
                nats += (mx + std::log(lse)) - row[targets[k][i]];
                if (arg == targets[k][i]) ++correct;
            }
            acc = rows.empty() ? 0.0 : static_cast<double>(correct) / rows.size();
        };
        double m_acc = 0.0, u_acc = 0.0;
        tally(mask.masked, res.stats.masked_nats, m_acc);
        tally(unmasked, res.stats.unmasked_nats, u_acc);
        res.stats.masked_accuracy.push_back(m_acc);
        res.stats.unmasked_accuracy.push_back(u_acc);

        if (alpha > 0.0 && !mask.masked.empty()) {
            ad::Var lm = g.ce_rows_sum(logits, targets[k], mask.masked, alpha);
            total = total ? g.add(total, lm) : lm;
        }
        if (alpha < 1.0 && !unmasked.empty()) {
            ad::Var lu = g.ce_rows_sum(logits, targets[k], unmasked, 1.0 - alpha);
            total = total ? g.add(total, lu) : lu;
        }
    }
    if (!total) total = g.constant(Tensor::scalar(0.0));
    res.loss = total;
    res.stats.total = total->val.data[0];
    return res;
}

}  // namespace mul
