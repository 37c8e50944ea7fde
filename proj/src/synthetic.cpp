#include "mul/synthetic.hpp"
#include <cstdio>

#include <cmath>

#include "mul/io.hpp"
#include "mul/rng.hpp"

namespace mul {

void SyntheticCorpusSpec::validate() const {
    if (num_phones < 2) throw std::runtime_error("num_phones must be >= 2");
    if (noise_sigma < 0.0) throw std::runtime_error("noise sigma must be >= 0");
    if (emission_dim < 1) throw std::runtime_error("emission_dim must be >= 1");
    if (min_segment_frames < 1 || max_segment_frames < min_segment_frames)
        throw std::runtime_error("invalid segment duration range");
    if (num_utterances < 1) throw std::runtime_error("num_utterances must be >= 1");
    if (mean_utterance_frames < max_segment_frames)
        throw std::runtime_error("mean_utterance_frames too small");
}

void to_json(nlohmann::json& j, const SyntheticCorpusSpec& s) {
    j = {{"num_phones", s.num_phones},
         {"emission_dim", s.emission_dim},
         {"min_segment_frames", s.min_segment_frames},
         {"max_segment_frames", s.max_segment_frames},
         {"anchor_distance", s.anchor_distance},
         {"noise_sigma", s.noise_sigma},
         {"num_utterances", s.num_utterances},
         {"mean_utterance_frames", s.mean_utterance_frames},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticCorpusSpec& s) {
    s = SyntheticCorpusSpec{};
    if (j.contains("num_phones")) s.num_phones = j.at("num_phones").get<int>();
    if (j.contains("emission_dim")) s.emission_dim = j.at("emission_dim").get<int>();
    if (j.contains("min_segment_frames"))
        s.min_segment_frames = j.at("min_segment_frames").get<int>();
    if (j.contains("max_segment_frames"))
        s.max_segment_frames = j.at("max_segment_frames").get<int>();
    if (j.contains("anchor_distance")) s.anchor_distance = j.at("anchor_distance").get<double>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("num_utterances")) s.num_utterances = j.at("num_utterances").get<int>();
    if (j.contains("mean_utterance_frames"))
        s.mean_utterance_frames = j.at("mean_utterance_frames").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
}

SyntheticCorpus gen_synthetic_corpus(const SyntheticCorpusSpec& spec) {
    spec.validate();
    const int d = spec.emission_dim;

    // anchors with target pairwise distance: orthogonal directions at radius
    // distance / sqrt(2) are exactly equidistant
    std::vector<std::vector<double>> anchors(spec.num_phones, std::vector<double>(d, 0.0));
    const double radius = spec.anchor_distance / std::sqrt(2.0);
    Rng anchor_rng(derive_seed(spec.seed, "anchors"));
    if (spec.num_phones <= d) {
        for (int p = 0; p < spec.num_phones; ++p) anchors[p][p] = radius;
    } else {
        for (int p = 0; p < spec.num_phones; ++p) {
            double norm = 0.0;
            for (int i = 0; i < d; ++i) {
                anchors[p][i] = anchor_rng.gaussian();
                norm += anchors[p][i] * anchors[p][i];
            }
            norm = std::sqrt(norm);
            for (int i = 0; i < d; ++i) anchors[p][i] *= radius / norm;
        }
    }

    SyntheticCorpus corpus;
    for (int u = 0; u < spec.num_utterances; ++u) {
        Rng rng(derive_seed(spec.seed, "utterance", static_cast<uint64_t>(u)));
        const int target = std::max(
            spec.max_segment_frames,
            static_cast<int>(std::llround(spec.mean_utterance_frames * (0.8 + 0.4 * rng.uniform()))));

        FeatureSequence f;
        f.dim = d;
        f.frame_rate_hz = 50;
        f.kind = FeatureKind::kMfcc;  // plays the acoustic-feature role
        char name[32];
        std::snprintf(name, sizeof(name), "utt%04d", u);
        f.utterance_id = name;
        LabelSequence labels;
        labels.utterance_id = f.utterance_id;

        int phone = static_cast<int>(rng.uniform_int(spec.num_phones));
        while (f.rows < target) {
            const int len = spec.min_segment_frames +
                            static_cast<int>(rng.uniform_int(
                                spec.max_segment_frames - spec.min_segment_frames + 1));
            for (int t = 0; t < len; ++t) {
                for (int i = 0; i < d; ++i)
                    f.data.push_back(static_cast<float>(anchors[phone][i] +
                                                        spec.noise_sigma * rng.gaussian()));
                labels.labels.push_back(phone);
                ++f.rows;
            }
            // next phone, never a self-transition
            if (spec.num_phones > 1) {
                const int step = 1 + static_cast<int>(rng.uniform_int(spec.num_phones - 1));
                phone = (phone + step) % spec.num_phones;
            }
        }
        corpus.features.push_back(std::move(f));
        corpus.phone_labels.push_back(std::move(labels));
    }
    return corpus;
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.root = ".";
    for (const auto& f : corpus.features) {
        const std::string name = f.utterance_id + ".mulf";
        save_features(dir / name, f);
        m.entries.push_back({name, static_cast<uint64_t>(f.rows)});
    }
    m.root = ".";
    save_manifest(dir / "manifest.txt", m);
    save_labels(dir / "phones.txt", corpus.phone_labels);
}

}  // namespace mul
