#include "multimix/evaluate.hpp"

#include "multimix/checkpoint.hpp"
#include "multimix/errors.hpp"

namespace multimix {

MetricsReport evaluate(const Network& net, const ParameterSet& params, const std::vector<Sample>& samples,
                       const std::string& domain, std::vector<SamplePrediction>* predictions) {
    const auto& cfg = net.config();
    net.check_params(params);
    MetricsReport r;
    r.domain = domain;
    r.n_samples = samples.size();

    std::vector<int> pred, truth;
    double dice = 0.0, ahd = 0.0, ssim_sum = 0.0;
    for (const auto& s : samples) {
        const bool want_class = cfg.classifier_enabled && s.class_label.has_value();
        const bool want_seg = cfg.decoder_enabled && s.mask.has_value();
        if (!want_class && !want_seg && !predictions) continue;
        const SampleTrace t = net.forward_sample(params, s.image, nullptr,
                                                 {cfg.classifier_enabled, cfg.decoder_enabled});
        SamplePrediction p;
        p.id = s.id;
        if (cfg.classifier_enabled) {
            int best = 0;
            for (int k = 1; k < cfg.num_classes; ++k)
                if (t.logits[k] > t.logits[best]) best = k;
            p.predicted_class = best;
            if (want_class) {
                pred.push_back(best);
                truth.push_back(*s.class_label);
            }
        }
        if (want_seg) {
            const Tensor b = binarize(t.seg_probs);
            dice += dice_score(b, *s.mask);
            ahd += avg_hausdorff(b, *s.mask);
            ssim_sum += ssim(b, *s.mask);
            ++r.n_segmented;
        }
        if (predictions) {
            if (cfg.decoder_enabled) p.seg_probs = t.seg_probs;
            predictions->push_back(std::move(p));
        }
    }
    if (cfg.classifier_enabled && !pred.empty()) {
        r.n_classified = pred.size();
        r.acc = accuracy(pred, truth);
        r.f1_normal = f1_class(pred, truth, 0).score;
        r.f1_pneumonia = f1_class(pred, truth, 1).score;
    }
    if (cfg.decoder_enabled && r.n_segmented > 0) {
        const double n = static_cast<double>(r.n_segmented);
        r.dice = dice / n;
        r.ahd = ahd / n;
        r.ssim = ssim_sum / n;
    }
    return r;
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                  const std::string& domain) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Network net(ck.model);
    const auto samples = load_dataset(manifest, ck.model.input_height, ck.model.input_width);
    return evaluate(net, ck.params, samples, domain);
}

}  // namespace multimix
