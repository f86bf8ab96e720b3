#include "multimix/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "multimix/errors.hpp"

namespace multimix {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects any key that was not read.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("field '" + qualified(key) + "' has the wrong type");
        }
    }

    void read_count(const char* key, std::optional<std::size_t>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_string() && it->get<std::string>() == "full") {
            out.reset();
        } else if (it->is_number_unsigned() || (it->is_number_integer() && it->get<long long>() >= 0)) {
            out = it->get<std::size_t>();
        } else {
            throw ConfigError("field '" + qualified(key) + "' must be a non-negative integer or \"full\"");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + qualified(it.key()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json count_to_json(const std::optional<std::size_t>& n) { return n ? json(*n) : json("full"); }

json model_to_json(const ModelConfig& m) {
    return json{{"input_height", m.input_height},   {"input_width", m.input_width},
                {"input_channels", m.input_channels}, {"num_classes", m.num_classes},
                {"depth", m.depth},                   {"base_channels", m.base_channels},
                {"lrelu_slope", m.lrelu_slope},       {"dropout_rate", m.dropout_rate},
                {"bridge_enabled", m.bridge_enabled}, {"classifier_enabled", m.classifier_enabled},
                {"decoder_enabled", m.decoder_enabled}};
}

ModelConfig model_from_json(const json& j, const std::string& path) {
    ModelConfig m;
    StrictObject o(j, path);
    o.read("input_height", m.input_height);
    o.read("input_width", m.input_width);
    o.read("input_channels", m.input_channels);
    o.read("num_classes", m.num_classes);
    o.read("depth", m.depth);
    o.read("base_channels", m.base_channels);
    o.read("lrelu_slope", m.lrelu_slope);
    o.read("dropout_rate", m.dropout_rate);
    o.read("bridge_enabled", m.bridge_enabled);
    o.read("classifier_enabled", m.classifier_enabled);
    o.read("decoder_enabled", m.decoder_enabled);
    o.finish();
    return m;
}

json loss_to_json(const LossConfig& l) {
    return json{{"t", l.t},
                {"lambda_u", l.lambda_u},
                {"alpha", l.alpha ? json(*l.alpha) : json("auto")},
                {"beta", l.beta},
                {"kl_epsilon", l.kl_epsilon},
                {"dice_smooth", l.dice_smooth},
                {"unsup_denominator", l.unsup_denominator == UnsupDenominator::kept ? "kept" : "batch"}};
}

LossConfig loss_from_json(const json& j) {
    LossConfig l;
    StrictObject o(j, "loss");
    o.read("t", l.t);
    o.read("lambda_u", l.lambda_u);
    if (const json* a = o.child("alpha")) {
        if (a->is_string() && a->get<std::string>() == "auto")
            l.alpha.reset();
        else if (a->is_number())
            l.alpha = a->get<double>();
        else
            throw ConfigError("field 'loss.alpha' must be a number or \"auto\"");
    }
    o.read("beta", l.beta);
    o.read("kl_epsilon", l.kl_epsilon);
    o.read("dice_smooth", l.dice_smooth);
    std::string denom = "kept";
    o.read("unsup_denominator", denom);
    if (denom == "kept")
        l.unsup_denominator = UnsupDenominator::kept;
    else if (denom == "batch")
        l.unsup_denominator = UnsupDenominator::batch;
    else
        throw ConfigError("field 'loss.unsup_denominator' must be \"kept\" or \"batch\"");
    o.finish();
    return l;
}

json augment_to_json(const AugPolicy& a) {
    json pool = json::array();
    for (const auto& op : a.strong.pool) pool.push_back(json{{"op", op.name}, {"lo", op.lo}, {"hi", op.hi}});
    return json{{"weak",
                 {{"hflip_prob", a.weak.hflip_prob},
                  {"rotation_deg", a.weak.rotation_deg},
                  {"shift_frac", a.weak.shift_frac}}},
                {"strong",
                 {{"ops_per_image", a.strong.ops_per_image},
                  {"pool", pool},
                  {"cutout_max_area", a.strong.cutout_max_area}}}};
}

AugPolicy augment_from_json(const json& j) {
    AugPolicy a;
    StrictObject o(j, "augment");
    if (const json* w = o.child("weak")) {
        StrictObject ow(*w, "augment.weak");
        ow.read("hflip_prob", a.weak.hflip_prob);
        ow.read("rotation_deg", a.weak.rotation_deg);
        ow.read("shift_frac", a.weak.shift_frac);
        ow.finish();
    }
    if (const json* s = o.child("strong")) {
        StrictObject os(*s, "augment.strong");
        os.read("ops_per_image", a.strong.ops_per_image);
        os.read("cutout_max_area", a.strong.cutout_max_area);
        if (const json* p = os.child("pool")) {
            if (!p->is_array()) throw ConfigError("'augment.strong.pool' must be an array");
            a.strong.pool.clear();
            for (const auto& e : *p) {
                AugOp op;
                StrictObject oe(e, "augment.strong.pool[]");
                oe.read("op", op.name);
                oe.read("lo", op.lo);
                oe.read("hi", op.hi);
                oe.finish();
                a.strong.pool.push_back(op);
            }
        }
        os.finish();
    }
    o.finish();
    return a;
}

json train_to_json(const TrainConfig& c) {
    return json{{"initial_lr", c.initial_lr},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_decay_every", c.lr_decay_every},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"seed", c.seed},
                {"repeats", c.repeats},
                {"checkpoint_dir", c.checkpoint_dir},
                {"model", model_to_json(c.model)},
                {"loss", loss_to_json(c.loss)},
                {"split",
                 {{"n_class_labeled", count_to_json(c.split.n_class_labeled)},
                  {"n_seg_labeled", count_to_json(c.split.n_seg_labeled)},
                  {"split_seed", c.split.split_seed}}},
                {"augment", augment_to_json(c.augment)},
                {"data",
                 {{"train_manifest", c.data.train_manifest},
                  {"val_manifest", c.data.val_manifest},
                  {"test_manifest", c.data.test_manifest},
                  {"cross_manifest", c.data.cross_manifest}}}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    StrictObject o(j, "");
    o.read("initial_lr", c.initial_lr);
    o.read("lr_decay_factor", c.lr_decay_factor);
    o.read("lr_decay_every", c.lr_decay_every);
    o.read("epochs", c.epochs);
    o.read("batch_size", c.batch_size);
    o.read("adam_beta1", c.adam_beta1);
    o.read("adam_beta2", c.adam_beta2);
    o.read("adam_eps", c.adam_eps);
    o.read("seed", c.seed);
    o.read("repeats", c.repeats);
    o.read("checkpoint_dir", c.checkpoint_dir);
    if (const json* m = o.child("model")) c.model = model_from_json(*m, "model");
    if (const json* l = o.child("loss")) c.loss = loss_from_json(*l);
    if (const json* s = o.child("split")) {
        StrictObject os(*s, "split");
        os.read_count("n_class_labeled", c.split.n_class_labeled);
        os.read_count("n_seg_labeled", c.split.n_seg_labeled);
        os.read("split_seed", c.split.split_seed);
        os.finish();
    }
    if (const json* a = o.child("augment")) c.augment = augment_from_json(*a);
    if (const json* d = o.child("data")) {
        StrictObject od(*d, "data");
        od.read("train_manifest", c.data.train_manifest);
        od.read("val_manifest", c.data.val_manifest);
        od.read("test_manifest", c.data.test_manifest);
        od.read("cross_manifest", c.data.cross_manifest);
        od.finish();
    }
    o.finish();
    return c;
}

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (input_height <= 0 || input_width <= 0) throw ConfigError("input size must be positive");
    const int f = 1 << depth;
    if (input_height % f != 0 || input_width % f != 0)
        throw ConfigError("input_height and input_width must be divisible by 2^depth (" + std::to_string(f) + ")");
    if (input_channels != 1) throw ConfigError("input_channels must be 1 (grayscale)");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (!classifier_enabled && !decoder_enabled)
        throw ConfigError("at least one of classifier_enabled, decoder_enabled must be true");
    if (bridge_enabled && !(classifier_enabled && decoder_enabled))
        throw ConfigError("bridge_enabled requires both classifier_enabled and decoder_enabled");
}

void LossConfig::validate() const {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("loss.t must be in (0, 1)");
    if (lambda_u < 0.0) throw ConfigError("loss.lambda_u must be >= 0");
    if (alpha && *alpha < 0.0) throw ConfigError("loss.alpha must be >= 0");
    if (beta < 0.0) throw ConfigError("loss.beta must be >= 0");
    if (!(kl_epsilon > 0.0 && kl_epsilon < 1e-3)) throw ConfigError("loss.kl_epsilon must be in (0, 1e-3)");
    if (dice_smooth < 0.0) throw ConfigError("loss.dice_smooth must be >= 0");
}

double resolve_alpha(const LossConfig& loss, const SplitSpec& split) {
    if (loss.alpha) return *loss.alpha;
    return (split.n_seg_labeled && *split.n_seg_labeled <= 50) ? 5.0 : 1.0;
}

void AugPolicy::validate() const {
    static const std::set<std::string> known = {"rotate", "shear", "brightness", "contrast",
                                                "gamma",  "noise", "blur"};
    if (weak.hflip_prob < 0.0 || weak.hflip_prob > 1.0) throw ConfigError("augment.weak.hflip_prob must be in [0,1]");
    if (weak.rotation_deg < 0.0) throw ConfigError("augment.weak.rotation_deg must be >= 0");
    if (weak.shift_frac < 0.0 || weak.shift_frac >= 1.0) throw ConfigError("augment.weak.shift_frac must be in [0,1)");
    if (strong.ops_per_image < 0) throw ConfigError("augment.strong.ops_per_image must be >= 0");
    if (strong.ops_per_image > 0 && strong.pool.empty())
        throw ConfigError("augment.strong.pool must be non-empty when ops_per_image > 0");
    for (const auto& op : strong.pool) {
        if (!known.count(op.name)) throw ConfigError("unknown augmentation op '" + op.name + "'");
        if (op.lo > op.hi) throw ConfigError("augmentation op '" + op.name + "' has lo > hi");
    }
    if (strong.cutout_max_area < 0.0 || strong.cutout_max_area > 1.0)
        throw ConfigError("augment.strong.cutout_max_area must be in [0,1]");
}

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    augment.validate();
    if (!(initial_lr >= 0.0)) throw ConfigError("initial_lr must be >= 0");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must be in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::string to_json_string(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }
std::string to_json_string(const TrainConfig& cfg, int indent) { return train_to_json(cfg).dump(indent); }

ModelConfig parse_model_config(const std::string& json_text) {
    return model_from_json(parse_json(json_text), "model");
}

TrainConfig parse_train_config(const std::string& json_text) { return train_from_json(parse_json(json_text)); }

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    json j = train_to_json(cfg);
    json* node = &j;
    std::stringstream ks(key);
    std::string part;
    while (std::getline(ks, part, '.')) {
        if (!node->is_object() || !node->contains(part)) throw UsageError("unknown override key '" + key + "'");
        node = &(*node)[part];
    }
    if (node->is_object()) throw UsageError("override key '" + key + "' names a section, not a field");
    json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? json(value) : parsed;
    try {
        cfg = train_from_json(j);
    } catch (const ConfigError& e) {
        throw UsageError("bad override '" + key + "=" + value + "': " + e.what());
    }
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override must be KEY=VALUE, got '" + assignment + "'");
    apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

}  // namespace multimix
