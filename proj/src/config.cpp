#include "vpgo/config.hpp"

#include "vpgo/errors.hpp"

#include <fstream>
#include <set>

namespace vpgo::config {

namespace {

// Reads fields of one JSON object and rejects whatever was not consumed.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) throw ConfigError(prefix_, "expected an object");
    }

    std::string key(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    const Json* find(const std::string& name) {
        seen_.insert(name);
        auto it = j_.find(name);
        return it == j_.end() ? nullptr : &*it;
    }

    template <class Int>
    void integer(const std::string& name, Int& out) {
        if (const auto* v = find(name)) {
            if (!v->is_number_integer()) throw ConfigError(key(name), "expected an integer");
            out = v->get<Int>();
        }
    }

    void number(const std::string& name, double& out) {
        if (const auto* v = find(name)) {
            if (!v->is_number()) throw ConfigError(key(name), "expected a number");
            out = v->get<double>();
        }
    }

    void boolean(const std::string& name, bool& out) {
        if (const auto* v = find(name)) {
            if (!v->is_boolean()) throw ConfigError(key(name), "expected true or false");
            out = v->get<bool>();
        }
    }

    template <class Parse>
    void enumeration(const std::string& name, Parse parse) {
        if (const auto* v = find(name)) {
            if (!v->is_string()) throw ConfigError(key(name), "expected a string");
            try {
                parse(v->get<std::string>());
            } catch (const ConfigError& e) {
                throw ConfigError(key(name), e.what());
            }
        }
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError(key(k), "unknown key");
        }
    }

private:
    const Json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

// ConfigError keys from validate() are bare field names.
template <class F>
void validated(const std::string& prefix, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + "." + e.key(), e.what());
    }
}

}  // namespace

Json to_json(const model::ModelConfig& c) {
    return Json{{"encoder_variant", model::to_string(c.encoder_variant)},
                {"frame_height", c.frame_height},
                {"frame_width", c.frame_width},
                {"feature_stride", c.feature_stride},
                {"base_channels", c.base_channels},
                {"feature_channels", c.feature_channels},
                {"action_code_channels", c.action_code_channels},
                {"latent_channels", c.latent_channels},
                {"hidden_channels", c.hidden_channels},
                {"kernel_size", c.kernel_size},
                {"predictor_lstm_layers", c.predictor_lstm_layers},
                {"prior_lstm_layers", c.prior_lstm_layers},
                {"posterior_lstm_layers", c.posterior_lstm_layers},
                {"use_state", c.use_state},
                {"n_a", c.n_a},
                {"n_s", c.n_s},
                {"laplace_scale", c.laplace_scale},
                {"norm", model::to_string(c.norm)},
                {"seed", c.seed}};
}

model::ModelConfig parse_model_config(const Json& j, const std::string& prefix) {
    model::ModelConfig c;
    ObjectReader r(j, prefix);
    r.enumeration("encoder_variant", [&](const std::string& s) { c.encoder_variant = model::parse_encoder_variant(s); });
    r.integer("frame_height", c.frame_height);
    r.integer("frame_width", c.frame_width);
    r.integer("feature_stride", c.feature_stride);
    r.integer("base_channels", c.base_channels);
    r.integer("feature_channels", c.feature_channels);
    r.integer("action_code_channels", c.action_code_channels);
    r.integer("latent_channels", c.latent_channels);
    r.integer("hidden_channels", c.hidden_channels);
    r.integer("kernel_size", c.kernel_size);
    r.integer("predictor_lstm_layers", c.predictor_lstm_layers);
    r.integer("prior_lstm_layers", c.prior_lstm_layers);
    r.integer("posterior_lstm_layers", c.posterior_lstm_layers);
    r.boolean("use_state", c.use_state);
    r.integer("n_a", c.n_a);
    r.integer("n_s", c.n_s);
    r.number("laplace_scale", c.laplace_scale);
    r.enumeration("norm", [&](const std::string& s) { c.norm = model::parse_norm(s); });
    r.integer("seed", c.seed);
    r.finish();
    validated(prefix, [&] { c.validate(); });
    return c;
}

Json to_json(const training::TrainConfig& c) {
    Json j{{"context", c.context},
           {"horizon", c.horizon},
           {"beta", c.beta},
           {"beta_warmup", c.beta_warmup},
           {"lr", c.lr},
           {"lr_schedule", training::to_string(c.lr_schedule)},
           {"lr_final", c.lr_final},
           {"batch_size", c.batch_size},
           {"steps", c.steps},
           {"seed", c.seed},
           {"grad_clip", nullptr},
           {"checkpoint_every", c.checkpoint_every}};
    if (c.grad_clip) j["grad_clip"] = *c.grad_clip;
    return j;
}

training::TrainConfig parse_train_config(const Json& j, const std::string& prefix) {
    training::TrainConfig c;
    ObjectReader r(j, prefix);
    r.integer("context", c.context);
    r.integer("horizon", c.horizon);
    r.number("beta", c.beta);
    r.number("beta_warmup", c.beta_warmup);
    r.number("lr", c.lr);
    r.enumeration("lr_schedule", [&](const std::string& s) { c.lr_schedule = training::parse_lr_schedule(s); });
    r.number("lr_final", c.lr_final);
    r.integer("batch_size", c.batch_size);
    r.integer("steps", c.steps);
    r.integer("seed", c.seed);
    if (const auto* v = r.find("grad_clip"); v && !v->is_null()) {
        if (!v->is_number()) throw ConfigError(r.key("grad_clip"), "expected a number or null");
        c.grad_clip = v->get<double>();
    }
    r.integer("checkpoint_every", c.checkpoint_every);
    r.finish();
    validated(prefix, [&] { c.validate(); });
    return c;
}

Json to_json(const ExperimentConfig& c) { return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}}; }

ExperimentConfig parse_experiment_config(const Json& j) {
    ExperimentConfig c;
    ObjectReader r(j, "");
    if (const auto* m = r.find("model")) c.model = parse_model_config(*m, "model");
    if (const auto* t = r.find("train")) c.train = parse_train_config(*t, "train");
    r.finish();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("", path.string() + ": " + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace vpgo::config
