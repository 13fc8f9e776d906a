#include "cbfsyn/config.hpp"

#include "cbfsyn/serialization.hpp"

#include <charconv>
#include <cmath>
#include <set>

namespace cbfsyn {

using json = nlohmann::json;

namespace {

std::string located(const std::string& message, ConfigPosition at) {
    if (at.line <= 0) return message;
    return "line " + std::to_string(at.line) + ", column " + std::to_string(at.column) + ": " +
           message;
}

bool name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
}

class Lexer {
public:
    explicit Lexer(std::string_view text) : text_(text) {}

    ConfigPosition here() const { return {line_, column_}; }
    bool done() const { return pos_ >= text_.size(); }
    char peek() const { return done() ? '\0' : text_[pos_]; }

    char take() {
        const char c = text_[pos_++];
        if (c == '\n') {
            ++line_;
            column_ = 1;
        } else {
            ++column_;
        }
        return c;
    }

    [[noreturn]] void fail(const std::string& message) const { throw ConfigError(message, here()); }

    // Spaces, tabs and comments; newlines too when `lines` is set.
    void skip(bool lines) {
        while (!done()) {
            const char c = peek();
            if (c == ' ' || c == '\t' || c == '\r' || (lines && c == '\n')) {
                take();
            } else if (c == '#') {
                while (!done() && peek() != '\n') take();
            } else {
                break;
            }
        }
    }

    void end_of_line() {
        skip(false);
        if (!done() && peek() != '\n') fail(std::string("unexpected '") + peek() + "'");
        if (!done()) take();
    }

    std::string name() {
        std::string out;
        while (!done() && name_char(peek())) out += take();
        if (out.empty()) fail("expected a name");
        return out;
    }

    json value() {
        const char c = peek();
        if (c == '"') return string();
        if (c == '[') return array();
        if (c == 't' || c == 'f') {
            const std::string word = name();
            if (word == "true") return true;
            if (word == "false") return false;
            fail("unknown bare word '" + word + "'");
        }
        if (c == '-' || c == '+' || c == '.' || (c >= '0' && c <= '9')) return number();
        if (done() || c == '\n') fail("missing value");
        fail(std::string("unexpected '") + c + "'");
    }

private:
    json string() {
        take();
        std::string out;
        while (true) {
            if (done() || peek() == '\n') fail("unterminated string");
            const char c = take();
            if (c == '"') return out;
            if (c != '\\') {
                out += c;
                continue;
            }
            if (done()) fail("unterminated string");
            const char e = take();
            switch (e) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                default: fail(std::string("unknown escape '\\") + e + "'");
            }
        }
    }

    json array() {
        take();
        json out = json::array();
        while (true) {
            skip(true);
            if (done()) fail("unterminated array");
            if (peek() == ']') {
                take();
                return out;
            }
            out.push_back(value());
            skip(true);
            if (peek() == ',') {
                take();
            } else if (peek() != ']') {
                fail("expected ',' or ']' in array");
            }
        }
    }

    json number() {
        const ConfigPosition start = here();
        std::string token;
        while (!done()) {
            const char c = peek();
            if ((c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.' || c == 'e' || c == 'E') {
                token += take();
            } else {
                break;
            }
        }
        const char* first = token.data() + (token.front() == '+' ? 1 : 0);
        const char* last = token.data() + token.size();
        const bool integral = token.find_first_of(".eE") == std::string::npos;
        if (integral) {
            std::int64_t v = 0;
            const auto [end, ec] = std::from_chars(first, last, v);
            if (ec == std::errc() && end == last) return v;
        }
        double d = 0.0;
        const auto [end, ec] = std::from_chars(first, last, d);
        if (ec != std::errc() || end != last || !std::isfinite(d)) {
            throw ConfigError("malformed number '" + token + "'", start);
        }
        return d;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int column_ = 1;
};

// Typed, position-aware access to one section; finish() rejects keys nobody asked for.
class Section {
public:
    Section(const ConfigDocument& doc, std::string name) : doc_(doc), name_(std::move(name)) {
        if (doc.values.contains(name_)) obj_ = &doc.values.at(name_);
    }

    bool present() const { return obj_ != nullptr; }
    bool has(const std::string& key) const { return obj_ && obj_->contains(key); }
    ConfigPosition at(const std::string& key) const { return doc_.where(name_, key); }
    ConfigPosition at_section() const { return doc_.where(name_); }

    [[noreturn]] void fail(const std::string& key, const std::string& message) const {
        throw ConfigError(name_ + "." + key + ": " + message, at(key));
    }

    const json* raw(const std::string& key) {
        used_.insert(key);
        if (!has(key)) return nullptr;
        return &obj_->at(key);
    }

    double real(const std::string& key, double fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_number()) fail(key, "expected a number");
        return v->get<double>();
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_number_integer()) fail(key, "expected an integer");
        return v->get<std::int64_t>();
    }

    std::int64_t count(const std::string& key, std::int64_t fallback, std::int64_t minimum) {
        const std::int64_t v = integer(key, fallback);
        if (v < minimum) fail(key, "must be >= " + std::to_string(minimum));
        return v;
    }

    bool boolean(const std::string& key, bool fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_boolean()) fail(key, "expected true or false");
        return v->get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_string()) fail(key, "expected a string");
        return v->get<std::string>();
    }

    Vec vec_of(const json& arr, const std::string& key) const {
        if (!arr.is_array() || arr.empty()) fail(key, "expected a non-empty array of numbers");
        Vec out(static_cast<Eigen::Index>(arr.size()));
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_number()) fail(key, "expected a non-empty array of numbers");
            out[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
        }
        return out;
    }

    std::optional<Vec> vec(const std::string& key) {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        return vec_of(*v, key);
    }

    Vec required_vec(const std::string& key) {
        std::optional<Vec> v = vec(key);
        if (!v) throw ConfigError(name_ + "." + key + " is required", at_section());
        return *v;
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& [key, _] : obj_->items()) {
            if (!used_.contains(key)) fail(key, "unknown key");
        }
    }

    // Keys the caller did not claim, for free-form parameter tables.
    std::vector<std::string> unclaimed() const {
        std::vector<std::string> out;
        if (!obj_) return out;
        for (const auto& [key, _] : obj_->items()) {
            if (!used_.contains(key)) out.push_back(key);
        }
        return out;
    }

private:
    const ConfigDocument& doc_;
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> used_;
};

template <class Fn>
void validated(const Section& sec, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what(), sec.at_section());
    }
}

json vec_json(const Vec& v) {
    json out = json::array();
    for (double x : v) out.push_back(x);
    return out;
}

}  // namespace

ConfigError::ConfigError(const std::string& message, ConfigPosition where)
    : std::runtime_error(located(message, where)), where_(where) {}

ConfigPosition ConfigDocument::where(const std::string& section, const std::string& key) const {
    auto it = positions.find(key.empty() ? section : section + "." + key);
    if (it != positions.end()) return it->second;
    it = positions.find(section);
    return it == positions.end() ? ConfigPosition{} : it->second;
}

ConfigDocument parse_config(std::string_view text) {
    ConfigDocument doc;
    Lexer lx(text);
    std::string section;
    while (true) {
        lx.skip(true);
        if (lx.done()) break;
        const ConfigPosition start = lx.here();
        if (lx.peek() == '[') {
            lx.take();
            lx.skip(false);
            section = lx.name();
            lx.skip(false);
            if (lx.peek() != ']') lx.fail("expected ']' after section name");
            lx.take();
            if (doc.values.contains(section)) {
                throw ConfigError("duplicate section [" + section + "]", start);
            }
            doc.values[section] = json::object();
            doc.positions[section] = start;
            lx.end_of_line();
            continue;
        }
        if (!name_char(lx.peek())) lx.fail(std::string("unexpected '") + lx.peek() + "'");
        const std::string key = lx.name();
        if (section.empty()) throw ConfigError("entry '" + key + "' outside any section", start);
        lx.skip(false);
        if (lx.peek() != '=') lx.fail("expected '=' after key '" + key + "'");
        lx.take();
        lx.skip(false);
        json value = lx.value();
        json& table = doc.values[section];
        if (table.contains(key)) throw ConfigError("duplicate key '" + key + "'", start);
        table[key] = std::move(value);
        doc.positions[section + "." + key] = start;
        lx.end_of_line();
    }
    return doc;
}

SystemInstance PipelineConfig::instantiate() const {
    return SystemRegistry::global().create(system_name, system_params);
}

FitConfig PipelineConfig::fit_for(FitMode mode) const {
    FitConfig out = fit;
    out.mode = mode;
    out.count = mode == FitMode::Multi ? multi_count : 1;
    return out;
}

std::vector<double> PipelineConfig::alphas(std::size_t candidates) const {
    if (simulate.kappas.empty()) return std::vector<double>(candidates, simulate.kappa);
    if (simulate.kappas.size() != candidates) {
        throw std::invalid_argument("simulate.kappas has " + std::to_string(simulate.kappas.size()) +
                                    " entries but the fit has " + std::to_string(candidates) +
                                    " candidates");
    }
    return simulate.kappas;
}

PipelineConfig pipeline_config_from(const ConfigDocument& doc) {
    static const std::set<std::string> known{"system", "sampling", "boundary", "fit",
                                             "simulate", "report",   "output"};
    for (const auto& [name, _] : doc.values.items()) {
        if (!known.contains(name)) throw ConfigError("unknown section [" + name + "]", doc.where(name));
    }
    PipelineConfig cfg;

    Section sys(doc, "system");
    if (!sys.has("name")) throw ConfigError("system.name is required", sys.at_section());
    cfg.system_name = sys.text("name", "");
    for (const std::string& key : sys.unclaimed()) cfg.system_params[key] = sys.real(key, 0.0);
    if (!SystemRegistry::global().contains(cfg.system_name)) {
        sys.fail("name", "unknown system '" + cfg.system_name + "'");
    }
    SystemInstance inst;
    try {
        inst = cfg.instantiate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what(), sys.at_section());
    }

    Section smp(doc, "sampling");
    SamplingConfig& sc = cfg.sampling;
    const Vec lower = smp.required_vec("lower");
    const Vec upper = smp.required_vec("upper");
    if (lower.size() != inst.model.n || upper.size() != inst.model.n) {
        smp.fail("lower", "bounds need " + std::to_string(inst.model.n) + " entries");
    }
    validated(smp, [&] { sc.bounds = BoxSet(lower, upper); });
    sc.n_start = static_cast<std::size_t>(smp.count("n_start", 243, 1));
    sc.n_min = static_cast<std::size_t>(smp.count("n_min", 1000, 1));
    sc.n_max = static_cast<std::size_t>(smp.count("n_max", 1594323, 1));
    sc.delta = smp.real("delta", 1e-3);
    sc.growth = smp.real("growth", 3.0);
    sc.seed = static_cast<std::uint64_t>(smp.count("seed", 0, 0));
    sc.zero_tol = smp.real("zero_tol", 1e-9);
    smp.finish();
    validated(smp, [&] { sc.validate(); });

    Section bnd(doc, "boundary");
    if (const json* eps = bnd.raw("epsilon")) {
        if (eps->is_string()) {
            if (eps->get<std::string>() != "auto") bnd.fail("epsilon", "expected a number or \"auto\"");
        } else if (eps->is_number() && eps->get<double>() > 0.0) {
            cfg.boundary.epsilon = eps->get<double>();
        } else {
            bnd.fail("epsilon", "expected a positive number or \"auto\"");
        }
    }
    cfg.boundary.box_face_is_boundary = bnd.boolean("box_face_is_boundary", false);
    bnd.finish();

    Section fit(doc, "fit");
    if (const json* modes = fit.raw("modes")) {
        if (!modes->is_array() || modes->empty()) fit.fail("modes", "expected a non-empty array");
        cfg.fit_modes.clear();
        for (const json& m : *modes) {
            if (!m.is_string()) fit.fail("modes", "expected mode names");
            try {
                const FitMode mode = fit_mode_from_string(m.get<std::string>());
                for (FitMode seen : cfg.fit_modes) {
                    if (seen == mode) fit.fail("modes", "mode listed twice");
                }
                cfg.fit_modes.push_back(mode);
            } catch (const std::invalid_argument& e) {
                fit.fail("modes", e.what());
            }
        }
    }
    cfg.multi_count = static_cast<int>(fit.count("multi_count", 2, 2));
    FitConfig& fc = cfg.fit;
    fc.margin = fit.real("margin", 0.0);
    try {
        fc.objective = size_objective_from_string(fit.text("objective", "sample_count"));
    } catch (const std::invalid_argument& e) {
        fit.fail("objective", e.what());
    }
    fc.containment_tol = fit.real("containment_tol", 1e-3);
    fc.probes = static_cast<int>(fit.count("probes", 256, 1));
    fc.search.population = static_cast<int>(fit.count("population", 16, 1));
    fc.search.iterations = static_cast<int>(fit.count("iterations", 400, 1));
    fc.search.restarts = static_cast<int>(fit.count("restarts", 8, 1));
    fc.search.seed = static_cast<std::uint64_t>(fit.count("seed", 0, 0));
    fc.search.polish_sweeps = static_cast<int>(fit.count("polish_sweeps", 2, 0));
    fc.search.subsample = static_cast<std::size_t>(fit.count("subsample", 30000, 0));
    fc.search.scale_max = fit.real("scale_max", 10.0);
    const std::optional<Vec> vlo = fit.vec("volume_lower");
    const std::optional<Vec> vhi = fit.vec("volume_upper");
    if (vlo.has_value() != vhi.has_value()) {
        fit.fail(vlo ? "volume_lower" : "volume_upper", "volume_lower and volume_upper go together");
    }
    if (vlo) validated(fit, [&] { fc.volume_region = BoxSet(*vlo, *vhi); });
    fit.finish();
    for (FitMode m : cfg.fit_modes) validated(fit, [&] { cfg.fit_for(m).validate(); });

    Section sim(doc, "simulate");
    SimulateSection& ss = cfg.simulate;
    if (const json* starts = sim.raw("starts")) {
        if (!starts->is_array() || starts->empty()) sim.fail("starts", "expected an array of states");
        for (const json& s : *starts) ss.starts.push_back(sim.vec_of(s, "starts"));
    }
    ss.goal = sim.vec("goal").value_or(Vec::Zero(inst.model.n));
    for (const Vec& s : ss.starts) {
        if (s.size() != inst.model.n) sim.fail("starts", "every start needs " + std::to_string(inst.model.n) + " entries");
    }
    if (ss.goal.size() != inst.model.n) sim.fail("goal", "wrong dimension");
    ss.horizon = sim.real("horizon", 10.0);
    ss.dt = sim.real("dt", 0.01);
    ss.kp = sim.real("kp", 10.0);
    ss.spline_duration = sim.real("spline_duration", 0.0);
    ss.kappa = sim.real("kappa", 5.0);
    if (!(ss.kappa > 0.0)) sim.fail("kappa", "must be positive");
    if (std::optional<Vec> k = sim.vec("kappas")) {
        for (double v : *k) {
            if (!(v > 0.0)) sim.fail("kappas", "must be positive");
            ss.kappas.push_back(v);
        }
    }
    if (sim.has("relaxation")) {
        ss.relaxation = sim.real("relaxation", 0.0);
        if (!(*ss.relaxation > 0.0)) sim.fail("relaxation", "must be positive");
    }
    ss.step_correction = sim.boolean("step_correction", true);
    ss.require_safe_start = sim.boolean("require_safe_start", true);
    const std::string policy = sim.text("on_infeasible", "continue");
    if (policy != "continue" && policy != "stop") sim.fail("on_infeasible", "expected \"continue\" or \"stop\"");
    ss.stop_on_infeasible = policy == "stop";
    ss.adversarial_grid = static_cast<int>(sim.count("adversarial_grid", 20, 0));
    ss.unfiltered_demo = sim.boolean("unfiltered_demo", true);
    ss.goal_radius = sim.real("goal_radius", 0.5);
    sim.finish();
    if (!(ss.dt > 0.0)) sim.fail("dt", "must be positive");
    if (!(ss.horizon >= ss.dt)) sim.fail("horizon", "must be at least one step");
    if (!(ss.kp > 0.0)) sim.fail("kp", "must be positive");

    Section rep(doc, "report");
    cfg.report.verify_determinism = rep.boolean("verify_determinism", false);
    cfg.report.qp_checks = static_cast<int>(rep.count("qp_checks", 500, 0));
    rep.finish();

    Section out(doc, "output");
    cfg.output_dir = out.text("dir", "out");
    if (cfg.output_dir.empty()) out.fail("dir", "must not be empty");
    out.finish();
    return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what(), {});
    }
    return pipeline_config_from(parse_config(text));
}

json pipeline_config_json(const PipelineConfig& cfg) {
    json j;
    json params = json::object();
    for (const auto& [k, v] : cfg.system_params) params[k] = v;
    j["system"] = {{"name", cfg.system_name}, {"params", params}};
    const SamplingConfig& sc = cfg.sampling;
    j["sampling"] = {{"lower", vec_json(sc.bounds.lower())},
                     {"upper", vec_json(sc.bounds.upper())},
                     {"n_start", sc.n_start},
                     {"n_min", sc.n_min},
                     {"n_max", sc.n_max},
                     {"delta", sc.delta},
                     {"growth", sc.growth},
                     {"seed", sc.seed},
                     {"zero_tol", sc.zero_tol}};
    j["boundary"] = {{"epsilon", cfg.boundary.epsilon > 0.0 ? json(cfg.boundary.epsilon) : json("auto")},
                     {"box_face_is_boundary", cfg.boundary.box_face_is_boundary}};
    json modes = json::array();
    for (FitMode m : cfg.fit_modes) modes.push_back(to_string(m));
    const FitConfig& fc = cfg.fit;
    j["fit"] = {{"modes", modes},
                {"multi_count", cfg.multi_count},
                {"margin", fc.margin},
                {"objective", to_string(fc.objective)},
                {"containment_tol", fc.containment_tol},
                {"probes", fc.probes},
                {"population", fc.search.population},
                {"iterations", fc.search.iterations},
                {"restarts", fc.search.restarts},
                {"seed", fc.search.seed},
                {"polish_sweeps", fc.search.polish_sweeps},
                {"subsample", fc.search.subsample},
                {"scale_max", fc.search.scale_max}};
    if (fc.volume_region) {
        j["fit"]["volume_lower"] = vec_json(fc.volume_region->lower());
        j["fit"]["volume_upper"] = vec_json(fc.volume_region->upper());
    }
    const SimulateSection& ss = cfg.simulate;
    json starts = json::array();
    for (const Vec& s : ss.starts) starts.push_back(vec_json(s));
    j["simulate"] = {{"starts", starts},
                     {"goal", vec_json(ss.goal)},
                     {"horizon", ss.horizon},
                     {"dt", ss.dt},
                     {"kp", ss.kp},
                     {"spline_duration", ss.spline_duration},
                     {"kappa", ss.kappa},
                     {"kappas", ss.kappas},
                     {"relaxation", ss.relaxation ? json(*ss.relaxation) : json(nullptr)},
                     {"step_correction", ss.step_correction},
                     {"require_safe_start", ss.require_safe_start},
                     {"on_infeasible", ss.stop_on_infeasible ? "stop" : "continue"},
                     {"adversarial_grid", ss.adversarial_grid},
                     {"unfiltered_demo", ss.unfiltered_demo},
                     {"goal_radius", ss.goal_radius}};
    j["report"] = {{"verify_determinism", cfg.report.verify_determinism},
                   {"qp_checks", cfg.report.qp_checks}};
    j["output"] = {{"dir", cfg.output_dir}};
    return j;
}

}  // namespace cbfsyn
