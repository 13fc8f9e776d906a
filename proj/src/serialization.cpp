#include "cbfsyn/serialization.hpp"

#include "cbfsyn/rng.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace cbfsyn {

using nlohmann::json;

namespace {

json vec_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec json_vec(const json& a) {
    if (!a.is_array()) throw IntegrityError("expected a numeric array");
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw IntegrityError("expected a numeric array");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

json parse_line(const std::string& line, std::size_t line_no) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
    }
}

void append_vec(std::string& out, const Vec& v) {
    out += '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        append_real(out, v[i]);
    }
    out += ']';
}

}  // namespace

void append_real(std::string& out, double value) {
    if (!std::isfinite(value)) throw std::domain_error("cannot serialize a non-finite real");
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    out.append(buf.data(), res.ptr);
}

std::string format_real(double value) {
    std::string s;
    append_real(s, value);
    return s;
}

void Fnv1a::update(std::string_view bytes) {
    for (unsigned char c : bytes) {
        state_ ^= c;
        state_ *= 0x100000001b3ULL;
    }
}

std::string Fnv1a::hex() const {
    std::array<char, 17> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + 16, state_, 16);
    std::string s(buf.data(), res.ptr);
    return std::string(16 - s.size(), '0') + s;
}

std::string fnv1a_hex(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

std::string record_line(const SampleRecord& record) {
    std::string line = "{\"x\":";
    append_vec(line, record.state);
    line += ",\"class\":\"";
    line += to_string(record.cls);
    line += "\",\"residual\":";
    append_real(line, record.residual);
    line += '}';
    return line;
}

std::string sample_records_checksum(const SampleSet& s) {
    Fnv1a h;
    for (const SampleRecord& r : s.records) {
        h.update(record_line(r));
        h.update("\n");
    }
    return h.hex();
}

void write_samples(std::ostream& out, const SampleSet& s, const SampleFileMeta& meta) {
    json header;
    header["format"] = "cbfsyn-samples";
    header["version"] = 1;
    header["system"] = meta.system;
    header["system_params"] = json::object();
    for (const auto& [k, v] : meta.system_params) header["system_params"][k] = v;
    header["bounds"] = {{"lower", vec_json(s.bounds.lower())}, {"upper", vec_json(s.bounds.upper())}};
    header["seed"] = s.seed;
    header["rng"] = std::string(CounterRng::algorithm);
    header["zero_tol"] = s.zero_tol;
    header["n"] = s.records.size();
    header["n_feasible"] = s.tracker.n_feasible();
    json cps = json::array();
    for (const Checkpoint& c : s.tracker.history()) cps.push_back({{"n", c.n}, {"J", c.jaccard}});
    header["checkpoints"] = cps;
    header["converged"] = s.converged;
    header["config_digest"] = meta.config_digest;

    std::string body;
    body.reserve(s.records.size() * 64);
    Fnv1a h;
    for (const SampleRecord& r : s.records) {
        std::string line = record_line(r);
        line += '\n';
        h.update(line);
        body += line;
    }
    header["checksum"] = h.hex();
    out << header.dump() << '\n' << body;
}

LoadedSamples read_samples(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IntegrityError("sample file is empty");
    const json header = parse_line(line, 1);
    if (header.value("format", "") != "cbfsyn-samples") throw IntegrityError("not a sample file");
    if (header.value("version", 0) != 1) throw IntegrityError("unsupported sample file version");
    if (header.value("rng", "") != CounterRng::algorithm) {
        throw IntegrityError("sample file was produced by a different generator");
    }

    LoadedSamples out;
    SampleSet& s = out.set;
    try {
        out.meta.system = header.at("system").get<std::string>();
        for (const auto& [k, v] : header.at("system_params").items()) {
            out.meta.system_params[k] = v.get<double>();
        }
        out.meta.config_digest = header.at("config_digest").get<std::string>();
        s.bounds = BoxSet(json_vec(header.at("bounds").at("lower")),
                          json_vec(header.at("bounds").at("upper")));
        s.seed = header.at("seed").get<std::uint64_t>();
        s.zero_tol = header.at("zero_tol").get<double>();
        s.converged = header.at("converged").get<bool>();
        std::vector<Checkpoint> history;
        for (const json& c : header.at("checkpoints")) {
            history.push_back({c.at("n").get<std::size_t>(), c.at("J").get<double>()});
        }
        s.tracker.set_history(std::move(history));
        out.checksum = header.at("checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("sample header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw IntegrityError(std::string("sample header: ") + e.what());
    }

    const auto expected = header.at("n").get<std::size_t>();
    s.records.reserve(expected);
    Fnv1a h;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        h.update(line);
        h.update("\n");
        const json rec = parse_line(line, line_no);
        SampleRecord r;
        try {
            r.state = json_vec(rec.at("x"));
            r.cls = sample_class_from_string(rec.at("class").get<std::string>());
            r.residual = rec.at("residual").get<double>();
        } catch (const std::exception& e) {
            throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (r.state.size() != s.bounds.dim()) {
            throw IntegrityError("line " + std::to_string(line_no) + ": state dimension mismatch");
        }
        s.tracker.add_counts(1, r.cls == SampleClass::FeasibleZ0 ? 1 : 0);
        s.records.push_back(std::move(r));
    }
    if (s.records.size() != expected) throw IntegrityError("sample file is truncated");
    if (h.hex() != out.checksum) throw IntegrityError("sample file checksum mismatch");
    return out;
}

std::string boundary_checksum(const BoundarySet& b) {
    Fnv1a h;
    for (std::size_t i = 0; i < b.points.size(); ++i) {
        std::string line = "{\"x\":";
        append_vec(line, b.points[i]);
        line += ",\"index\":" + std::to_string(b.source_index[i]) + "}\n";
        h.update(line);
    }
    return h.hex();
}

void write_boundary(std::ostream& out, const BoundarySet& b) {
    json header;
    header["format"] = "cbfsyn-boundary";
    header["version"] = 1;
    header["epsilon"] = b.epsilon;
    header["normalized"] = true;
    header["box_face_is_boundary"] = b.box_face_is_boundary;
    header["source_checksum"] = b.source_checksum;
    header["count"] = b.points.size();
    header["empty_warning"] = b.empty_warning;
    header["checksum"] = boundary_checksum(b);
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < b.points.size(); ++i) {
        std::string line = "{\"x\":";
        append_vec(line, b.points[i]);
        line += ",\"index\":" + std::to_string(b.source_index[i]) + "}\n";
        out << line;
    }
}

BoundarySet read_boundary(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IntegrityError("boundary file is empty");
    const json header = parse_line(line, 1);
    if (header.value("format", "") != "cbfsyn-boundary") throw IntegrityError("not a boundary file");
    BoundarySet b;
    std::string checksum;
    std::size_t count = 0;
    try {
        b.epsilon = header.at("epsilon").get<double>();
        b.box_face_is_boundary = header.at("box_face_is_boundary").get<bool>();
        b.source_checksum = header.at("source_checksum").get<std::string>();
        b.empty_warning = header.at("empty_warning").get<bool>();
        count = header.at("count").get<std::size_t>();
        checksum = header.at("checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("boundary header: ") + e.what());
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json rec = parse_line(line, line_no);
        try {
            b.points.push_back(json_vec(rec.at("x")));
            b.source_index.push_back(rec.at("index").get<std::size_t>());
        } catch (const json::exception& e) {
            throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (b.points.size() != count) throw IntegrityError("boundary file is truncated");
    if (boundary_checksum(b) != checksum) throw IntegrityError("boundary file checksum mismatch");
    return b;
}

namespace {

json candidate_json(const CbfCandidate& c) {
    return {{"scale", vec_json(c.scale)}, {"shift", vec_json(c.shift)}, {"offset", c.offset}};
}

CbfCandidate json_candidate(const json& j) {
    CbfCandidate c;
    c.scale = json_vec(j.at("scale"));
    c.shift = json_vec(j.at("shift"));
    c.offset = j.at("offset").get<double>();
    c.validate();
    return c;
}

json fit_config_json(const FitConfig& cfg) {
    json j;
    j["mode"] = to_string(cfg.mode);
    j["count"] = cfg.count;
    j["margin"] = cfg.margin;
    j["objective"] = to_string(cfg.objective);
    j["containment_tol"] = cfg.containment_tol;
    j["probes"] = cfg.probes;
    j["search"] = {{"population", cfg.search.population},
                   {"iterations", cfg.search.iterations},
                   {"restarts", cfg.search.restarts},
                   {"seed", cfg.search.seed},
                   {"polish_sweeps", cfg.search.polish_sweeps},
                   {"subsample", cfg.search.subsample},
                   {"scale_max", cfg.search.scale_max}};
    if (cfg.volume_region) {
        j["volume_region"] = {{"lower", vec_json(cfg.volume_region->lower())},
                              {"upper", vec_json(cfg.volume_region->upper())}};
    }
    return j;
}

FitConfig json_fit_config(const json& j) {
    FitConfig cfg;
    cfg.mode = fit_mode_from_string(j.at("mode").get<std::string>());
    cfg.count = j.at("count").get<int>();
    cfg.margin = j.at("margin").get<double>();
    cfg.objective = size_objective_from_string(j.at("objective").get<std::string>());
    cfg.containment_tol = j.at("containment_tol").get<double>();
    cfg.probes = j.at("probes").get<int>();
    const json& s = j.at("search");
    cfg.search.population = s.at("population").get<int>();
    cfg.search.iterations = s.at("iterations").get<int>();
    cfg.search.restarts = s.at("restarts").get<int>();
    cfg.search.seed = s.at("seed").get<std::uint64_t>();
    cfg.search.polish_sweeps = s.at("polish_sweeps").get<int>();
    cfg.search.subsample = s.at("subsample").get<std::size_t>();
    cfg.search.scale_max = s.at("scale_max").get<double>();
    if (j.contains("volume_region")) {
        cfg.volume_region = BoxSet(json_vec(j["volume_region"].at("lower")),
                                   json_vec(j["volume_region"].at("upper")));
    }
    return cfg;
}

}  // namespace

std::string fit_result_json(const FitResult& r) {
    json j;
    j["format"] = "cbfsyn-fit";
    j["version"] = 1;
    j["mode"] = to_string(r.mode);
    j["feasible"] = r.feasible;
    j["candidates"] = json::array();
    for (const CbfCandidate& c : r.candidates) j["candidates"].push_back(candidate_json(c));
    j["objective_value"] = r.objective_value;
    const VerificationReport& v = r.verification;
    j["verification"] = {{"containment_fraction", v.containment_fraction},
                         {"boundary_cbf_feasible_fraction", v.boundary_cbf_feasible_fraction},
                         {"prop2_feasible_fraction", v.prop2_feasible_fraction},
                         {"in_set_samples", v.in_set_samples},
                         {"boundary_probes", v.boundary_probes},
                         {"warnings", v.warnings}};
    j["redundancy"] = json::array();
    for (const PairRedundancy& p : r.redundancy) {
        j["redundancy"].push_back({{"first", p.first},
                                   {"second", p.second},
                                   {"redundant", p.redundant},
                                   {"ratio", p.ratio}});
    }
    j["restart_values"] = r.restart_values;
    j["warnings"] = r.warnings;
    j["config_echo"] = fit_config_json(r.config);
    return j.dump(2) + "\n";
}

FitResult parse_fit_result(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IntegrityError(std::string("fit result: ") + e.what());
    }
    if (j.value("format", "") != "cbfsyn-fit") throw IntegrityError("not a fit result document");
    FitResult r;
    try {
        r.mode = fit_mode_from_string(j.at("mode").get<std::string>());
        r.feasible = j.at("feasible").get<bool>();
        for (const json& c : j.at("candidates")) r.candidates.push_back(json_candidate(c));
        r.objective_value = j.at("objective_value").get<double>();
        const json& v = j.at("verification");
        r.verification.containment_fraction = v.at("containment_fraction").get<double>();
        r.verification.boundary_cbf_feasible_fraction =
            v.at("boundary_cbf_feasible_fraction").get<double>();
        r.verification.prop2_feasible_fraction = v.at("prop2_feasible_fraction").get<double>();
        r.verification.in_set_samples = v.at("in_set_samples").get<std::size_t>();
        r.verification.boundary_probes = v.at("boundary_probes").get<std::size_t>();
        r.verification.warnings = v.at("warnings").get<std::vector<std::string>>();
        for (const json& p : j.at("redundancy")) {
            r.redundancy.push_back({p.at("first").get<int>(), p.at("second").get<int>(),
                                    p.at("redundant").get<bool>(), p.at("ratio").get<double>()});
        }
        r.restart_values = j.at("restart_values").get<std::vector<double>>();
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        r.config = json_fit_config(j.at("config_echo"));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("fit result: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw IntegrityError(std::string("fit result: ") + e.what());
    }
    if (r.candidates.empty()) throw IntegrityError("fit result has no candidates");
    const Eigen::Index n = r.candidates.front().scale.size();
    for (const CbfCandidate& c : r.candidates) {
        if (c.scale.size() != n) throw IntegrityError("fit result candidates differ in dimension");
    }
    return r;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace cbfsyn
