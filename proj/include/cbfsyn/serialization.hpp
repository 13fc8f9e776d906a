#pragma once

#include "cbfsyn/boundary.hpp"
#include "cbfsyn/fitter.hpp"
#include "cbfsyn/sampler.hpp"
#include "cbfsyn/system.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cbfsyn {

/// Raised when a persisted artifact fails its checksum or structural validation.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal that parses back to the same double.
std::string format_real(double value);
void append_real(std::string& out, double value);

class Fnv1a {
public:
    void update(std::string_view bytes);
    std::uint64_t value() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string fnv1a_hex(std::string_view bytes);

// Sample files: one JSON header line, then one JSON object per record.

struct SampleFileMeta {
    std::string system;
    ParamTable system_params;
    std::string config_digest;
};

std::string record_line(const SampleRecord& record);
std::string sample_records_checksum(const SampleSet& s);

void write_samples(std::ostream& out, const SampleSet& s, const SampleFileMeta& meta);

struct LoadedSamples {
    SampleSet set;
    SampleFileMeta meta;
    std::string checksum;
};

/// Throws IntegrityError when the records do not hash to the header checksum.
LoadedSamples read_samples(std::istream& in);

// Boundary files: header {epsilon, normalized, source_checksum, ...}, then {"x": [...]} lines.

std::string boundary_checksum(const BoundarySet& b);
void write_boundary(std::ostream& out, const BoundarySet& b);
BoundarySet read_boundary(std::istream& in);

// Fit results: one pretty-printed JSON document, the simulator's input.

std::string fit_result_json(const FitResult& r);
/// Restores candidates, objective, verification, redundancy flags, warnings and the config echo.
FitResult parse_fit_result(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace cbfsyn
