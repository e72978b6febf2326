#pragma once

#include <string>

#include <json.hpp>

#include "choiceset/estimator.hpp"
#include "choiceset/model.hpp"
#include "choiceset/montecarlo.hpp"
#include "choiceset/spectral.hpp"
#include "choiceset/tensor.hpp"

namespace choiceset {

using Json = nlohmann::ordered_json;

/// {"Pyd": Y x d rows, "Pd": [...], "tie_F_across_t": bool}. Unknown keys and
/// invalid designs throw DomainError naming the field.
Json to_json(const DGPSpec& dgp);
DGPSpec dgp_from_json(const Json& j);

/// Flat row-major probabilities plus, per mode, the choice tuple behind every
/// index so the file can be read without knowing the encoding.
Json to_json(const JointChoiceTensor& tensor);
JointChoiceTensor tensor_from_json(const Json& j);

/// Menus as sorted 1-based alternative lists, m, and F by period (Y x d rows).
Json to_json(const MixtureEstimate& est);
MixtureEstimate estimate_from_json(const Json& j);

/// Either a DGPSpec document or a mixture document as written by to_json
/// for MixtureEstimate. DGPSpecs expand to `num_periods` periods.
MixtureModel model_from_json(const Json& j, int num_periods = 3);

Json to_json(const FitConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw DomainError.
FitConfig fit_config_from_json(const Json& j);

Json to_json(const RankReport& rank);
Json to_json(const LinearIndependenceReport& report);
Json to_json(const AssumptionReport& report);
/// Wall-clock and thread-count fields are left out so reruns compare equal.
Json to_json(const MCReport& report);

/// Throws DomainError if `j` is not an object or has a key outside `allowed`.
void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

/// Reads a JSON file; throws ParseError with the path on failure.
Json read_json_file(const std::string& path);
/// Pretty-printed; doubles round-trip exactly.
void write_json_file(const std::string& path, const Json& j);

}  // namespace choiceset
