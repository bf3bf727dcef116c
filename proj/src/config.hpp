#pragma once

#include <string>

#include "json.hpp"

#include "eval.hpp"
#include "trainer.hpp"

namespace catface {

// Parses a config document: JSON when the first non-space character is '{',
// otherwise "dotted.key = value" lines ('#' starts a comment). Values on the
// text form are parsed as JSON scalars/arrays where possible, else kept as
// strings, and dotted keys build nested objects.
nlohmann::json parse_config_text(const std::string& text);
nlohmann::json load_config_file(const std::string& path);

// One "dotted.key=value" assignment applied on top of a parsed document.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Rejects top-level keys outside the known section names.
void check_sections(const nlohmann::json& doc);

// Section decoders. Every decoder starts from defaults (or the named
// preset), applies known keys, and rejects unknown ones by name.
ModelConfig model_from_json(const nlohmann::json& j);
DatasetConfig dataset_from_json(const nlohmann::json& j);
DegradationConfig degradation_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);
EvalConfig eval_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const ModelConfig& c);

const char* distill_name(DistillKind k);

}  // namespace catface
