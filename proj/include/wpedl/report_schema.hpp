// Copyright 2026 The WPEDL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "wpedl/error.hpp"

namespace wpedl {

/// JSON Schema (draft-07 subset) for the experiment report.
inline constexpr const char* kReportSchema = R"json({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "wpedl experiment report",
  "type": "object",
  "required": ["format", "name", "seed", "config_hash", "config", "labels", "samples", "averaging", "strategy",
               "weights_source", "classifiers", "fused", "ablation", "artifacts", "timings"],
  "additionalProperties": false,
  "properties": {
    "format": {"enum": ["wpedl-report/1"]},
    "name": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "config_hash": {"type": "string"},
    "config": {"type": "object"},
    "labels": {"type": "array", "minItems": 2, "items": {"type": "string"}},
    "samples": {
      "type": "object",
      "required": ["train", "validation", "test"],
      "additionalProperties": false,
      "properties": {
        "train": {"type": "integer", "minimum": 0},
        "validation": {"type": "integer", "minimum": 0},
        "test": {"type": "integer", "minimum": 1}
      }
    },
    "averaging": {"enum": ["micro", "macro"]},
    "strategy": {"enum": ["weighted_mean", "class_max"]},
    "weights_source": {"enum": ["validation", "file"]},
    "classifiers": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["id", "backend", "weight", "validation", "test"],
        "additionalProperties": false,
        "properties": {
          "id": {"type": "string"},
          "backend": {"enum": ["softmax", "cnn", "external"]},
          "weight": {"type": "number", "minimum": 0},
          "validation": {"type": ["object", "null"], "$ref": "#/definitions/score"},
          "test": {"$ref": "#/definitions/evaluation"}
        }
      }
    },
    "fused": {"$ref": "#/definitions/evaluation"},
    "ablation": {
      "type": "object",
      "required": ["rows", "warnings"],
      "additionalProperties": false,
      "properties": {
        "rows": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["subset", "accuracy", "precision", "recall", "f1", "auc"],
            "additionalProperties": false,
            "properties": {
              "subset": {"type": "array", "minItems": 1, "items": {"type": "string"}},
              "accuracy": {"$ref": "#/definitions/unit"},
              "precision": {"$ref": "#/definitions/unit"},
              "recall": {"$ref": "#/definitions/unit"},
              "f1": {"$ref": "#/definitions/unit"},
              "auc": {"$ref": "#/definitions/unit"}
            }
          }
        },
        "warnings": {"type": "array", "items": {"type": "string"}}
      }
    },
    "artifacts": {"type": "object", "additionalProperties": {"type": ["string", "array"]}},
    "timings": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}
  },
  "definitions": {
    "unit": {"type": "number", "minimum": 0, "maximum": 1},
    "score": {
      "type": "object",
      "required": ["precision", "recall", "f1", "auc", "accuracy", "averaging"],
      "additionalProperties": false,
      "properties": {
        "precision": {"$ref": "#/definitions/unit"},
        "recall": {"$ref": "#/definitions/unit"},
        "f1": {"$ref": "#/definitions/unit"},
        "auc": {"$ref": "#/definitions/unit"},
        "accuracy": {"$ref": "#/definitions/unit"},
        "averaging": {"enum": ["micro", "macro"]}
      }
    },
    "evaluation": {
      "type": "object",
      "required": ["samples", "labels", "confusion_matrix", "averaged", "per_class", "notes"],
      "additionalProperties": false,
      "properties": {
        "samples": {"type": "integer", "minimum": 1},
        "labels": {"type": "array", "items": {"type": "string"}},
        "confusion_matrix": {
          "type": "array",
          "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}
        },
        "averaged": {"$ref": "#/definitions/score"},
        "per_class": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["label", "precision", "recall", "f1", "auc"],
            "additionalProperties": false,
            "properties": {
              "label": {"type": "string"},
              "precision": {"$ref": "#/definitions/unit"},
              "recall": {"$ref": "#/definitions/unit"},
              "f1": {"$ref": "#/definitions/unit"},
              "auc": {"type": ["number", "null"], "minimum": 0, "maximum": 1}
            }
          }
        },
        "notes": {"type": "array", "items": {"type": "string"}}
      }
    }
  }
})json";

namespace detail {

inline bool json_has_type(const nlohmann::json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  if (t == "number") return v.is_number();
  return false;
}

inline void validate_node(const nlohmann::json& v, const nlohmann::json& schema, const nlohmann::json& root,
                          const std::string& at) {
  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_array()) {
      for (const auto& one : t) ok = ok || json_has_type(v, one.get<std::string>());
    } else {
      ok = json_has_type(v, t.get<std::string>());
    }
    if (!ok) fail(ErrorCode::SchemaViolation, at + ": expected type " + t.dump());
  }
  if (v.is_null() && schema.contains("type")) return;
  if (schema.contains("$ref")) {
    const std::string ref = schema.at("$ref").get<std::string>();
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) fail(ErrorCode::SchemaViolation, "unsupported $ref " + ref);
    validate_node(v, root.at("definitions").at(ref.substr(prefix.size())), root, at);
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema.at("enum")) found = found || e == v;
    if (!found) fail(ErrorCode::SchemaViolation, at + ": value " + v.dump() + " not allowed");
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(ErrorCode::SchemaViolation, at + ": non-finite number");
    if (schema.contains("minimum") && x < schema.at("minimum").get<double>())
      fail(ErrorCode::SchemaViolation, at + ": below minimum");
    if (schema.contains("maximum") && x > schema.at("maximum").get<double>())
      fail(ErrorCode::SchemaViolation, at + ": above maximum");
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema.at("minItems").get<std::size_t>())
      fail(ErrorCode::SchemaViolation, at + ": too few items");
    if (schema.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i)
        validate_node(v[i], schema.at("items"), root, at + "[" + std::to_string(i) + "]");
  }
  if (v.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema.at("required"))
        if (!v.contains(key.get<std::string>()))
          fail(ErrorCode::SchemaViolation, at + ": missing '" + key.get<std::string>() + "'");
    const auto props = schema.value("properties", nlohmann::json::object());
    for (const auto& [key, value] : v.items()) {
      const std::string child = at + "." + key;
      if (props.contains(key)) {
        validate_node(value, props.at(key), root, child);
      } else if (schema.contains("additionalProperties")) {
        const auto& extra = schema.at("additionalProperties");
        if (extra.is_boolean()) {
          if (!extra.get<bool>()) fail(ErrorCode::SchemaViolation, at + ": unexpected field '" + key + "'");
        } else {
          validate_node(value, extra, root, child);
        }
      }
    }
  }
}

}  // namespace detail

/// Validates `doc` against a schema in the subset used by kReportSchema.
inline void validate_against(const nlohmann::json& doc, const nlohmann::json& schema) {
  detail::validate_node(doc, schema, schema, "$");
}

inline const nlohmann::json& report_schema() {
  static const nlohmann::json schema = nlohmann::json::parse(kReportSchema);
  return schema;
}

inline void validate_report(const nlohmann::json& report) { validate_against(report, report_schema()); }

}  // namespace wpedl
