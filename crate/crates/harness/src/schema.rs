//! Validation against the shipped JSON schemas.
//!
//! Supports the keyword subset those schemas use: `type`, `enum`, `const`,
//! `properties`, `required`, `additionalProperties: false`, `items`,
//! `minItems`/`maxItems`, `minimum`/`maximum`/`exclusiveMinimum`, `oneOf`
//! and `$ref` to a sibling schema file.

use serde_json::Value;

use crate::config::CONFIG_SCHEMA;
use crate::report::REPORT_SCHEMA;

fn sibling(name: &str) -> Option<&'static str> {
    match name {
        "experiment_config.schema.json" => Some(CONFIG_SCHEMA),
        "run_report.schema.json" => Some(REPORT_SCHEMA),
        _ => None,
    }
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).expect("shipped schemas are valid JSON")
}

pub fn config_schema() -> Value {
    parse(CONFIG_SCHEMA)
}

pub fn report_schema() -> Value {
    parse(REPORT_SCHEMA)
}

/// Every violation, each prefixed with its JSON pointer.
pub fn validate(value: &Value, schema: &Value) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    check(value, schema, "", &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "null" => value.is_null(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.as_f64().is_some_and(|x| x.fract() == 0.0),
        _ => false,
    }
}

fn check(value: &Value, schema: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(s) = schema.as_object() else {
        return;
    };
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        match sibling(r) {
            Some(text) => check(value, &parse(text), at, errors),
            None => errors.push(format!("{at}: unresolvable $ref {r}")),
        }
    }
    if let Some(ty) = s.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(value, t),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(value, t)),
            _ => true,
        };
        if !ok {
            errors.push(format!("{at}: expected type {ty}, got {value}"));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if value != c {
            errors.push(format!("{at}: expected {c}, got {value}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(value) {
            errors.push(format!("{at}: {value} is not one of {}", Value::Array(options.clone())));
        }
    }
    if let Some(x) = value.as_f64() {
        let bound = |k: &str| s.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|m| x < m)
            || bound("maximum").is_some_and(|m| x > m)
            || bound("exclusiveMinimum").is_some_and(|m| x <= m)
        {
            errors.push(format!("{at}: {x} out of range"));
        }
    }
    if let Some(items) = value.as_array() {
        let len = items.len() as u64;
        if s.get("minItems").and_then(Value::as_u64).is_some_and(|m| len < m)
            || s.get("maxItems").and_then(Value::as_u64).is_some_and(|m| len > m)
        {
            errors.push(format!("{at}: array length {len} out of range"));
        }
        if let Some(item_schema) = s.get("items") {
            for (i, it) in items.iter().enumerate() {
                check(it, item_schema, &format!("{at}/{i}"), errors);
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(req)) = s.get("required") {
            for k in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(k) {
                    errors.push(format!("{at}: missing required field '{k}'"));
                }
            }
        }
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(v, sub, &format!("{at}/{k}"), errors),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unknown field '{k}'"))
                }
                None => {}
            }
        }
    }
    if let Some(Value::Array(options)) = s.get("oneOf") {
        let matching = options
            .iter()
            .filter(|o| {
                let mut sub = Vec::new();
                check(value, o, at, &mut sub);
                sub.is_empty()
            })
            .count();
        if matching != 1 {
            errors.push(format!("{at}: matches {matching} alternatives of oneOf, expected exactly 1"));
        }
    }
}
