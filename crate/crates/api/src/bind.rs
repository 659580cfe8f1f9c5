//! Variable binding: substitutes `$var` references with request values and
//! type-checks every argument against the schema.

use serde_json::{Map, Number, Value as Json};
use thiserror::Error;

use crate::query::{Field, Pos, QueryAst, TypeRef, Value};
use crate::schema::{self, ENUMS, INPUT_TYPES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BindError {
    #[error("required variable ${name} was not provided")]
    MissingVariable { name: String, pos: Pos },
    #[error("variable ${name} is used but not declared")]
    UndefinedVariable { name: String, pos: Pos },
    #[error("variable ${name} is declared twice")]
    DuplicateVariable { name: String, pos: Pos },
    #[error("unknown type {name:?} for variable ${variable}")]
    UnknownType { variable: String, name: String, pos: Pos },
    #[error("type mismatch for {path}: {message}")]
    TypeMismatch { path: String, message: String, pos: Pos },
}

impl BindError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingVariable { .. } => "MISSING_VARIABLE",
            Self::UndefinedVariable { .. } => "UNDEFINED_VARIABLE",
            Self::DuplicateVariable { .. } => "DUPLICATE_VARIABLE",
            Self::UnknownType { .. } => "UNKNOWN_TYPE",
            Self::TypeMismatch { .. } => "TYPE_MISMATCH",
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            Self::MissingVariable { pos, .. }
            | Self::UndefinedVariable { pos, .. }
            | Self::DuplicateVariable { pos, .. }
            | Self::UnknownType { pos, .. }
            | Self::TypeMismatch { pos, .. } => *pos,
        }
    }
}

/// An operation with every argument resolved to a JSON value.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRequest {
    pub operation: String,
    /// Supplied or defaulted arguments; absent optional ones are left out.
    pub args: Map<String, Json>,
    pub selection: Vec<Field>,
    pub warnings: Vec<String>,
}

impl BoundRequest {
    pub fn arg(&self, name: &str) -> Option<&Json> {
        self.args.get(name)
    }
}

fn base_name(t: &TypeRef) -> &str {
    match t {
        TypeRef::Named(n) => n,
        TypeRef::List(inner) | TypeRef::NonNull(inner) => base_name(inner),
    }
}

fn kind(v: &Json) -> &'static str {
    match v {
        Json::Null => "null",
        Json::Bool(_) => "boolean",
        Json::Number(_) => "number",
        Json::String(_) => "string",
        Json::Array(_) => "list",
        Json::Object(_) => "object",
    }
}

/// Checks `v` against `ty`; the error names the offending sub-path.
pub fn conforms(v: &Json, ty: &TypeRef, path: &str) -> Result<(), (String, String)> {
    let mismatch = |path: &str, want: &str| Err((path.to_owned(), format!("expected {want}, found {}", kind(v))));
    match ty {
        TypeRef::NonNull(inner) => {
            if v.is_null() {
                return mismatch(path, &ty.to_string());
            }
            conforms(v, inner, path)
        }
        _ if v.is_null() => Ok(()),
        TypeRef::List(inner) => match v {
            Json::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    conforms(item, inner, &format!("{path}[{i}]"))?;
                }
                Ok(())
            }
            _ => mismatch(path, &ty.to_string()),
        },
        TypeRef::Named(name) => match name.as_str() {
            "String" | "ID" | "Metric" if v.is_string() => Ok(()),
            "Int" if v.as_i64().is_some() => Ok(()),
            "Float" if v.is_number() => Ok(()),
            "Boolean" if v.is_boolean() => Ok(()),
            "String" | "ID" | "Metric" | "Int" | "Float" | "Boolean" => mismatch(path, name),
            other => {
                if let Some((_, values)) = ENUMS.iter().find(|(n, _)| *n == other) {
                    return match v.as_str() {
                        Some(s) if values.contains(&s) => Ok(()),
                        Some(s) => Err((path.to_owned(), format!("{s:?} is not one of {values:?}"))),
                        None => mismatch(path, other),
                    };
                }
                let Some((_, fields)) = INPUT_TYPES.iter().find(|(n, _)| *n == other) else {
                    return Err((path.to_owned(), format!("unknown type {other}")));
                };
                let Json::Object(obj) = v else {
                    return mismatch(path, other);
                };
                for key in obj.keys() {
                    if !fields.iter().any(|(f, _)| f == key) {
                        return Err((format!("{path}.{key}"), format!("{other} has no field {key:?}")));
                    }
                }
                for (f, t) in fields.iter() {
                    let fv = obj.get(*f).unwrap_or(&Json::Null);
                    conforms(fv, &schema::parse_type(t), &format!("{path}.{f}"))?;
                }
                Ok(())
            }
        },
    }
}

fn literal_to_json(v: &Value, vars: &Map<String, Json>, declared: &[&str], pos: Pos) -> Result<Json, BindError> {
    Ok(match v {
        Value::Variable(name) => {
            if !declared.contains(&name.as_str()) {
                return Err(BindError::UndefinedVariable {
                    name: name.clone(),
                    pos,
                });
            }
            vars.get(name).cloned().unwrap_or(Json::Null)
        }
        Value::String(s) | Value::Enum(s) => Json::String(s.clone()),
        Value::Int(i) => Json::from(*i),
        Value::Float(x) => match Number::from_f64(*x) {
            Some(n) => Json::Number(n),
            None => {
                return Err(BindError::TypeMismatch {
                    path: "literal".into(),
                    message: format!("{x} is not a finite number"),
                    pos,
                })
            }
        },
        Value::Bool(b) => Json::Bool(*b),
        Value::Null => Json::Null,
        Value::List(items) => Json::Array(
            items
                .iter()
                .map(|i| literal_to_json(i, vars, declared, pos))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(fields) => {
            let mut m = Map::new();
            for (k, fv) in fields {
                m.insert(k.clone(), literal_to_json(fv, vars, declared, pos)?);
            }
            Json::Object(m)
        }
    })
}

fn default_value(text: &str) -> Json {
    serde_json::from_str(text).unwrap_or_else(|_| Json::String(text.to_owned()))
}

/// Resolves the variables of `ast` from `variables` and type-checks the
/// resulting arguments. Unused extra variables only produce warnings.
pub fn bind_variables(ast: &QueryAst, variables: &Map<String, Json>) -> Result<BoundRequest, BindError> {
    let mut warnings = Vec::new();
    let mut values = Map::new();
    let mut declared: Vec<&str> = Vec::new();
    for decl in &ast.variables {
        if declared.contains(&decl.name.as_str()) {
            return Err(BindError::DuplicateVariable {
                name: decl.name.clone(),
                pos: decl.pos,
            });
        }
        declared.push(&decl.name);
        let base = base_name(&decl.ty);
        if !schema::is_known_input_type(base) {
            return Err(BindError::UnknownType {
                variable: decl.name.clone(),
                name: base.to_owned(),
                pos: decl.pos,
            });
        }
        let value = match (variables.get(&decl.name), &decl.default) {
            (Some(v), _) => v.clone(),
            (None, Some(d)) => literal_to_json(d, &Map::new(), &[], decl.pos)?,
            (None, None) if decl.ty.is_non_null() => {
                return Err(BindError::MissingVariable {
                    name: decl.name.clone(),
                    pos: decl.pos,
                })
            }
            (None, None) => Json::Null,
        };
        conforms(&value, &decl.ty, &format!("${}", decl.name)).map_err(|(path, message)| BindError::TypeMismatch {
            path,
            message,
            pos: decl.pos,
        })?;
        values.insert(decl.name.clone(), value);
    }
    for name in variables.keys() {
        if !declared.contains(&name.as_str()) {
            warnings.push(format!("variable ${name} is not declared and was ignored"));
        }
    }

    let op = &ast.operation;
    let def = schema::operation(&op.name).expect("operation validated at parse time");
    let mut args = Map::new();
    for a in def.args {
        let given = op.arg(a.name);
        let pos = given.map_or(op.pos, |g| g.pos);
        let mut value = match given {
            Some(g) => literal_to_json(&g.value, &values, &declared, g.pos)?,
            None => Json::Null,
        };
        if value.is_null() {
            if let Some(d) = a.default {
                value = default_value(d);
            }
        }
        conforms(&value, &schema::parse_type(a.ty), a.name).map_err(|(path, message)| BindError::TypeMismatch {
            path,
            message,
            pos,
        })?;
        if !value.is_null() {
            args.insert(a.name.to_owned(), value);
        }
    }
    Ok(BoundRequest {
        operation: op.name.clone(),
        args,
        selection: op.selection.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use serde_json::json;

    const PARAMETERIZED: &str = r#"
query Documents($index: String!, $keyword: String!) {
  Documents(index: $index, keyword: $keyword) {
    id
    documentParts {
      title
    }
    vector
  }
}
"#;

    fn vars(v: Json) -> Map<String, Json> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn batch_example_variables_bind() {
        let ast = parse_query(PARAMETERIZED).unwrap();
        for (kw, idx) in [("EP19164094B1", "epo_cos"), ("20130226771", "uspto_cos")] {
            let b = bind_variables(&ast, &vars(json!({"keyword": kw, "index": idx}))).unwrap();
            assert_eq!(b.operation, "Documents");
            assert_eq!(b.arg("keyword"), Some(&json!(kw)));
            assert_eq!(b.arg("index"), Some(&json!(idx)));
            assert_eq!(b.arg("k"), Some(&json!(10)));
            assert!(b.warnings.is_empty());
        }
    }

    #[test]
    fn missing_required_variable() {
        let ast = parse_query(PARAMETERIZED).unwrap();
        let err = bind_variables(&ast, &vars(json!({"index": "epo_cos"}))).unwrap_err();
        assert!(matches!(err, BindError::MissingVariable { ref name, .. } if name == "keyword"));
    }

    #[test]
    fn extra_variable_warns() {
        let ast = parse_query(PARAMETERIZED).unwrap();
        let b = bind_variables(&ast, &vars(json!({"index": "epo_cos", "keyword": "x", "extra": 1}))).unwrap();
        assert_eq!(b.warnings.len(), 1);
        assert!(b.warnings[0].contains("$extra"));
    }

    #[test]
    fn type_mismatch() {
        let ast = parse_query(PARAMETERIZED).unwrap();
        let err = bind_variables(&ast, &vars(json!({"index": 3, "keyword": "x"}))).unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { ref path, .. } if path == "$index"));

        let ast = parse_query(r#"{ Documents(index: "a", keyword: "b", k: "ten") { id } }"#).unwrap();
        let err = bind_variables(&ast, &Map::new()).unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { ref path, .. } if path == "k"));
    }

    #[test]
    fn undeclared_reference() {
        let ast = parse_query(r#"{ Document(index: $i, id: "b") { id } }"#).unwrap();
        let err = bind_variables(&ast, &vars(json!({"i": "x"}))).unwrap_err();
        assert!(matches!(err, BindError::UndefinedVariable { ref name, .. } if name == "i"));
    }

    #[test]
    fn encode_object_variable() {
        let ast = parse_query("query encodeDocument($data: EncodeObject) {\n  encodeDocument(data: $data)\n}").unwrap();
        let data = json!({"data": {"id": "ID", "parts": [
            {"key": "title", "value": "Airbags"},
            {"key": "abstract", "value": "Airbags are (...) crash."}
        ]}});
        let b = bind_variables(&ast, &vars(data.clone())).unwrap();
        assert_eq!(b.arg("data"), Some(&data["data"]));

        let bad = json!({"data": {"parts": [{"key": "preamble", "value": "x"}]}});
        let err = bind_variables(&ast, &vars(bad)).unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { ref path, .. } if path == "$data.parts[0].key"));

        let err = bind_variables(&ast, &Map::new()).unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { ref path, .. } if path == "data"));
    }

    #[test]
    fn defaults_and_enum_literals() {
        let ast = parse_query(
            r#"query Q($k: Int = 3) { similarityCalculation(sources: [{index: "a_cos", id: "1"}], targets: [], metric: l2) { values } }"#,
        )
        .unwrap();
        let b = bind_variables(&ast, &Map::new()).unwrap();
        assert_eq!(b.arg("metric"), Some(&json!("l2")));
        assert_eq!(b.arg("sources"), Some(&json!([{"index": "a_cos", "id": "1"}])));
        let ast = parse_query(r#"{ similarityCalculation(sources: [], targets: []) { values } }"#).unwrap();
        assert_eq!(bind_variables(&ast, &Map::new()).unwrap().arg("metric"), Some(&json!("cosine")));
    }

    #[test]
    fn unknown_variable_type() {
        let ast = parse_query(r#"query Q($i: Strin) { Document(index: $i, id: "b") { id } }"#).unwrap();
        assert!(matches!(bind_variables(&ast, &Map::new()), Err(BindError::UnknownType { .. })));
    }
}
