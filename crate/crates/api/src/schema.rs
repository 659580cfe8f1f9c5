//! Static description of the nine operations, their arguments and the
//! shapes they return. Served verbatim at `GET /api/schema`.

use serde_json::{json, Value as Json};

use crate::query::{Field, ParseError, Pos, TypeRef};

/// What a selectable field yields.
#[derive(Debug, Clone, Copy)]
pub enum Output {
    Scalar,
    Object(&'static ObjectType),
    /// A string map whose keys may be selected by name.
    OpenMap,
}

#[derive(Debug)]
pub struct FieldDef {
    pub name: &'static str,
    pub ty: &'static str,
    pub output: Output,
}

#[derive(Debug)]
pub struct ObjectType {
    pub name: &'static str,
    pub fields: &'static [FieldDef],
}

impl ObjectType {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug)]
pub struct ArgDef {
    pub name: &'static str,
    pub ty: &'static str,
    pub default: Option<&'static str>,
}

#[derive(Debug)]
pub struct OperationDef {
    pub name: &'static str,
    pub description: &'static str,
    pub args: &'static [ArgDef],
    pub returns: &'static str,
    pub output: Output,
}

impl OperationDef {
    pub fn arg(&self, name: &str) -> Option<&ArgDef> {
        self.args.iter().find(|a| a.name == name)
    }
}

const fn field(name: &'static str, ty: &'static str, output: Output) -> FieldDef {
    FieldDef { name, ty, output }
}

const fn arg(name: &'static str, ty: &'static str) -> ArgDef {
    ArgDef { name, ty, default: None }
}

const fn arg_or(name: &'static str, ty: &'static str, default: &'static str) -> ArgDef {
    ArgDef {
        name,
        ty,
        default: Some(default),
    }
}

pub static DOCUMENT_PARTS: ObjectType = ObjectType {
    name: "DocumentParts",
    fields: &[
        field("title", "String", Output::Scalar),
        field("abstract", "String", Output::Scalar),
        field("claims", "String", Output::Scalar),
        field("description", "String", Output::Scalar),
    ],
};

pub static DOCUMENT: ObjectType = ObjectType {
    name: "Document",
    fields: &[
        field("id", "String!", Output::Scalar),
        field("index", "String!", Output::Scalar),
        field("documentParts", "DocumentParts!", Output::Object(&DOCUMENT_PARTS)),
        field("metadata", "Metadata", Output::OpenMap),
        field("vector", "[Float!]", Output::Scalar),
    ],
};

pub static SEARCH_HIT: ObjectType = ObjectType {
    name: "SearchHit",
    fields: &[
        field("id", "String!", Output::Scalar),
        field("index", "String!", Output::Scalar),
        field("score", "Float!", Output::Scalar),
        field("documentParts", "DocumentParts!", Output::Object(&DOCUMENT_PARTS)),
        field("metadata", "Metadata", Output::OpenMap),
        field("vector", "[Float!]", Output::Scalar),
    ],
};

pub static ENCODED_DOCUMENT: ObjectType = ObjectType {
    name: "EncodedDocument",
    fields: &[
        field("id", "String!", Output::Scalar),
        field("vector", "[Float!]!", Output::Scalar),
    ],
};

pub static SIMILARITY_MATRIX: ObjectType = ObjectType {
    name: "SimilarityMatrix",
    fields: &[
        field("sourceIds", "[String!]!", Output::Scalar),
        field("targetIds", "[String!]!", Output::Scalar),
        field("metric", "Metric!", Output::Scalar),
        field("values", "[[Float!]!]!", Output::Scalar),
    ],
};

pub static OPERATIONS: [OperationDef; 9] = [
    OperationDef {
        name: "Document",
        description: "One stored document by index and id.",
        args: &[arg("index", "String!"), arg("id", "String!")],
        returns: "Document!",
        output: Output::Object(&DOCUMENT),
    },
    OperationDef {
        name: "Documents",
        description: "Several stored documents: by keyword (exact id match first, then keyword hits), by a list of ids in one index, or by a list of index/id keys. Id and key lookups keep input order and return null for absent documents.",
        args: &[
            arg("index", "String"),
            arg("keyword", "String"),
            arg("ids", "[String!]"),
            arg("keys", "[DocKeyInput!]"),
            arg_or("k", "Int", "10"),
        ],
        returns: "[Document]!",
        output: Output::Object(&DOCUMENT),
    },
    OperationDef {
        name: "searchDocuments",
        description: "BM25 keyword search over titles and abstracts, optionally within one index.",
        args: &[arg("index", "String"), arg("keyword", "String!"), arg_or("k", "Int", "10")],
        returns: "[SearchHit!]!",
        output: Output::Object(&SEARCH_HIT),
    },
    OperationDef {
        name: "encodeDocument",
        description: "Embedding of one document given as parts.",
        args: &[arg("data", "EncodeObject!")],
        returns: "[Float!]!",
        output: Output::Scalar,
    },
    OperationDef {
        name: "encodeDocuments",
        description: "Embeddings of several documents, in input order.",
        args: &[arg("data", "[EncodeObject!]!")],
        returns: "[EncodedDocument!]!",
        output: Output::Object(&ENCODED_DOCUMENT),
    },
    OperationDef {
        name: "similarityCalculation",
        description: "Metric matrix between stored documents; rows are sources, columns are targets.",
        args: &[
            arg("sources", "[DocKeyInput!]!"),
            arg("targets", "[DocKeyInput!]!"),
            arg_or("metric", "Metric", "cosine"),
        ],
        returns: "SimilarityMatrix!",
        output: Output::Object(&SIMILARITY_MATRIX),
    },
    OperationDef {
        name: "encodeDocumentAndSimilarityCalculation",
        description: "Encodes the given documents and compares them with each other, or with stored targets when given.",
        args: &[
            arg("data", "[EncodeObject!]!"),
            arg_or("metric", "Metric", "cosine"),
            arg("targets", "[DocKeyInput!]"),
        ],
        returns: "SimilarityMatrix!",
        output: Output::Object(&SIMILARITY_MATRIX),
    },
    OperationDef {
        name: "SimilaritySearch",
        description: "Cosine nearest neighbors of a stored document in its own index or in targetIndex. The document itself is never returned.",
        args: &[
            arg("index", "String!"),
            arg("id", "String!"),
            arg("targetIndex", "String"),
            arg_or("k", "Int", "10"),
        ],
        returns: "[SearchHit!]!",
        output: Output::Object(&SEARCH_HIT),
    },
    OperationDef {
        name: "embedDocumentAndSimilaritySearch",
        description: "Encodes a document given as parts and returns its cosine nearest neighbors in an index.",
        args: &[arg("data", "EncodeObject!"), arg("index", "String!"), arg_or("k", "Int", "10")],
        returns: "[SearchHit!]!",
        output: Output::Object(&SEARCH_HIT),
    },
];

pub const INPUT_TYPES: [(&str, &[(&str, &str)]); 3] = [
    ("EncodeObject", &[("id", "String"), ("parts", "[DocumentPartInput!]!")]),
    ("DocumentPartInput", &[("key", "PartKey!"), ("value", "String!")]),
    ("DocKeyInput", &[("index", "String!"), ("id", "String!")]),
];

pub const ENUMS: [(&str, &[&str]); 2] = [
    ("Metric", &["cosine", "l1", "l2"]),
    ("PartKey", &["title", "abstract", "claims", "description"]),
];

pub fn operation(name: &str) -> Option<&'static OperationDef> {
    OPERATIONS.iter().find(|op| op.name == name)
}

pub fn is_operation(name: &str) -> bool {
    operation(name).is_some()
}

/// Parses a type literal such as `[String!]!`.
pub fn parse_type(text: &str) -> TypeRef {
    let (inner, bang) = match text.strip_suffix('!') {
        Some(rest) => (rest, true),
        None => (text, false),
    };
    let base = match inner.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        Some(item) => TypeRef::List(Box::new(parse_type(item))),
        None => TypeRef::Named(inner.to_owned()),
    };
    if bang {
        TypeRef::NonNull(Box::new(base))
    } else {
        base
    }
}

pub fn is_known_input_type(name: &str) -> bool {
    matches!(name, "String" | "Int" | "Float" | "Boolean" | "ID")
        || INPUT_TYPES.iter().any(|(n, _)| *n == name)
        || ENUMS.iter().any(|(n, _)| *n == name)
}

/// Checks arguments and the selection set of `op` against the schema.
pub fn validate_operation(op: &Field) -> Result<(), ParseError> {
    let def = operation(&op.name).ok_or_else(|| ParseError::UnknownOperation {
        name: op.name.clone(),
        pos: op.pos,
    })?;
    for (i, a) in op.args.iter().enumerate() {
        if def.arg(&a.name).is_none() {
            return Err(ParseError::UnknownArgument {
                operation: def.name.into(),
                name: a.name.clone(),
                pos: a.pos,
            });
        }
        if op.args[..i].iter().any(|b| b.name == a.name) {
            return Err(ParseError::Syntax {
                pos: a.pos,
                message: format!("argument {:?} given twice", a.name),
            });
        }
    }
    for a in def.args {
        if a.ty.ends_with('!') && op.arg(a.name).is_none() {
            return Err(ParseError::MissingArgument {
                operation: def.name.into(),
                name: a.name.into(),
                pos: op.pos,
            });
        }
    }
    check_selection(def.output, &op.name, &op.selection, op.pos)
}

fn check_selection(output: Output, parent: &str, selection: &[Field], pos: Pos) -> Result<(), ParseError> {
    match output {
        Output::Scalar => match selection.first() {
            Some(f) => Err(ParseError::UnexpectedSelection {
                field: parent.into(),
                pos: f.pos,
            }),
            None => Ok(()),
        },
        Output::OpenMap => {
            for f in selection {
                if !f.args.is_empty() || !f.selection.is_empty() {
                    return Err(ParseError::UnexpectedSelection {
                        field: f.name.clone(),
                        pos: f.pos,
                    });
                }
            }
            Ok(())
        }
        Output::Object(ty) => {
            if selection.is_empty() {
                return Err(ParseError::MissingSelection {
                    field: parent.into(),
                    pos,
                });
            }
            for f in selection {
                let def = ty.field(&f.name).ok_or_else(|| ParseError::UnknownField {
                    parent: ty.name.into(),
                    name: f.name.clone(),
                    pos: f.pos,
                })?;
                if let Some(a) = f.args.first() {
                    return Err(ParseError::UnknownArgument {
                        operation: f.name.clone(),
                        name: a.name.clone(),
                        pos: a.pos,
                    });
                }
                check_selection(def.output, &f.name, &f.selection, f.pos)?;
            }
            Ok(())
        }
    }
}

fn object_json(ty: &ObjectType) -> Json {
    json!({
        "name": ty.name,
        "fields": ty.fields.iter().map(|f| json!({"name": f.name, "type": f.ty})).collect::<Vec<_>>(),
    })
}

/// The schema document.
pub fn schema_json() -> Json {
    let operations: Vec<Json> = OPERATIONS
        .iter()
        .map(|op| {
            json!({
                "name": op.name,
                "description": op.description,
                "arguments": op.args.iter().map(|a| json!({
                    "name": a.name,
                    "type": a.ty,
                    "default": a.default,
                })).collect::<Vec<_>>(),
                "returns": op.returns,
            })
        })
        .collect();
    let objects: Vec<Json> = [&DOCUMENT, &DOCUMENT_PARTS, &SEARCH_HIT, &ENCODED_DOCUMENT, &SIMILARITY_MATRIX]
        .into_iter()
        .map(object_json)
        .collect();
    let inputs: Vec<Json> = INPUT_TYPES
        .iter()
        .map(|(name, fields)| {
            json!({
                "name": name,
                "fields": fields.iter().map(|(n, t)| json!({"name": n, "type": t})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let enums: Vec<Json> = ENUMS
        .iter()
        .map(|(name, values)| json!({"name": name, "values": values}))
        .collect();
    json!({
        "operations": operations,
        "types": objects,
        "inputs": inputs,
        "enums": enums,
        "scalars": {"Metadata": "map of string keys to string values; keys may be selected individually"},
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;

    #[test]
    fn nine_distinct_operations() {
        let mut names: Vec<&str> = OPERATIONS.iter().map(|o| o.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 9);
    }

    #[test]
    fn argument_types_are_known() {
        fn base(t: &TypeRef) -> &str {
            match t {
                TypeRef::Named(n) => n,
                TypeRef::List(i) | TypeRef::NonNull(i) => base(i),
            }
        }
        for op in &OPERATIONS {
            for a in op.args {
                let t = parse_type(a.ty);
                assert_eq!(t.to_string(), a.ty);
                assert!(is_known_input_type(base(&t)), "{}", a.ty);
            }
        }
    }

    #[test]
    fn schema_document_lists_everything() {
        let s = schema_json();
        assert_eq!(s["operations"].as_array().unwrap().len(), 9);
        assert_eq!(s["operations"][0]["name"], "Document");
        assert_eq!(s["types"][0]["fields"][2]["name"], "documentParts");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = parse_query("{ Document(index: \"a\", id: \"b\") { documentParts { titel } } }").unwrap_err();
        assert!(matches!(err, ParseError::UnknownField { ref name, .. } if name == "titel"), "{err:?}");
    }

    #[test]
    fn argument_checks() {
        let err = parse_query("{ Document(index: \"a\") { id } }").unwrap_err();
        assert!(matches!(err, ParseError::MissingArgument { ref name, .. } if name == "id"));
        let err = parse_query("{ Document(index: \"a\", id: \"b\", foo: 1) { id } }").unwrap_err();
        assert!(matches!(err, ParseError::UnknownArgument { ref name, .. } if name == "foo"));
    }

    #[test]
    fn selection_shape_checks() {
        let err = parse_query("{ Document(index: \"a\", id: \"b\") }").unwrap_err();
        assert!(matches!(err, ParseError::MissingSelection { .. }));
        let err = parse_query("{ Document(index: \"a\", id: \"b\") { documentParts } }").unwrap_err();
        assert!(matches!(err, ParseError::MissingSelection { .. }));
        let err = parse_query("{ encodeDocument(data: {parts: []}) { id } }").unwrap_err();
        assert!(matches!(err, ParseError::UnexpectedSelection { .. }));
        assert!(parse_query("{ Document(index: \"a\", id: \"b\") { metadata { year venue } } }").is_ok());
        assert!(parse_query("{ Document(index: \"a\", id: \"b\") { metadata } }").is_ok());
    }
}
