//! The facts file format: one line per entity, relationship, or attribute.
//!
//! ```text
//! # comment, blank lines ignored
//! E <id> <kind> <object_id|-> <class_id|-> <declared_module> <status|->
//! R <rel_type> <src_id> <dst_id> [weight]
//! A <entity_id> <name> <value>
//! ```
//!
//! Fields are whitespace-separated; `#` starts a comment anywhere on a line.
//! The two coordinate columns of an `E` line name the *containing* object
//! and class. Slots at or below the entity's own kind are written `-`: an
//! object carries `- -`, a class carries its object and `-`, a method
//! carries both. The entity's own id fills the slot of its own kind. A `-`
//! status means `planned`.
//!
//! Record order carries no meaning for `E` lines (entities end up sorted by
//! id either way). Relationship and attribute order is preserved. Trailing
//! extra fields are an error so that column drift fails loudly instead of
//! being silently ignored.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::model::{
    validate_graph, Entity, EntityCoordinate, EntityStatus, RelationKind, Relationship,
    SoftwareGraph, Violation,
};

/// A numeric measurement attached to one entity, e.g. lines of code.
#[derive(Debug, Clone, PartialEq)]
pub struct UserAttribute {
    pub entity_id: String,
    pub name: String,
    pub value: f64,
}

/// Result of parsing a facts file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFacts {
    pub graph: SoftwareGraph,
    pub attributes: Vec<UserAttribute>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {kind}")]
    Line { line: usize, kind: LineError },
    /// A problem that spans lines, currently only part-edge cycles.
    #[error("{0}")]
    Invariant(Violation),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LineError {
    #[error("`{tag}` record needs {expected} fields, found {found}")]
    FieldCount {
        tag: char,
        expected: &'static str,
        found: usize,
    },
    #[error("unknown record tag `{0}`")]
    UnknownTag(String),
    #[error("unknown entity kind `{0}`")]
    UnknownKind(String),
    #[error("{0}")]
    UnknownStatus(String),
    #[error("{0}")]
    UnknownRelType(String),
    #[error("{kind} `{id}` must have coordinate columns `{expected}`")]
    Coordinate {
        kind: &'static str,
        id: String,
        expected: &'static str,
    },
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("non-finite value `{0}`")]
    NonFinite(String),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("`{kind}` relationship may not be a self-loop on `{id}`")]
    SelfLoop { kind: RelationKind, id: String },
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),
    #[error("duplicate attribute `{name}` for entity `{entity}`")]
    DuplicateAttribute { entity: String, name: String },
    #[error("relationship endpoint `{0}` is not a declared entity")]
    DanglingEndpoint(String),
    #[error("attribute refers to undeclared entity `{0}`")]
    UnknownAttributeEntity(String),
}

/// Line-tagged records before any cross-line checks.
struct Records {
    entities: Vec<(usize, Entity)>,
    relationships: Vec<(usize, Relationship)>,
    attributes: Vec<(usize, UserAttribute)>,
}

fn line_err(line: usize, kind: LineError) -> ParseError {
    ParseError::Line { line, kind }
}

fn parse_f64(line: usize, token: &str) -> Result<f64, ParseError> {
    let v: f64 = token
        .parse()
        .map_err(|_| line_err(line, LineError::InvalidNumber(token.to_string())))?;
    if !v.is_finite() {
        return Err(line_err(line, LineError::NonFinite(token.to_string())));
    }
    Ok(v)
}

fn opt_field(token: &str) -> Option<&str> {
    if token == "-" {
        None
    } else {
        Some(token)
    }
}

fn parse_records(text: &str) -> Result<Records, ParseError> {
    let mut records = Records {
        entities: Vec::new(),
        relationships: Vec::new(),
        attributes: Vec::new(),
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        match fields[0] {
            "E" => {
                if fields.len() != 7 {
                    return Err(line_err(
                        line,
                        LineError::FieldCount {
                            tag: 'E',
                            expected: "7",
                            found: fields.len(),
                        },
                    ));
                }
                let id = fields[1].to_string();
                let object_col = opt_field(fields[3]);
                let class_col = opt_field(fields[4]);
                let coordinate = match fields[2] {
                    "object" => match (object_col, class_col) {
                        (None, None) => EntityCoordinate::Object {
                            object_id: id.clone(),
                        },
                        _ => {
                            return Err(line_err(
                                line,
                                LineError::Coordinate {
                                    kind: "object",
                                    id,
                                    expected: "- -",
                                },
                            ))
                        }
                    },
                    "class" => match (object_col, class_col) {
                        (Some(object_id), None) => EntityCoordinate::Class {
                            object_id: object_id.to_string(),
                            class_id: id.clone(),
                        },
                        _ => {
                            return Err(line_err(
                                line,
                                LineError::Coordinate {
                                    kind: "class",
                                    id,
                                    expected: "<object_id> -",
                                },
                            ))
                        }
                    },
                    "method" => match (object_col, class_col) {
                        (Some(object_id), Some(class_id)) => EntityCoordinate::Method {
                            object_id: object_id.to_string(),
                            class_id: class_id.to_string(),
                            method_id: id.clone(),
                        },
                        _ => {
                            return Err(line_err(
                                line,
                                LineError::Coordinate {
                                    kind: "method",
                                    id,
                                    expected: "<object_id> <class_id>",
                                },
                            ))
                        }
                    },
                    other => {
                        return Err(line_err(line, LineError::UnknownKind(other.to_string())))
                    }
                };
                let status = match opt_field(fields[6]) {
                    None => EntityStatus::default(),
                    Some(token) => EntityStatus::from_str(token)
                        .map_err(|e| line_err(line, LineError::UnknownStatus(e)))?,
                };
                records.entities.push((
                    line,
                    Entity {
                        id,
                        coordinate,
                        declared_module: fields[5].to_string(),
                        status,
                    },
                ));
            }
            "R" => {
                if fields.len() != 4 && fields.len() != 5 {
                    return Err(line_err(
                        line,
                        LineError::FieldCount {
                            tag: 'R',
                            expected: "4 or 5",
                            found: fields.len(),
                        },
                    ));
                }
                let kind = RelationKind::from_str(fields[1])
                    .map_err(|e| line_err(line, LineError::UnknownRelType(e)))?;
                let weight = match fields.get(4) {
                    Some(tok) => parse_f64(line, tok)?,
                    None => 1.0,
                };
                if weight < 0.0 {
                    return Err(line_err(line, LineError::NegativeWeight(weight)));
                }
                if fields[2] == fields[3] && kind != RelationKind::Ref {
                    return Err(line_err(
                        line,
                        LineError::SelfLoop {
                            kind,
                            id: fields[2].to_string(),
                        },
                    ));
                }
                records.relationships.push((
                    line,
                    Relationship {
                        kind,
                        src: fields[2].to_string(),
                        dst: fields[3].to_string(),
                        weight,
                    },
                ));
            }
            "A" => {
                if fields.len() != 4 {
                    return Err(line_err(
                        line,
                        LineError::FieldCount {
                            tag: 'A',
                            expected: "4",
                            found: fields.len(),
                        },
                    ));
                }
                records.attributes.push((
                    line,
                    UserAttribute {
                        entity_id: fields[1].to_string(),
                        name: fields[2].to_string(),
                        value: parse_f64(line, fields[3])?,
                    },
                ));
            }
            other => return Err(line_err(line, LineError::UnknownTag(other.to_string()))),
        }
    }

    Ok(records)
}

/// Parses a facts file into a validated graph plus its attributes.
///
/// Errors carry the offending line number. The returned graph always passes
/// [`validate_graph`], every relationship endpoint and attribute refers to a
/// declared entity, and `(entity, attribute-name)` pairs are unique.
pub fn parse(text: &str) -> Result<ParsedFacts, ParseError> {
    let records = parse_records(text)?;

    let mut seen_ids = HashSet::new();
    for (line, entity) in &records.entities {
        if !seen_ids.insert(entity.id.clone()) {
            return Err(line_err(
                *line,
                LineError::DuplicateEntity(entity.id.clone()),
            ));
        }
    }

    for (line, rel) in &records.relationships {
        for endpoint in [&rel.src, &rel.dst] {
            if !seen_ids.contains(endpoint) {
                return Err(line_err(
                    *line,
                    LineError::DanglingEndpoint(endpoint.clone()),
                ));
            }
        }
    }

    let mut seen_attrs = HashSet::new();
    for (line, attr) in &records.attributes {
        if !seen_ids.contains(&attr.entity_id) {
            return Err(line_err(
                *line,
                LineError::UnknownAttributeEntity(attr.entity_id.clone()),
            ));
        }
        if !seen_attrs.insert((attr.entity_id.clone(), attr.name.clone())) {
            return Err(line_err(
                *line,
                LineError::DuplicateAttribute {
                    entity: attr.entity_id.clone(),
                    name: attr.name.clone(),
                },
            ));
        }
    }

    let parsed = build(records);
    // Everything line-attributable is already checked; this catches what is
    // not visible on any single line (part cycles).
    if let Some(v) = validate_graph(&parsed.graph).into_iter().next() {
        return Err(ParseError::Invariant(v));
    }
    Ok(parsed)
}

/// Parses syntax only, keeping duplicate ids, dangling endpoints, and part
/// cycles in the result so that callers can report them as violations
/// instead of stopping at the first one.
pub fn parse_lenient(text: &str) -> Result<ParsedFacts, ParseError> {
    Ok(build(parse_records(text)?))
}

fn build(records: Records) -> ParsedFacts {
    ParsedFacts {
        graph: SoftwareGraph::new(
            records.entities.into_iter().map(|(_, e)| e).collect(),
            records.relationships.into_iter().map(|(_, r)| r).collect(),
        ),
        attributes: records.attributes.into_iter().map(|(_, a)| a).collect(),
    }
}

/// Writes a graph and its attributes back out as facts text.
///
/// Entities appear in id order, relationships and attributes in stored
/// order, statuses and weights always explicit. Re-parsing the output
/// reproduces the input graph exactly.
pub fn serialize(graph: &SoftwareGraph, attributes: &[UserAttribute]) -> String {
    let mut out = String::new();
    for e in graph.entities() {
        let (kind, object_col, class_col): (&str, &str, &str) = match &e.coordinate {
            EntityCoordinate::Object { .. } => ("object", "-", "-"),
            EntityCoordinate::Class { object_id, .. } => ("class", object_id, "-"),
            EntityCoordinate::Method {
                object_id,
                class_id,
                ..
            } => ("method", object_id, class_id),
        };
        out.push_str(&format!(
            "E {} {} {} {} {} {}\n",
            e.id, kind, object_col, class_col, e.declared_module, e.status
        ));
    }
    for r in graph.relationships() {
        out.push_str(&format!("R {} {} {} {}\n", r.kind, r.src, r.dst, r.weight));
    }
    for a in attributes {
        out.push_str(&format!("A {} {} {}\n", a.entity_id, a.name, a.value));
    }
    out
}

impl fmt::Display for ParsedFacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(&self.graph, &self.attributes))
    }
}
