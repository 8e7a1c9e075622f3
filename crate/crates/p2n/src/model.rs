//! Domain model: software entities, the relationships between them, and the
//! graph that ties a system description together.
//!
//! A [`SoftwareGraph`] is immutable once constructed and keeps its entities
//! sorted by id (byte-wise on the UTF-8 representation), so every entity has
//! a stable index in `0..n` that the numeric stages use as its row number.
//! Construction never rejects a graph; [`validate_graph`] reports structural
//! problems as data so callers can decide whether to fail or to display them.

use std::collections::HashMap;
use std::fmt;

/// Where an entity sits in the object / class / method containment
/// hierarchy. The variant fixes which ancestors must be named, so a
/// coordinate can never be inconsistent with its entity's kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntityCoordinate {
    /// A top-level object; it is its own object coordinate.
    Object { object_id: String },
    /// A class inside an object.
    Class { object_id: String, class_id: String },
    /// A method inside a class inside an object.
    Method {
        object_id: String,
        class_id: String,
        method_id: String,
    },
}

impl EntityCoordinate {
    pub fn object_id(&self) -> &str {
        match self {
            EntityCoordinate::Object { object_id }
            | EntityCoordinate::Class { object_id, .. }
            | EntityCoordinate::Method { object_id, .. } => object_id,
        }
    }

    pub fn class_id(&self) -> Option<&str> {
        match self {
            EntityCoordinate::Object { .. } => None,
            EntityCoordinate::Class { class_id, .. }
            | EntityCoordinate::Method { class_id, .. } => Some(class_id),
        }
    }

    pub fn method_id(&self) -> Option<&str> {
        match self {
            EntityCoordinate::Method { method_id, .. } => Some(method_id),
            _ => None,
        }
    }

    pub fn kind(&self) -> EntityKind {
        match self {
            EntityCoordinate::Object { .. } => EntityKind::Object,
            EntityCoordinate::Class { .. } => EntityKind::Class,
            EntityCoordinate::Method { .. } => EntityKind::Method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Object,
    Class,
    Method,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Object => "object",
            EntityKind::Class => "class",
            EntityKind::Method => "method",
        })
    }
}

/// Lifecycle stage of an entity. The ordering mirrors the development
/// sequence; `Planned` is the default when a facts file leaves it out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum EntityStatus {
    #[default]
    Planned,
    Coded,
    Tested,
}

impl fmt::Display for EntityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityStatus::Planned => "planned",
            EntityStatus::Coded => "coded",
            EntityStatus::Tested => "tested",
        })
    }
}

impl std::str::FromStr for EntityStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planned" => Ok(EntityStatus::Planned),
            "coded" => Ok(EntityStatus::Coded),
            "tested" => Ok(EntityStatus::Tested),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// One named thing in the system under analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    /// Unique identifier; also the entity's name in every report.
    pub id: String,
    /// Position in the containment hierarchy. Determines [`Entity::kind`].
    pub coordinate: EntityCoordinate,
    /// Module the designers assigned the entity to.
    pub declared_module: String,
    /// Current lifecycle stage.
    pub status: EntityStatus,
}

impl Entity {
    pub fn kind(&self) -> EntityKind {
        self.coordinate.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationKind {
    /// Containment ("has part"). Must be acyclic across the graph.
    Part,
    /// Inheritance ("is a subclass of").
    Subclass,
    /// Any other directed reference (call, field access, import).
    Ref,
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationKind::Part => "part",
            RelationKind::Subclass => "subclass",
            RelationKind::Ref => "ref",
        })
    }
}

impl std::str::FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "part" => Ok(RelationKind::Part),
            "subclass" => Ok(RelationKind::Subclass),
            "ref" => Ok(RelationKind::Ref),
            other => Err(format!("unknown relationship type `{other}`")),
        }
    }
}

/// A directed, weighted edge between two entities.
///
/// `part` and `subclass` edges may not be self-loops; `ref` edges may.
/// Weights are nonnegative and default to 1.0 in the facts format.
#[derive(Debug, Clone, PartialEq)]
pub struct Relationship {
    pub kind: RelationKind,
    pub src: String,
    pub dst: String,
    pub weight: f64,
}

/// The system description: entities plus the relationships between them.
///
/// Entities are stored sorted by id, so index `i` below always means "the
/// i-th entity in id order". Relationships keep their insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftwareGraph {
    entities: Vec<Entity>,
    relationships: Vec<Relationship>,
    index: HashMap<String, usize>,
}

impl SoftwareGraph {
    /// Builds a graph, sorting entities by id. Duplicate ids and dangling
    /// endpoints are preserved for [`validate_graph`] to report; the index
    /// maps each id to its first occurrence.
    pub fn new(mut entities: Vec<Entity>, relationships: Vec<Relationship>) -> SoftwareGraph {
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            index.entry(e.id.clone()).or_insert(i);
        }
        SoftwareGraph {
            entities,
            relationships,
            index,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relationships(&self) -> &[Relationship] {
        &self.relationships
    }

    /// Index of the entity with this id, if present.
    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entity(&self, index: usize) -> &Entity {
        &self.entities[index]
    }

    /// Distinct declared modules, in id-sorted first-appearance order.
    pub fn declared_modules(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for e in &self.entities {
            if !seen.contains(&e.declared_module.as_str()) {
                seen.push(e.declared_module.as_str());
            }
        }
        seen
    }
}

/// A recovered cluster of entities, identified by its partition label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub node_id: usize,
    /// Member entity ids, in entity-index order. Never empty.
    pub members: Vec<String>,
}

/// All recovered clusters of one cut; every entity appears in exactly one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    pub nodes: Vec<Node>,
}

/// One structural problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateEntityId {
        id: String,
    },
    DanglingEndpoint {
        rel_index: usize,
        endpoint: String,
    },
    SelfLoop {
        rel_index: usize,
        kind: RelationKind,
        id: String,
    },
    InvalidWeight {
        rel_index: usize,
        weight: f64,
    },
    /// A cycle through `part` edges; `members` lists the entity ids on the
    /// cycle, sorted.
    PartCycle {
        members: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateEntityId { id } => write!(f, "duplicate entity id `{id}`"),
            Violation::DanglingEndpoint {
                rel_index,
                endpoint,
            } => write!(
                f,
                "relationship {rel_index} references unknown entity `{endpoint}`"
            ),
            Violation::SelfLoop {
                rel_index,
                kind,
                id,
            } => write!(f, "relationship {rel_index} is a `{kind}` self-loop on `{id}`"),
            Violation::InvalidWeight { rel_index, weight } => {
                write!(f, "relationship {rel_index} has invalid weight {weight}")
            }
            Violation::PartCycle { members } => {
                write!(f, "part edges form a cycle through: {}", members.join(", "))
            }
        }
    }
}

/// Checks every graph invariant and returns one entry per violation.
/// An empty report means the graph is safe for the numeric pipeline.
pub fn validate_graph(graph: &SoftwareGraph) -> Vec<Violation> {
    let mut out = Vec::new();

    for pair in graph.entities.windows(2) {
        if pair[0].id == pair[1].id {
            // Runs of equal ids produce one violation per extra copy.
            out.push(Violation::DuplicateEntityId {
                id: pair[1].id.clone(),
            });
        }
    }

    for (i, rel) in graph.relationships.iter().enumerate() {
        for endpoint in [&rel.src, &rel.dst] {
            if graph.entity_index(endpoint).is_none() {
                out.push(Violation::DanglingEndpoint {
                    rel_index: i,
                    endpoint: endpoint.clone(),
                });
            }
        }
        if rel.src == rel.dst && rel.kind != RelationKind::Ref {
            out.push(Violation::SelfLoop {
                rel_index: i,
                kind: rel.kind,
                id: rel.src.clone(),
            });
        }
        if !rel.weight.is_finite() || rel.weight < 0.0 {
            out.push(Violation::InvalidWeight {
                rel_index: i,
                weight: rel.weight,
            });
        }
    }

    for scc in part_cycles(graph) {
        let mut members: Vec<String> = scc
            .into_iter()
            .map(|i| graph.entities[i].id.clone())
            .collect();
        members.sort();
        out.push(Violation::PartCycle { members });
    }

    out
}

/// Strongly connected components of size >= 2 in the `part` subgraph.
/// Self-loops are excluded here; they are reported as [`Violation::SelfLoop`].
fn part_cycles(graph: &SoftwareGraph) -> Vec<Vec<usize>> {
    let n = graph.entity_count();
    let mut adj = vec![Vec::new(); n];
    for rel in &graph.relationships {
        if rel.kind != RelationKind::Part || rel.src == rel.dst {
            continue;
        }
        if let (Some(s), Some(d)) = (graph.entity_index(&rel.src), graph.entity_index(&rel.dst)) {
            adj[s].push(d);
        }
    }

    // Iterative Tarjan; the recursion state lives on an explicit stack so
    // deep containment chains cannot overflow.
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0usize;
    let mut components = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (node, next child position)
        let mut call_stack = vec![(root, 0usize)];
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call_stack.last_mut() {
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                call_stack.pop();
                if let Some(&(parent, _)) = call_stack.last() {
                    lowlink[parent] = lowlink[parent].min(lowlink[v]);
                }
                if lowlink[v] == index[v] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    if component.len() >= 2 {
                        components.push(component);
                    }
                }
            }
        }
    }

    // Tarjan emits components in reverse topological order; sort by the
    // smallest member index so reports are stable.
    components.sort_by_key(|c| c.iter().copied().min());
    components
}
