//! Scene graph data model: per-modality graphs, cross-modal association
//! links, and the merged universal scene graph.

mod dot;
mod json;
mod merge;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dot::export_dot;
pub use merge::{align_video_usg, merge_components, merge_usg};

/// Input modality. Declaration order is the label priority used when nodes
/// are merged: text first, then image, video and 3-D point clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Video,
    Point3d,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Text,
        Modality::Image,
        Modality::Video,
        Modality::Point3d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Point3d => "point3d",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// Spatial (or textual) extent of an object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskRegion {
    /// Row-major `height x width` boolean raster.
    Grid2d {
        height: usize,
        width: usize,
        cells: Vec<bool>,
    },
    /// One flag per scene point (or per feature row).
    Pointset { points: Vec<bool> },
    /// Character offsets `[start, end)` into the source text.
    Textspan { start: usize, end: usize },
}

impl MaskRegion {
    pub fn check(&self) -> Result<(), String> {
        match self {
            MaskRegion::Grid2d {
                height,
                width,
                cells,
            } => {
                if *height == 0 || *width == 0 {
                    Err(format!("grid2d has empty dimension {height}x{width}"))
                } else if cells.len() != height * width {
                    Err(format!(
                        "grid2d has {} cells, expected {}",
                        cells.len(),
                        height * width
                    ))
                } else {
                    Ok(())
                }
            }
            MaskRegion::Pointset { .. } => Ok(()),
            MaskRegion::Textspan { start, end } => {
                if start > end {
                    Err(format!("textspan start {start} > end {end}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A mask contributed by one source node in one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub modality: Modality,
    pub frame: u32,
    /// Namespaced id of the node that contributed the mask; absent inside a
    /// single-modality graph where it is the owning node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub mask: MaskRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: String,
    pub label: String,
    pub modalities: BTreeSet<Modality>,
    pub masks: Vec<MaskEntry>,
}

impl ObjectNode {
    /// Node from a single modality with one mask in frame 0.
    pub fn new(modality: Modality, id: &str, label: &str, mask: MaskRegion) -> Self {
        Self {
            id: id.to_owned(),
            label: label.to_owned(),
            modalities: BTreeSet::from([modality]),
            masks: vec![MaskEntry {
                modality,
                frame: 0,
                source: None,
                mask,
            }],
        }
    }

    pub fn with_frame_mask(mut self, frame: u32, mask: MaskRegion) -> Self {
        let modality = *self.modalities.iter().next().expect("node has a modality");
        self.masks.push(MaskEntry {
            modality,
            frame,
            source: None,
            mask,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationEdge {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u32>,
    /// Modality the edge was parsed from, filled in by merging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Modality>,
}

impl RelationEdge {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Self {
            subject: subject.to_owned(),
            predicate: predicate.to_owned(),
            object: object.to_owned(),
            frame: None,
            source: None,
        }
    }

    pub fn at_frame(mut self, frame: u32) -> Self {
        self.frame = Some(frame);
        self
    }
}

/// Validated single-modality scene graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    modality: Modality,
    objects: Vec<ObjectNode>,
    relations: Vec<RelationEdge>,
    frame_count: u32,
}

impl SceneGraph {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn relations(&self) -> &[RelationEdge] {
        &self.relations
    }

    pub fn frame_count(&self) -> u32 {
        self.frame_count
    }

    pub fn object(&self, id: &str) -> Option<&ObjectNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn node_refs(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.objects
            .iter()
            .map(move |o| NodeRef::new(self.modality, &o.id))
    }
}

/// `(modality, id)` reference to a node of a single-modality graph.
/// Serialises as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef(pub Modality, pub String);

impl NodeRef {
    pub fn new(modality: Modality, id: &str) -> Self {
        Self(modality, id.to_owned())
    }

    pub fn modality(&self) -> Modality {
        self.0
    }

    pub fn id(&self) -> &str {
        &self.1
    }

    /// `"modality:id"`, the id a node carries once merged.
    pub fn namespaced(&self) -> String {
        format!("{}:{}", self.0, self.1)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationLink {
    pub a: NodeRef,
    pub b: NodeRef,
    pub score: f64,
}

impl AssociationLink {
    pub fn new(a: NodeRef, b: NodeRef, score: f64) -> Self {
        Self { a, b, score }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkSet {
    pub links: Vec<AssociationLink>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UniversalSceneGraph {
    pub frame_count: u32,
    pub objects: Vec<ObjectNode>,
    pub relations: Vec<RelationEdge>,
    /// Merged node id to the source nodes it absorbed.
    pub provenance: BTreeMap<String, BTreeSet<NodeRef>>,
}

impl UniversalSceneGraph {
    pub fn object(&self, id: &str) -> Option<&ObjectNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Canonical ordering: objects by id, masks by (modality, frame, source),
    /// relations by (subject, object, frame, predicate, source).
    pub fn normalize(&mut self) {
        self.objects.sort_by(|a, b| a.id.cmp(&b.id));
        for o in &mut self.objects {
            o.masks.sort_by(|a, b| {
                (a.modality, a.frame, &a.source).cmp(&(b.modality, b.frame, &b.source))
            });
        }
        self.relations.sort_by(|a, b| {
            (&a.subject, &a.object, a.frame, &a.predicate, a.source).cmp(&(
                &b.subject,
                &b.object,
                b.frame,
                &b.predicate,
                b.source,
            ))
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId { index: usize },
    DuplicateId(String),
    MissingMask(String),
    BadMask { id: String, reason: String },
    ModalityMismatch { id: String, found: Modality },
    FrameOutOfRange { what: String, frame: u32, frame_count: u32 },
    DanglingEndpoint { edge: usize, id: String },
    SelfRelation { edge: usize, id: String },
    BadFrameCount { modality: Modality, frame_count: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { index } => write!(f, "object #{index} has an empty id"),
            Violation::DuplicateId(id) => write!(f, "duplicate object id {id:?}"),
            Violation::MissingMask(id) => write!(f, "object {id:?} has no mask"),
            Violation::BadMask { id, reason } => write!(f, "object {id:?}: {reason}"),
            Violation::ModalityMismatch { id, found } => {
                write!(f, "object {id:?} carries a {found} mask in a graph of another modality")
            }
            Violation::FrameOutOfRange {
                what,
                frame,
                frame_count,
            } => write!(f, "{what}: frame {frame} out of range (frame_count {frame_count})"),
            Violation::DanglingEndpoint { edge, id } => {
                write!(f, "relation #{edge} references missing object {id:?}")
            }
            Violation::SelfRelation { edge, id } => {
                write!(f, "relation #{edge} relates {id:?} to itself")
            }
            Violation::BadFrameCount {
                modality,
                frame_count,
            } => write!(f, "{modality} graph must have frame_count 1, got {frame_count}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid scene graph:\n{}", list_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("more than one {0} graph supplied")]
    DuplicateModality(Modality),
    #[error("association link endpoint {0} does not resolve")]
    UnresolvedLink(NodeRef),
    #[error("association link joins two {0} nodes")]
    SameModalityLink(Modality),
    #[error("expected a video graph, got {0}")]
    NotVideo(Modality),
    #[error("static graph must have frame_count 1, got {0}")]
    StaticFrameCount(u32),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl GraphError {
    pub fn violations(&self) -> Vec<String> {
        match self {
            GraphError::Invalid(v) => v.iter().map(ToString::to_string).collect(),
            other => vec![other.to_string()],
        }
    }
}

fn list_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GraphOptions {
    pub allow_self_relations: bool,
}

/// Validates raw graph parts, reporting every violation found.
pub fn build_scene_graph(
    modality: Modality,
    objects: Vec<ObjectNode>,
    relations: Vec<RelationEdge>,
    frame_count: u32,
) -> Result<SceneGraph, GraphError> {
    build_scene_graph_with(modality, objects, relations, frame_count, GraphOptions::default())
}

pub fn build_scene_graph_with(
    modality: Modality,
    objects: Vec<ObjectNode>,
    relations: Vec<RelationEdge>,
    frame_count: u32,
    options: GraphOptions,
) -> Result<SceneGraph, GraphError> {
    let mut violations = Vec::new();
    if modality != Modality::Video && frame_count != 1 {
        violations.push(Violation::BadFrameCount {
            modality,
            frame_count,
        });
    }

    let mut seen = HashSet::new();
    for (index, o) in objects.iter().enumerate() {
        if o.id.is_empty() {
            violations.push(Violation::EmptyId { index });
        } else if !seen.insert(o.id.as_str()) {
            violations.push(Violation::DuplicateId(o.id.clone()));
        }
        if o.masks.is_empty() {
            violations.push(Violation::MissingMask(o.id.clone()));
        }
        for m in &o.masks {
            if m.modality != modality {
                violations.push(Violation::ModalityMismatch {
                    id: o.id.clone(),
                    found: m.modality,
                });
            }
            if m.frame >= frame_count {
                violations.push(Violation::FrameOutOfRange {
                    what: format!("mask of object {:?}", o.id),
                    frame: m.frame,
                    frame_count,
                });
            }
            if let Err(reason) = m.mask.check() {
                violations.push(Violation::BadMask {
                    id: o.id.clone(),
                    reason,
                });
            }
        }
        if o.modalities.iter().any(|&m| m != modality) {
            violations.push(Violation::ModalityMismatch {
                id: o.id.clone(),
                found: *o.modalities.iter().find(|&&m| m != modality).unwrap(),
            });
        }
    }

    for (edge, r) in relations.iter().enumerate() {
        for id in [&r.subject, &r.object] {
            if !seen.contains(id.as_str()) {
                violations.push(Violation::DanglingEndpoint {
                    edge,
                    id: id.clone(),
                });
            }
        }
        if r.subject == r.object && !options.allow_self_relations {
            violations.push(Violation::SelfRelation {
                edge,
                id: r.subject.clone(),
            });
        }
        if let Some(frame) = r.frame {
            if frame >= frame_count {
                violations.push(Violation::FrameOutOfRange {
                    what: format!("relation #{edge}"),
                    frame,
                    frame_count,
                });
            }
        }
    }

    if !violations.is_empty() {
        return Err(GraphError::Invalid(violations));
    }
    let mut objects = objects;
    for o in &mut objects {
        o.modalities = BTreeSet::from([modality]);
    }
    Ok(SceneGraph {
        modality,
        objects,
        relations,
        frame_count,
    })
}
