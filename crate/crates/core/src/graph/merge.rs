//! Merging per-modality scene graphs into a universal scene graph.
//!
//! Associated nodes collapse into one merged node whose label and id come
//! from its highest-priority member (text, then image, video, point3d; ties
//! by smallest source id). Masks of every member are kept. When several
//! source edges land on the same merged `(subject, object, frame)` the
//! text-sourced predicates win; otherwise all distinct predicates are kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;

use super::{
    AssociationLink, GraphError, MaskEntry, Modality, NodeRef, ObjectNode, RelationEdge,
    SceneGraph, UniversalSceneGraph,
};

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }

    /// Groups of indices, each group sorted, groups ordered by first member.
    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            by_root.entry(root).or_default().push(i);
        }
        let mut groups: Vec<_> = by_root.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

/// Connected components of the association graph over `nodes`. Link
/// endpoints missing from `nodes` join the universe. Nodes without links
/// form singletons. Components and their members come out sorted.
pub fn merge_components(nodes: &[NodeRef], links: &[AssociationLink]) -> Vec<BTreeSet<NodeRef>> {
    let universe: BTreeSet<&NodeRef> = nodes
        .iter()
        .chain(links.iter().flat_map(|l| [&l.a, &l.b]))
        .collect();
    let universe: Vec<&NodeRef> = universe.into_iter().collect();
    let index: HashMap<&NodeRef, usize> = universe.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut sets = DisjointSet::new(universe.len());
    for l in links {
        sets.union(index[&l.a], index[&l.b]);
    }
    let mut comps: Vec<BTreeSet<NodeRef>> = sets
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| universe[i].clone()).collect())
        .collect();
    comps.sort();
    comps
}

/// A node entering a merge: either a source node or an already merged node.
struct Unit {
    members: BTreeSet<NodeRef>,
    label: String,
    masks: Vec<MaskEntry>,
    modalities: BTreeSet<Modality>,
}

impl Unit {
    /// Highest-priority member; its id and label name the merged node.
    fn leader(&self) -> &NodeRef {
        self.members.iter().next().expect("unit has members")
    }
}

/// Merges units in each group; returns merged nodes and unit index -> merged id.
fn merge_units(units: Vec<Unit>, groups: &[Vec<usize>]) -> (Vec<ObjectNode>, Vec<String>, BTreeMap<String, BTreeSet<NodeRef>>) {
    let mut merged_id = vec![String::new(); units.len()];
    let mut objects = Vec::with_capacity(groups.len());
    let mut provenance = BTreeMap::new();
    for group in groups {
        // leader across the whole group
        let lead = group
            .iter()
            .copied()
            .min_by(|&a, &b| units[a].leader().cmp(units[b].leader()))
            .expect("non-empty group");
        let id = units[lead].leader().namespaced();
        let mut members = BTreeSet::new();
        let mut masks = Vec::new();
        let mut modalities = BTreeSet::new();
        for &u in group {
            members.extend(units[u].members.iter().cloned());
            masks.extend(units[u].masks.iter().cloned());
            modalities.extend(units[u].modalities.iter().copied());
            merged_id[u] = id.clone();
        }
        masks.sort_by(|a: &MaskEntry, b: &MaskEntry| {
            (a.modality, a.frame, &a.source).cmp(&(b.modality, b.frame, &b.source))
        });
        objects.push(ObjectNode {
            id: id.clone(),
            label: units[lead].label.clone(),
            modalities,
            masks,
        });
        provenance.insert(id, members);
    }
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    (objects, merged_id, provenance)
}

fn source_unit(graph: &SceneGraph, node: &ObjectNode) -> Unit {
    let key = NodeRef::new(graph.modality(), &node.id);
    let source = key.namespaced();
    Unit {
        masks: node
            .masks
            .iter()
            .map(|m| MaskEntry {
                source: Some(source.clone()),
                ..m.clone()
            })
            .collect(),
        members: BTreeSet::from([key]),
        label: node.label.clone(),
        modalities: BTreeSet::from([graph.modality()]),
    }
}

/// Applies predicate priority to rewritten edges: per merged
/// `(subject, object, frame)`, text-sourced edges displace all others.
/// Identical predicates from different modalities collapse to the first.
fn resolve_edges(edges: Vec<RelationEdge>) -> Vec<RelationEdge> {
    let mut groups: BTreeMap<(String, String, Option<u32>), Vec<RelationEdge>> = BTreeMap::new();
    for e in edges {
        groups
            .entry((e.subject.clone(), e.object.clone(), e.frame))
            .or_default()
            .push(e);
    }
    let mut out = Vec::new();
    for ((subject, object, _), group) in groups {
        let has_text = group.iter().any(|e| e.source == Some(Modality::Text));
        let mut kept: Vec<RelationEdge> = Vec::new();
        for e in group {
            if has_text && e.source != Some(Modality::Text) {
                continue;
            }
            let duplicate = kept
                .iter()
                .any(|k| k.predicate == e.predicate && k.source != e.source);
            if !duplicate {
                kept.push(e);
            }
        }
        let conflicting: BTreeSet<&str> = kept.iter().map(|e| e.predicate.as_str()).collect();
        let sources: BTreeSet<_> = kept.iter().map(|e| e.source).collect();
        if !has_text && conflicting.len() > 1 && sources.len() > 1 {
            warn!(
                "kept conflicting predicates {conflicting:?} from {sources:?} for {subject} -> {object}"
            );
        }
        out.extend(kept);
    }
    out.sort_by(|a, b| {
        (&a.subject, &a.object, a.frame, &a.predicate, a.source)
            .cmp(&(&b.subject, &b.object, b.frame, &b.predicate, b.source))
    });
    out
}

fn check_links<'a>(
    links: &[AssociationLink],
    resolves: impl Fn(&NodeRef) -> bool + 'a,
) -> Result<(), GraphError> {
    for l in links {
        if l.a.modality() == l.b.modality() {
            return Err(GraphError::SameModalityLink(l.a.modality()));
        }
        for end in [&l.a, &l.b] {
            if !resolves(end) {
                return Err(GraphError::UnresolvedLink(end.clone()));
            }
        }
    }
    Ok(())
}

/// Unifies per-modality graphs and their association links into one USG.
pub fn merge_usg(
    graphs: &[SceneGraph],
    links: &[AssociationLink],
) -> Result<UniversalSceneGraph, GraphError> {
    let mut seen = BTreeSet::new();
    for g in graphs {
        if !seen.insert(g.modality()) {
            return Err(GraphError::DuplicateModality(g.modality()));
        }
    }
    let by_modality: HashMap<Modality, &SceneGraph> =
        graphs.iter().map(|g| (g.modality(), g)).collect();
    check_links(links, |n| {
        by_modality
            .get(&n.modality())
            .is_some_and(|g| g.object(n.id()).is_some())
    })?;

    let nodes: Vec<NodeRef> = graphs.iter().flat_map(|g| g.node_refs()).collect();
    let index: HashMap<&NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let units: Vec<Unit> = graphs
        .iter()
        .flat_map(|g| g.objects().iter().map(move |o| source_unit(g, o)))
        .collect();
    let groups: Vec<Vec<usize>> = merge_components(&nodes, links)
        .into_iter()
        .map(|c| c.iter().map(|n| index[n]).collect())
        .collect();
    let (objects, merged_id, provenance) = merge_units(units, &groups);

    let mut edges = Vec::new();
    for g in graphs {
        for r in g.relations() {
            let s = merged_id[index[&NodeRef::new(g.modality(), &r.subject)]].clone();
            let o = merged_id[index[&NodeRef::new(g.modality(), &r.object)]].clone();
            edges.push(RelationEdge {
                subject: s,
                object: o,
                predicate: r.predicate.clone(),
                frame: r.frame,
                source: Some(g.modality()),
            });
        }
    }

    Ok(UniversalSceneGraph {
        frame_count: graphs.iter().map(|g| g.frame_count()).max().unwrap_or(1).max(1),
        objects,
        relations: resolve_edges(edges),
        provenance,
    })
}

/// Places a static USG as frame 0 in front of a video graph. Video frame `f`
/// becomes frame `f + 1`; each link ties a video node (tracked through all its
/// frames) to a source node absorbed by the static USG.
pub fn align_video_usg(
    static_usg: &UniversalSceneGraph,
    video: &SceneGraph,
    links: &[AssociationLink],
) -> Result<UniversalSceneGraph, GraphError> {
    if video.modality() != Modality::Video {
        return Err(GraphError::NotVideo(video.modality()));
    }
    if static_usg.frame_count != 1 {
        return Err(GraphError::StaticFrameCount(static_usg.frame_count));
    }
    let owner: HashMap<&NodeRef, usize> = static_usg
        .objects
        .iter()
        .enumerate()
        .flat_map(|(i, o)| {
            static_usg
                .provenance
                .get(&o.id)
                .into_iter()
                .flatten()
                .map(move |n| (n, i))
        })
        .collect();
    check_links(links, |n| {
        if n.modality() == Modality::Video {
            video.object(n.id()).is_some()
        } else {
            owner.contains_key(n)
        }
    })?;
    if video.frame_count() == 0 {
        return Ok(static_usg.clone());
    }

    let n_static = static_usg.objects.len();
    let mut units: Vec<Unit> = static_usg
        .objects
        .iter()
        .map(|o| Unit {
            members: static_usg.provenance.get(&o.id).cloned().unwrap_or_else(|| {
                // tolerate hand-written USGs without provenance
                BTreeSet::from([fallback_ref(o)])
            }),
            label: o.label.clone(),
            masks: o.masks.clone(),
            modalities: o.modalities.clone(),
        })
        .collect();
    let video_index: HashMap<&str, usize> = video
        .objects()
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), n_static + i))
        .collect();
    units.extend(video.objects().iter().map(|o| {
        let mut u = source_unit(video, o);
        u.masks.iter_mut().for_each(|m| m.frame += 1);
        u
    }));

    let mut sets = DisjointSet::new(units.len());
    for l in links {
        let (v, s) = if l.a.modality() == Modality::Video {
            (&l.a, &l.b)
        } else {
            (&l.b, &l.a)
        };
        if s.modality() == Modality::Video {
            return Err(GraphError::SameModalityLink(Modality::Video));
        }
        sets.union(video_index[v.id()], owner[s]);
    }
    let groups = sets.groups();
    let (objects, merged_id, provenance) = merge_units(units, &groups);

    let mut edges = Vec::new();
    let static_pos: HashMap<&str, usize> = static_usg
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), i))
        .collect();
    for r in &static_usg.relations {
        let remap = |id: &str| {
            static_pos
                .get(id)
                .map_or_else(|| id.to_owned(), |&i| merged_id[i].clone())
        };
        edges.push(RelationEdge {
            subject: remap(&r.subject),
            object: remap(&r.object),
            ..r.clone()
        });
    }
    for r in video.relations() {
        edges.push(RelationEdge {
            subject: merged_id[video_index[r.subject.as_str()]].clone(),
            object: merged_id[video_index[r.object.as_str()]].clone(),
            predicate: r.predicate.clone(),
            frame: r.frame.map(|f| f + 1),
            source: Some(Modality::Video),
        });
    }

    Ok(UniversalSceneGraph {
        frame_count: video.frame_count() + 1,
        objects,
        relations: resolve_edges(edges),
        provenance,
    })
}

fn fallback_ref(o: &ObjectNode) -> NodeRef {
    let modality = o.modalities.iter().next().copied().unwrap_or(Modality::Image);
    let id = o
        .id
        .split_once(':')
        .map_or(o.id.as_str(), |(_, rest)| rest);
    NodeRef::new(modality, id)
}
