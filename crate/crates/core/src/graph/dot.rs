use std::fmt::Write;

use super::{Modality, ObjectNode, UniversalSceneGraph};

fn shape(node: &ObjectNode) -> &'static str {
    let mut it = node.modalities.iter();
    match (it.next(), it.next()) {
        (Some(Modality::Text), None) => "note",
        (Some(Modality::Image), None) => "box",
        (Some(Modality::Video), None) => "box3d",
        (Some(Modality::Point3d), None) => "cylinder",
        (None, _) => "plaintext",
        // merged across modalities
        _ => "doubleoctagon",
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders the graph as a Graphviz digraph. Nodes are sorted by id and edges
/// by `(subject, object, frame, predicate)`, so output is stable.
pub fn export_dot(usg: &UniversalSceneGraph) -> String {
    let mut nodes: Vec<&ObjectNode> = usg.objects.iter().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut edges: Vec<_> = usg.relations.iter().collect();
    edges.sort_by(|a, b| {
        (&a.subject, &a.object, a.frame, &a.predicate).cmp(&(&b.subject, &b.object, b.frame, &b.predicate))
    });

    let mut out = String::from("digraph usg {\n");
    for n in nodes {
        let modalities: Vec<&str> = n.modalities.iter().map(|m| m.as_str()).collect();
        writeln!(
            out,
            "  {} [label={}, shape={}, tooltip={}];",
            quote(&n.id),
            quote(&n.label),
            shape(n),
            quote(&modalities.join("+"))
        )
        .unwrap();
    }
    for e in edges {
        write!(
            out,
            "  {} -> {} [label={}",
            quote(&e.subject),
            quote(&e.object),
            quote(&e.predicate)
        )
        .unwrap();
        if let Some(f) = e.frame {
            write!(out, ", tooltip={}", quote(&format!("frame {f}"))).unwrap();
        }
        out.push_str("];\n");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_scene_graph, merge_usg, MaskRegion, RelationEdge};

    #[test]
    fn empty_graph_skeleton() {
        assert_eq!(export_dot(&UniversalSceneGraph::default()), "digraph usg {\n}\n");
    }

    #[test]
    fn single_node() {
        let g = build_scene_graph(
            Modality::Image,
            vec![ObjectNode::new(Modality::Image, "o1", "cup", MaskRegion::Pointset { points: vec![true] })],
            vec![],
            1,
        )
        .unwrap();
        let dot = export_dot(&merge_usg(&[g], &[]).unwrap());
        assert_eq!(dot.matches("shape=").count(), 1);
        assert!(!dot.contains("->"));
    }

    #[test]
    fn golden_three_nodes_two_edges() {
        let m = MaskRegion::Textspan { start: 0, end: 1 };
        let g = build_scene_graph(
            Modality::Text,
            vec![
                ObjectNode::new(Modality::Text, "c", "the \"old\" lamp", m.clone()),
                ObjectNode::new(Modality::Text, "a", "man", m.clone()),
                ObjectNode::new(Modality::Text, "b", "desk", m),
            ],
            vec![RelationEdge::new("c", "on", "b"), RelationEdge::new("a", "sits at", "b")],
            1,
        )
        .unwrap();
        let usg = merge_usg(&[g], &[]).unwrap();
        let golden = "digraph usg {\n\
            \x20 \"text:a\" [label=\"man\", shape=note, tooltip=\"text\"];\n\
            \x20 \"text:b\" [label=\"desk\", shape=note, tooltip=\"text\"];\n\
            \x20 \"text:c\" [label=\"the \\\"old\\\" lamp\", shape=note, tooltip=\"text\"];\n\
            \x20 \"text:a\" -> \"text:b\" [label=\"sits at\"];\n\
            \x20 \"text:c\" -> \"text:b\" [label=\"on\"];\n\
            }\n";
        assert_eq!(export_dot(&usg), golden);
        assert_eq!(export_dot(&usg), export_dot(&usg.clone()));
    }
}
