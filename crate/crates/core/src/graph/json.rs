//! File forms of scene graphs and universal scene graphs.

use serde::{Deserialize, Serialize};

use super::{
    build_scene_graph, GraphError, MaskEntry, MaskRegion, Modality, ObjectNode, RelationEdge,
    SceneGraph, UniversalSceneGraph,
};

#[derive(Serialize, Deserialize)]
struct SceneGraphFile {
    modality: Modality,
    #[serde(default = "one")]
    frame_count: u32,
    #[serde(default)]
    objects: Vec<ObjectFile>,
    #[serde(default)]
    relations: Vec<RelationEdge>,
}

fn one() -> u32 {
    1
}

/// An object either carries a single frame-0 `mask` or a list of per-frame
/// `masks` (video). Both may be given; they are concatenated.
#[derive(Serialize, Deserialize)]
struct ObjectFile {
    id: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskRegion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    masks: Vec<FrameMask>,
}

#[derive(Serialize, Deserialize)]
struct FrameMask {
    frame: u32,
    mask: MaskRegion,
}

impl SceneGraph {
    pub fn from_json(text: &str) -> Result<SceneGraph, GraphError> {
        let file: SceneGraphFile = serde_json::from_str(text)?;
        let modality = file.modality;
        let objects = file
            .objects
            .into_iter()
            .map(|o| {
                let masks = o
                    .mask
                    .map(|mask| (0, mask))
                    .into_iter()
                    .chain(o.masks.into_iter().map(|m| (m.frame, m.mask)))
                    .map(|(frame, mask)| MaskEntry {
                        modality,
                        frame,
                        source: None,
                        mask,
                    })
                    .collect();
                ObjectNode {
                    id: o.id,
                    label: o.label,
                    modalities: [modality].into(),
                    masks,
                }
            })
            .collect();
        build_scene_graph(modality, objects, file.relations, file.frame_count)
    }

    pub fn to_json(&self) -> String {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let single = o.masks.len() == 1 && o.masks[0].frame == 0;
                ObjectFile {
                    id: o.id.clone(),
                    label: o.label.clone(),
                    mask: single.then(|| o.masks[0].mask.clone()),
                    masks: if single {
                        Vec::new()
                    } else {
                        o.masks
                            .iter()
                            .map(|m| FrameMask {
                                frame: m.frame,
                                mask: m.mask.clone(),
                            })
                            .collect()
                    },
                }
            })
            .collect();
        let file = SceneGraphFile {
            modality: self.modality,
            frame_count: self.frame_count,
            objects,
            relations: self.relations.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scene graph serialises")
    }
}

impl UniversalSceneGraph {
    pub fn from_json(text: &str) -> Result<UniversalSceneGraph, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("usg serialises")
    }
}
