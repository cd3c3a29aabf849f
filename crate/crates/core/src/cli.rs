//! Command-line surface: `merge`, `eval`, `demo` and `export-dot`.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{debug, info};
use serde_json::value::RawValue;

use crate::eval::{evaluate, EvalReport, MatchMode, MatchOptions, MetricReport, SampleFile};
use crate::graph::{
    align_video_usg, build_scene_graph, export_dot, merge_usg, AssociationLink, GraphError, LinkSet, MaskRegion,
    Modality, NodeRef, ObjectNode, RelationEdge, SceneGraph, UniversalSceneGraph,
};
use crate::model::io::{load_matrix, load_params, FormatError};
use crate::model::params::ModelParams;
use crate::model::{
    associate, build_relation_queries, classify_relations, fuse_queries, infer_associations, init_queries,
    open_vocab_label, pair_confidence, predict_masks, project_subject_object, relation_decode, rpc_refine,
    run_mask_decoder, select_top_k_pairs, temporal_encode, ModelConfig, ModelError, QuerySet,
};
use crate::tensor::{Matrix, RngSeed};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable holding the log filter (`error`, `warn`, `info`,
/// `debug`, `trace`).
pub const LOG_ENV: &str = "USG_LOG";

pub const OBJECT_VOCABULARY: &[&str] = &[
    "person", "dog", "cat", "horse", "car", "bicycle", "chair", "sofa", "table", "bed", "phone", "cup", "bottle",
    "book", "tree", "building",
];

pub const PREDICATE_VOCABULARY: &[&str] = &[
    "on", "near", "holding", "sitting on", "wearing", "next to", "under", "behind", "in front of", "riding", "looking at",
    "has",
];

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Io(m) => m,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Input(e.violations().join("\n"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn format_error(path: &Path, e: FormatError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.is_io() {
        CliError::Io(msg)
    } else {
        CliError::Input(msg)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "usg", version, about = "Build, merge, evaluate and export universal scene graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge per-modality scene graphs into one universal scene graph.
    Merge(MergeArgs),
    /// Score a prediction file against ground truth.
    Eval(EvalArgs),
    /// Run a seeded forward pass over feature files and emit a USG.
    Demo(DemoArgs),
    /// Render a USG as Graphviz DOT.
    ExportDot(ExportArgs),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Scene graph JSON files, at most one per modality.
    #[arg(required = true)]
    pub graphs: Vec<PathBuf>,
    /// Association link JSON.
    #[arg(long)]
    pub links: Option<PathBuf>,
    /// Output path; standard output when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction sample file.
    pub predictions: PathBuf,
    /// Ground-truth sample file.
    pub ground_truth: PathBuf,
    /// Recall cut-offs.
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    pub k: Vec<usize>,
    /// Mask IoU needed for a hit.
    #[arg(long, default_value_t = crate::eval::DEFAULT_IOU)]
    pub iou: f64,
    /// Ignore masks when matching triplets.
    #[arg(long)]
    pub labels_only: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Text token features; repeat for more scales.
    #[arg(long)]
    pub text: Vec<PathBuf>,
    /// Image pixel features; repeat for more scales.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// Video frame features, one file per frame in order.
    #[arg(long)]
    pub video: Vec<PathBuf>,
    /// Point cloud features; repeat for more scales.
    #[arg(long)]
    pub point3d: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter manifest; weights are seeded at random when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Relation proposals per modality (overrides the config).
    #[arg(long)]
    pub top_pairs: Option<usize>,
    /// Minimum refined association score for a link (overrides the config).
    #[arg(long)]
    pub assoc_threshold: Option<f64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write the inferred association links here.
    #[arg(long)]
    pub links_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// USG JSON file.
    pub usg: PathBuf,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Merge(a) => cmd_merge(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Demo(a) => cmd_demo(&a),
        Command::ExportDot(a) => cmd_export_dot(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_context<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| match e.into() {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        io => io,
    })
}

pub fn cmd_merge(args: &MergeArgs) -> CliResult<()> {
    let mut graphs = Vec::new();
    for path in &args.graphs {
        graphs.push(with_context(path, SceneGraph::from_json(&read_text(path)?))?);
    }
    let links = match &args.links {
        Some(path) => {
            let set: LinkSet = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            set.links
        }
        None => Vec::new(),
    };
    let usg = merge_graphs(graphs, &links)?;
    info!("merged into {} nodes, {} relations", usg.objects.len(), usg.relations.len());
    write_output(args.out.as_deref(), &(usg.to_json() + "\n"))
}

/// Merges static graphs, then aligns a video graph in front of them when one
/// is present. Links touching a video node go to the alignment step.
pub fn merge_graphs(graphs: Vec<SceneGraph>, links: &[AssociationLink]) -> Result<UniversalSceneGraph, GraphError> {
    let (videos, statics): (Vec<_>, Vec<_>) = graphs.into_iter().partition(|g| g.modality() == Modality::Video);
    let mut usg = match (videos.as_slice(), statics.is_empty()) {
        ([video], false) => {
            let touches_video = |l: &AssociationLink| l.a.0 == Modality::Video || l.b.0 == Modality::Video;
            let (video_links, static_links): (Vec<_>, Vec<_>) = links.iter().cloned().partition(touches_video);
            let static_usg = merge_usg(&statics, &static_links)?;
            align_video_usg(&static_usg, video, &video_links)?
        }
        (videos, _) if videos.len() > 1 => return Err(GraphError::DuplicateModality(Modality::Video)),
        _ => merge_usg(&[videos, statics].concat(), links)?,
    };
    usg.normalize();
    Ok(usg)
}

pub fn cmd_export_dot(args: &ExportArgs) -> CliResult<()> {
    let usg = with_context(&args.usg, UniversalSceneGraph::from_json(&read_text(&args.usg)?))?;
    write_output(args.out.as_deref(), &export_dot(&usg))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let pred = with_context(&args.predictions, SampleFile::from_json(&read_text(&args.predictions)?))?;
    let gt = with_context(&args.ground_truth, SampleFile::from_json(&read_text(&args.ground_truth)?))?;
    let opts = MatchOptions {
        iou_threshold: args.iou,
        mode: if args.labels_only { MatchMode::Labels } else { MatchMode::LabelsAndMasks },
    };
    let report = evaluate(&pred, &gt, &args.k, &opts)?;
    write_output(args.out.as_deref(), &(render_report(&report) + "\n"))
}

fn percent(value: Option<f64>) -> Box<RawValue> {
    let text = match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "null".to_owned(),
    };
    RawValue::from_string(text).expect("number literal")
}

/// Metric values ×100 with two decimals; keys sorted.
pub fn render_report(report: &EvalReport) -> String {
    let mut top: BTreeMap<String, Box<RawValue>> = BTreeMap::new();
    let mut per_predicate: BTreeMap<String, BTreeMap<String, Box<RawValue>>> = BTreeMap::new();
    let all: Vec<&MetricReport> = report.recall.iter().chain(&report.mean_recall).collect();
    for m in all {
        top.insert(m.metric.clone(), percent(m.value));
        if m.metric.starts_with("mR") {
            let table = m.per_predicate.iter().map(|(p, v)| (p.clone(), percent(Some(*v)))).collect();
            per_predicate.insert(m.metric.clone(), table);
        }
    }
    top.insert("set_match".into(), percent(report.set_match));
    top.insert("triple_f1".into(), percent(report.triple_f1));
    let table = serde_json::to_string(&per_predicate).expect("report serialises");
    top.insert("per_predicate".into(), RawValue::from_string(table).expect("json"));
    serde_json::to_string_pretty(&top).expect("report serialises")
}

fn load_config(args: &DemoArgs) -> CliResult<(ModelConfig, Option<ModelParams>)> {
    let file_config = match &args.config {
        Some(path) => Some(
            serde_json::from_str::<ModelConfig>(&read_text(path)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let (mut config, params) = match &args.params {
        Some(path) => {
            let (c, p) = load_params(path).map_err(|e| format_error(path, e))?;
            if file_config.as_ref().is_some_and(|f| *f != c) {
                return Err(CliError::Input(format!(
                    "{} was saved with a different config than {}",
                    path.display(),
                    args.config.as_ref().unwrap().display()
                )));
            }
            (c, Some(p))
        }
        None => (file_config.unwrap_or_default(), None),
    };
    if let Some(k) = args.top_pairs {
        config.top_k_pairs = k;
    }
    if let Some(t) = args.assoc_threshold {
        config.association_threshold = t;
    }
    config.validate()?;
    Ok((config, params))
}

fn load_features(paths: &[PathBuf], d: usize) -> CliResult<Vec<Matrix>> {
    paths
        .iter()
        .map(|p| {
            let m = load_matrix(p).map_err(|e| format_error(p, e))?;
            if m.cols() != d {
                return Err(CliError::Input(format!(
                    "{}: features have {} columns, embed_dim is {d}",
                    p.display(),
                    m.cols()
                )));
            }
            if m.rows() == 0 {
                return Err(CliError::Input(format!("{}: feature matrix has no rows", p.display())));
            }
            Ok(m)
        })
        .collect()
}

pub fn cmd_demo(args: &DemoArgs) -> CliResult<()> {
    let (config, params) = load_config(args)?;
    let mut inputs = BTreeMap::new();
    for (modality, paths) in [
        (Modality::Text, &args.text),
        (Modality::Image, &args.image),
        (Modality::Video, &args.video),
        (Modality::Point3d, &args.point3d),
    ] {
        if !paths.is_empty() {
            inputs.insert(modality, load_features(paths, config.embed_dim)?);
        }
    }
    if inputs.is_empty() {
        return Err(CliError::Input("demo needs at least one of --text, --image, --video, --point3d".into()));
    }
    let seed = RngSeed(args.seed);
    let params = params.unwrap_or_else(|| ModelParams::init(&config, seed));
    let out = run_demo(&config, &params, seed, &inputs)?;
    if let Some(path) = &args.links_out {
        let set = LinkSet { links: out.links.clone() };
        let text = serde_json::to_string_pretty(&set).expect("links serialise") + "\n";
        write_output(Some(path), &text)?;
    }
    write_output(args.out.as_deref(), &(out.usg.to_json() + "\n"))
}

/// Result of a demo forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutput {
    pub usg: UniversalSceneGraph,
    pub graphs: Vec<SceneGraph>,
    pub links: Vec<AssociationLink>,
}

struct Decoded {
    /// Queries used for association, labels and relations.
    summary: QuerySet,
    /// Per-frame queries for mask prediction (a single entry for static
    /// modalities).
    frames: Vec<Matrix>,
    /// Pixel features per entry of `frames`.
    pixels: Vec<Matrix>,
}

fn decode_modality(
    modality: Modality,
    features: &[Matrix],
    config: &ModelConfig,
    params: &ModelParams,
    seed: RngSeed,
) -> Result<Decoded, ModelError> {
    let q0 = init_queries(config, modality, seed);
    if modality != Modality::Video {
        let q = run_mask_decoder(&q0, features, config, &params.mask_decoder)?;
        return Ok(Decoded {
            frames: vec![q.queries.clone()],
            pixels: vec![features[0].clone()],
            summary: q,
        });
    }
    let per_frame = features
        .iter()
        .map(|f| run_mask_decoder(&q0, std::slice::from_ref(f), config, &params.mask_decoder))
        .collect::<Result<Vec<_>, _>>()?;
    let encoded = temporal_encode(&per_frame, &params.temporal)?;
    let n = encoded.len() as f64;
    let mut mean = Matrix::zeros(q0.len(), q0.dim());
    for f in &encoded {
        mean = mean.add(&f.queries)?;
    }
    Ok(Decoded {
        summary: QuerySet::new(modality, mean.scale(1.0 / n)),
        frames: encoded.into_iter().map(|f| f.queries).collect(),
        pixels: features.to_vec(),
    })
}

fn node_id(i: usize) -> String {
    format!("q{i}")
}

fn pointset(probs: &[f64], threshold: f64) -> MaskRegion {
    MaskRegion::Pointset {
        points: probs.iter().map(|&p| p >= threshold).collect(),
    }
}

/// The full seeded forward chain: mask decoding, temporal encoding for video,
/// pairwise association and fusion, open-vocabulary labelling, mask
/// prediction, relation proposals and relation decoding, then the merge into
/// one USG.
pub fn run_demo(
    config: &ModelConfig,
    params: &ModelParams,
    seed: RngSeed,
    inputs: &BTreeMap<Modality, Vec<Matrix>>,
) -> CliResult<DemoOutput> {
    let d = config.embed_dim;
    let mut decoded = BTreeMap::new();
    for (&m, features) in inputs {
        decoded.insert(m, decode_modality(m, features, config, params, seed)?);
        debug!("decoded {m} queries");
    }

    let modalities: Vec<Modality> = decoded.keys().copied().collect();
    let mut links = Vec::new();
    let mut partners: BTreeMap<Modality, Vec<(Matrix, QuerySet)>> = BTreeMap::new();
    for (i, &a) in modalities.iter().enumerate() {
        for &b in &modalities[i + 1..] {
            let (qa, qb) = (&decoded[&a].summary, &decoded[&b].summary);
            let assoc = associate(qa, qb, &params.associator)?;
            for (r, c, score) in infer_associations(&assoc.refined, config.association_threshold) {
                links.push(AssociationLink::new(NodeRef(a, node_id(r)), NodeRef(b, node_id(c)), score));
            }
            partners.entry(a).or_default().push((assoc.refined.clone(), qb.clone()));
            partners.entry(b).or_default().push((assoc.refined.transpose(), qa.clone()));
        }
    }
    info!("{} association links", links.len());

    let class_names: Vec<String> = OBJECT_VOCABULARY.iter().map(|s| s.to_string()).collect();
    let class_emb = seed.uniform_matrix("vocab.objects", class_names.len(), d, d);
    let predicate_emb = seed.uniform_matrix("vocab.predicates", PREDICATE_VOCABULARY.len(), d, d);
    let context_parts: Vec<&Matrix> = inputs.values().flatten().collect();
    let context = Matrix::vstack(&context_parts, d).map_err(ModelError::from)?;

    let mut graphs = Vec::new();
    for (&m, dec) in &decoded {
        let refs: Vec<(&Matrix, &QuerySet)> =
            partners.get(&m).map(|v| v.iter().map(|(a, q)| (a, q)).collect()).unwrap_or_default();
        let fused = fuse_queries(&dec.summary, &refs)?;
        let labels = open_vocab_label(&fused.queries, &class_emb, &class_names)?;

        let probs = dec
            .frames
            .iter()
            .zip(&dec.pixels)
            .map(|(q, px)| predict_masks(q, px, &params.mask_decoder.mask_head))
            .collect::<Result<Vec<_>, _>>()?;
        let objects: Vec<ObjectNode> = labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let mut node = ObjectNode::new(m, &node_id(i), label, pointset(probs[0].row(i), config.mask_threshold));
                for (f, p) in probs.iter().enumerate().skip(1) {
                    node = node.with_frame_mask(f as u32, pointset(p.row(i), config.mask_threshold));
                }
                node
            })
            .collect();
        let relations = decode_relations(&fused.queries, &context, &predicate_emb, config, params)?;
        let frame_count = dec.frames.len() as u32;
        graphs.push(build_scene_graph(m, objects, relations, frame_count)?);
    }

    let usg = merge_graphs(graphs.clone(), &links)?;
    Ok(DemoOutput { usg, graphs, links })
}

fn decode_relations(
    queries: &Matrix,
    context: &Matrix,
    predicate_emb: &Matrix,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<Vec<RelationEdge>, ModelError> {
    let n = queries.rows();
    let (e_sub, e_obj) = project_subject_object(queries, &params.projector)?;
    let (x_sub, x_obj) = rpc_refine(&e_sub, &e_obj, &params.rpc)?;
    let confidence = pair_confidence(&x_sub, &x_obj)?;
    let ranked = select_top_k_pairs(&confidence, n * n)?;
    let pairs: Vec<(usize, usize)> = ranked.into_iter().filter(|(i, j)| i != j).take(config.top_k_pairs).collect();
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let q_rel = build_relation_queries(&pairs, &x_sub, &x_obj, &e_sub, &e_obj)?;
    let x_rel = relation_decode(&q_rel, context, &params.relation)?;
    let logits = classify_relations(&x_rel, predicate_emb)?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(r, &(i, j))| {
            let p = crate::model::first_argmax(logits.row(r));
            RelationEdge::new(&node_id(i), PREDICATE_VOCABULARY[p], &node_id(j))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Sample, TripletPrediction};

    #[test]
    fn report_formatting() {
        let gt = SampleFile {
            samples: vec![Sample {
                id: "a".into(),
                triplets: vec![
                    TripletPrediction::new("x", "on", "y", 1.0),
                    TripletPrediction::new("x", "has", "z", 1.0),
                ],
            }],
        };
        let pred = SampleFile {
            samples: vec![Sample { id: "a".into(), triplets: vec![TripletPrediction::new("x", "on", "y", 0.4)] }],
        };
        let report = evaluate(&pred, &gt, &[20], &MatchOptions::default()).unwrap();
        let text = render_report(&report);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(text.contains("\"R@20\": 50.00"));
        assert!(text.contains("\"set_match\": 0.00"));
        assert_eq!(v["per_predicate"]["mR@20"]["on"], 100.0);
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn undefined_metrics_render_null() {
        let empty = SampleFile { samples: vec![Sample { id: "a".into(), triplets: vec![] }] };
        let report = evaluate(&empty, &empty, &[20], &MatchOptions::default()).unwrap();
        let text = render_report(&report);
        assert!(text.contains("\"R@20\": null"));
        assert!(text.contains("\"triple_f1\": 100.00"));
    }

    fn features(seed: u64, label: &str, rows: usize, d: usize) -> Matrix {
        RngSeed(seed).uniform_matrix(label, rows, d, 1)
    }

    #[test]
    fn demo_runs_every_modality() {
        let mut config = ModelConfig::tiny(6, 4);
        config.top_k_pairs = 3;
        let params = ModelParams::init(&config, RngSeed(1));
        let mut inputs = BTreeMap::new();
        inputs.insert(Modality::Text, vec![features(1, "t", 5, 6)]);
        inputs.insert(Modality::Image, vec![features(1, "i0", 9, 6), features(1, "i1", 4, 6)]);
        inputs.insert(Modality::Video, vec![features(1, "v0", 7, 6), features(1, "v1", 7, 6)]);
        inputs.insert(Modality::Point3d, vec![features(1, "p", 8, 6)]);
        let out = run_demo(&config, &params, RngSeed(1), &inputs).unwrap();
        assert_eq!(out.graphs.len(), 4);
        assert_eq!(out.usg.frame_count, 3);
        for g in &out.graphs {
            assert_eq!(g.objects().len(), 4);
            assert!(g.relations().len() <= 3);
            assert!(g.relations().iter().all(|r| r.subject != r.object));
        }
        let again = run_demo(&config, &params, RngSeed(1), &inputs).unwrap();
        assert_eq!(again.usg.to_json(), out.usg.to_json());
    }

    #[test]
    fn single_modality_demo_has_no_links() {
        let config = ModelConfig::tiny(4, 3);
        let params = ModelParams::init(&config, RngSeed(9));
        let inputs = BTreeMap::from([(Modality::Image, vec![features(2, "i", 6, 4)])]);
        let out = run_demo(&config, &params, RngSeed(9), &inputs).unwrap();
        assert!(out.links.is_empty());
        assert_eq!(out.usg.objects.len(), 3);
        assert!(out.usg.provenance.values().all(|p| p.len() == 1));
    }
}
