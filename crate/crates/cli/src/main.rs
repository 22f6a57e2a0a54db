//! `ptlabel`: batch entry points for every pipeline stage.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ptlabel_core::detect_io::{load_detections, DetectionFormat};
use ptlabel_core::engine::{self, AutolabelParams, PropagateRequest, TrackOp};
use ptlabel_core::eval::{ap_report, count_id_switches, f1_report, full_report, DEFAULT_F1_IOU};
use ptlabel_core::geometry::{Box7, IouMetric, ObjectClass};
use ptlabel_core::ground::GridParams;
use ptlabel_core::refine::{filter_tracks, RefineParams};
use ptlabel_core::store::{load_annotations, EditKind, EditOp, FrameFormat, Project};
use ptlabel_core::synth::{generate_scene, intersection_preset, synth_detector, DetectorConfig, SceneConfig};

#[derive(Parser)]
#[command(name = "ptlabel", version, about = "Semi-automated LiDAR annotation pipeline")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene into a project.
    Synth(SynthArgs),
    /// Run detection preprocessing, tracking and filters; store the result as one edit.
    Autolabel(AutolabelArgs),
    /// Propagate a start box through following frames.
    Propagate(PropagateArgs),
    /// Refine stored tracks.
    Refine(RefineArgs),
    /// Evaluate tracks or detections against ground truth.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Fit a ground model to one frame.
    Ground(GroundArgs),
    /// Serve the HTTP API for a project.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SeqArgs {
    /// Project directory.
    #[arg(long)]
    project: PathBuf,
    /// Sequence id.
    #[arg(long, default_value = "scene")]
    sequence: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bin,
    Ascii,
}

#[derive(Args)]
struct SynthArgs {
    /// Project directory; created when missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "scene")]
    sequence: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    objects: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Scene configuration as JSON; replaces the intersection preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bin")]
    format: FormatArg,
    /// Probability that a ground-truth box is missed by the synthetic detector.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Expected false positives per frame.
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    /// Center noise of detected boxes, meters.
    #[arg(long, default_value_t = 0.0)]
    box_noise: f64,
    /// Skip writing synthetic detections.
    #[arg(long)]
    no_detections: bool,
}

#[derive(Args)]
struct AutolabelArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Detection file (JSON or CSV) to import before running.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Autolabel parameters as JSON.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long)]
    frame: usize,
    /// Start box as `cx,cy,cz,l,w,h,yaw`.
    #[arg(long = "box", value_parser = parse_box, allow_hyphen_values = true)]
    bbox: Box7,
    #[arg(long, value_parser = parse_class)]
    class: ObjectClass,
    /// Extend this track instead of creating a new one.
    #[arg(long)]
    track: Option<u64>,
    /// Number of frames to propagate.
    #[arg(short, long)]
    n: Option<usize>,
}

#[derive(Args)]
struct RefineArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[command(subcommand)]
    action: RefineAction,
}

#[derive(Subcommand)]
enum RefineAction {
    /// Fill frames between keyframes.
    Interpolate {
        #[arg(long)]
        track: u64,
    },
    /// Smooth the center trajectory.
    Smooth {
        #[arg(long)]
        track: u64,
        #[arg(long, default_value_t = ptlabel_core::refine::DEFAULT_SMOOTHING_WEIGHT)]
        weight: f64,
    },
    /// Point boxes along the direction of travel.
    Reorient {
        #[arg(long)]
        track: u64,
        #[arg(long, default_value_t = ptlabel_core::refine::DEFAULT_SPEED_FLOOR)]
        speed_floor: f64,
    },
    /// Collapse a barely moving track to its mean box.
    Average {
        #[arg(long)]
        track: u64,
        #[arg(long)]
        static_displacement: Option<f64>,
    },
    /// Turn boxes around on an inclusive frame range.
    Flip {
        #[arg(long)]
        track: u64,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        end: usize,
    },
    /// Move entries from a frame onwards to another id.
    Idfix {
        #[arg(long)]
        track: u64,
        #[arg(long)]
        from_frame: usize,
        #[arg(long)]
        new_id: u64,
    },
    /// Report tracks failing the length and speed filters.
    Filter,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Per-class precision, recall and F1 of tracks.
    F1(EvalArgs),
    /// Average precision of scored detections.
    Ap(ApArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Bev,
    #[value(name = "3d")]
    ThreeD,
}

impl From<MetricArg> for IouMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Bev => IouMetric::Bev,
            MetricArg::ThreeD => IouMetric::ThreeD,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted tracks (annotation JSON). Defaults to the sequence annotations.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth tracks (annotation JSON). Defaults to the sequence ground truth.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    project: Option<PathBuf>,
    #[arg(long, default_value = "scene")]
    sequence: String,
    #[arg(long, default_value_t = DEFAULT_F1_IOU)]
    iou: f64,
    #[arg(long, value_enum, default_value = "bev")]
    metric: MetricArg,
}

#[derive(Args)]
struct ApArgs {
    /// Detection file. Defaults to the sequence detections.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    project: Option<PathBuf>,
    #[arg(long, default_value = "scene")]
    sequence: String,
}

#[derive(Args)]
struct GroundArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, default_value_t = ptlabel_core::ground::DEFAULT_CELL_SIZE)]
    cell_size: f64,
    #[arg(long, default_value_t = ptlabel_core::ground::DEFAULT_INLIER_THRESHOLD)]
    inlier_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PTLABEL_PROJECT")]
    project: PathBuf,
    #[arg(long, env = "PTLABEL_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn parse_box(s: &str) -> Result<Box7, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>()?;
    let a: [f64; 7] = v.try_into().map_err(|v: Vec<f64>| format!("expected 7 values, got {}", v.len()))?;
    Box7::new([a[0], a[1], a[2]], [a[3], a[4], a[5]], a[6]).map_err(|e| e.to_string())
}

fn parse_class(s: &str) -> Result<ObjectClass, String> {
    ObjectClass::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown class `{s}`"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Output of one command: JSON for `--json`, text otherwise.
struct Report {
    json: Value,
    text: String,
}

fn synth(a: SynthArgs) -> Result<Report> {
    let cfg: SceneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => intersection_preset(a.objects, a.frames, a.seed),
    };
    let seq = generate_scene(&cfg);
    let mut project = if a.out.join(ptlabel_core::store::MANIFEST_FILE).exists() { Project::open(&a.out)? } else { Project::create(&a.out)? };
    let format = match a.format {
        FormatArg::Bin => FrameFormat::Bin,
        FormatArg::Ascii => FrameFormat::Ascii,
    };
    project.add_sequence(&a.sequence, &seq, format)?;
    let mut det_count = None;
    if !a.no_detections {
        let dc = DetectorConfig { dropout: a.dropout, fp_rate: a.fp_rate, box_noise: a.box_noise, ..DetectorConfig::default() };
        let dets = synth_detector(&seq, &dc, cfg.seed);
        det_count = Some(dets.total());
        project.save_detections(&a.sequence, &dets)?;
    }
    let points: usize = seq.frames.iter().map(|f| f.len()).sum();
    Ok(Report {
        json: json!({"sequence": a.sequence, "frames": seq.len(), "points": points, "gt_tracks": seq.gt_tracks.len(), "detections": det_count}),
        text: format!("wrote {} frames ({points} points, {} tracks) to {}", seq.len(), seq.gt_tracks.len(), a.out.display()),
    })
}

fn autolabel(a: AutolabelArgs) -> Result<Report> {
    let mut project = Project::open(&a.seq.project)?;
    let entry = project.entry(&a.seq.sequence)?.clone();
    if let Some(p) = &a.detections {
        let dets = load_detections(p, DetectionFormat::from_path(p), entry.frame_count)?;
        project.save_detections(&a.seq.sequence, &dets)?;
    }
    let dets = project.load_detections(&a.seq.sequence)?;
    let params: AutolabelParams = match &a.params {
        Some(p) => read_json(p)?,
        None => AutolabelParams::default(),
    };
    let timestamps: Vec<f64> = (0..entry.frame_count).map(|f| f as f64 / entry.frame_rate).collect();
    let result = engine::autolabel(&timestamps, &dets, &params)?;
    let mut ann = project.annotations(&a.seq.sequence)?;
    let tracks = engine::renumber_after(&ann.tracks(), result.tracks.clone());
    let ids: std::collections::BTreeMap<u64, u64> = result.tracks.iter().zip(&tracks).map(|(a, b)| (a.id, b.id)).collect();
    let rev = ann.revision();
    ann.apply(rev, &EditOp::PutTracks { kind: EditKind::Autolabel, tracks: tracks.clone(), remove: Vec::new() })?;
    let flagged: Vec<Value> = result.flagged.iter().map(|f| json!({"id": ids[&f.id], "reasons": f.reasons})).collect();
    Ok(Report {
        text: format!("stored {} tracks ({} flagged for review) at revision {}", tracks.len(), flagged.len(), ann.revision()),
        json: json!({"revision": ann.revision(), "track_ids": tracks.iter().map(|t| t.id).collect::<Vec<_>>(), "flagged": flagged}),
    })
}

fn propagate(a: PropagateArgs) -> Result<Report> {
    let project = Project::open(&a.seq.project)?;
    let seq = project.load_sequence(&a.seq.sequence)?;
    let mut ann = project.annotations(&a.seq.sequence)?;
    let req = PropagateRequest { start_frame: a.frame, bbox: a.bbox, class: a.class, track_id: a.track, n: a.n };
    let out = engine::propagate_into(&seq, &ann.tracks(), &req)?;
    let rev = ann.revision();
    ann.apply(rev, &EditOp::PutTracks { kind: EditKind::Propagate, tracks: vec![out.track.clone()], remove: Vec::new() })?;
    let notice = out.notice.map(|n| serde_json::to_value(n).expect("serializable"));
    let mut text = format!("track {}: {} frames added", out.track.id, out.added);
    if let Some(n) = &notice {
        text.push_str(&format!(" (stopped: {})", n["kind"].as_str().unwrap_or("")));
    }
    Ok(Report { json: json!({"revision": ann.revision(), "track_id": out.track.id, "added": out.added, "notice": notice}), text })
}

fn refine(a: RefineArgs) -> Result<Report> {
    let project = Project::open(&a.seq.project)?;
    let frame_rate = project.entry(&a.seq.sequence)?.frame_rate;
    let mut ann = project.annotations(&a.seq.sequence)?;
    let (track, op) = match a.action {
        RefineAction::Filter => {
            let out = filter_tracks(&ann.tracks(), &RefineParams { frame_rate, ..RefineParams::default() });
            let flagged: Vec<Value> = out.flagged.iter().map(|f| json!({"id": f.track.id, "reasons": f.reasons})).collect();
            let text = out
                .flagged
                .iter()
                .map(|f| format!("track {}: {}", f.track.id, serde_json::to_string(&f.reasons).expect("serializable")))
                .chain(std::iter::once(format!("{} kept, {} flagged", out.kept.len(), out.flagged.len())))
                .collect::<Vec<_>>()
                .join("\n");
            return Ok(Report { json: json!({"kept": out.kept.iter().map(|t| t.id).collect::<Vec<_>>(), "flagged": flagged}), text });
        }
        RefineAction::Interpolate { track } => (track, TrackOp::Interpolate),
        RefineAction::Smooth { track, weight } => (track, TrackOp::Smooth { weight }),
        RefineAction::Reorient { track, speed_floor } => (track, TrackOp::Reorient { speed_floor }),
        RefineAction::Average { track, static_displacement } => (track, TrackOp::Average { static_displacement }),
        RefineAction::Flip { track, start, end } => (track, TrackOp::Flip { start, end }),
        RefineAction::Idfix { track, from_frame, new_id } => (track, TrackOp::Idfix { from_frame, new_id }),
    };
    let result = engine::apply_track_op(&ann.tracks(), track, &op, frame_rate)?;
    let rev = ann.revision();
    let record = ann.apply(rev, &EditOp::PutTracks { kind: op.edit_kind(), tracks: result.put, remove: result.remove })?;
    Ok(Report {
        text: format!("{:?} on track {track}: revision {}", record.kind, ann.revision()).to_lowercase(),
        json: json!({"revision": ann.revision(), "kind": record.kind, "track_ids": record.track_ids()}),
    })
}

fn eval_f1(a: EvalArgs) -> Result<Report> {
    let project = a.project.as_deref().map(Project::open).transpose()?;
    let need = |what: &str| anyhow!("no {what} given: pass --{what} or --project");
    let pred = match (&a.pred, &project) {
        (Some(p), _) => load_annotations(p)?,
        (None, Some(pr)) => pr.annotations(&a.sequence)?.tracks(),
        (None, None) => return Err(need("pred")),
    };
    let gt = match (&a.gt, &project) {
        (Some(p), _) => load_annotations(p)?,
        (None, Some(pr)) => pr.ground_truth(&a.sequence)?.ok_or_else(|| anyhow!("sequence `{}` has no ground truth", a.sequence))?,
        (None, None) => return Err(need("gt")),
    };
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        bail!("--iou must be in (0, 1]");
    }
    let metric = IouMetric::from(a.metric);
    let report = match &project {
        Some(pr) if a.pred.is_none() && pr.has_detections(&a.sequence) => full_report(&pred, &pr.load_detections(&a.sequence)?, &gt, a.iou, metric),
        _ => f1_report(&pred, &gt, a.iou, metric),
    };
    let switches = count_id_switches(&pred, &gt, a.iou);
    let mut json = serde_json::to_value(&report)?;
    json["id_switches"] = json!(switches);
    Ok(Report { text: format!("{}F1 {:.4}  id switches {switches}", report.to_table(), report.overall.f1), json })
}

fn eval_ap(a: ApArgs) -> Result<Report> {
    let project = a.project.as_deref().map(Project::open).transpose()?;
    let gt = match (&a.gt, &project) {
        (Some(p), _) => load_annotations(p)?,
        (None, Some(pr)) => pr.ground_truth(&a.sequence)?.ok_or_else(|| anyhow!("sequence `{}` has no ground truth", a.sequence))?,
        (None, None) => bail!("no ground truth given: pass --gt or --project"),
    };
    let frames = gt.iter().filter_map(|t| t.last_frame()).max().map_or(0, |f| f + 1);
    let dets = match (&a.detections, &project) {
        (Some(p), Some(pr)) => load_detections(p, DetectionFormat::from_path(p), pr.entry(&a.sequence)?.frame_count)?,
        (Some(p), None) => load_detections(p, DetectionFormat::from_path(p), frames)?,
        (None, Some(pr)) => pr.load_detections(&a.sequence)?,
        (None, None) => bail!("no detections given: pass --detections or --project"),
    };
    let report = ap_report(&dets, &gt);
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut text = format!("{:<12}{:>10}{:>10}\n", "class", "AP 3d", "AP bev");
    let mut json = serde_json::Map::new();
    for (class, (a3, ab)) in &report {
        text.push_str(&format!("{:<12}{:>10}{:>10}\n", class.as_str(), fmt(*a3), fmt(*ab)));
        json.insert(class.as_str().into(), json!({"ap_3d": a3, "ap_bev": ab}));
    }
    Ok(Report { json: Value::Object(json), text: text.trim_end().to_string() })
}

fn ground(a: GroundArgs) -> Result<Report> {
    let mut project = Project::open(&a.seq.project)?;
    let cloud = project.load_frame(&a.seq.sequence, a.frame)?;
    let params = GridParams { cell_size: a.cell_size, inlier_threshold: a.inlier_threshold, seed: a.seed, ..GridParams::default() };
    let model = engine::fit_ground(&cloud, &params)?;
    project.save_ground_model(&a.seq.sequence, &model)?;
    let plane = model.plane.as_array();
    Ok(Report {
        text: format!("plane {:.4}x + {:.4}y + {:.4}z + {:.4} = 0, grid {}x{}", plane[0], plane[1], plane[2], plane[3], model.nx, model.ny),
        json: json!({"plane": plane, "nx": model.nx, "ny": model.ny}),
    })
}

fn run(cli: Cli) -> Result<Option<Report>> {
    Ok(Some(match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Autolabel(a) => autolabel(a)?,
        Command::Propagate(a) => propagate(a)?,
        Command::Refine(a) => refine(a)?,
        Command::Eval { metric: EvalCommand::F1(a) } => eval_f1(a)?,
        Command::Eval { metric: EvalCommand::Ap(a) } => eval_ap(a)?,
        Command::Ground(a) => ground(a)?,
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ptlabel_server::serve(&a.project, a.addr)).map_err(|e| anyhow!(e))?;
            return Ok(None);
        }
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let as_json = cli.json;
    match run(cli) {
        Ok(Some(r)) => {
            if as_json {
                println!("{}", r.json);
            } else {
                println!("{}", r.text);
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            if as_json {
                println!("{}", json!({"error": format!("{e:#}")}));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
