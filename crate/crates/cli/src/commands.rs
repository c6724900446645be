//! Subcommand bodies. Each stage takes the effective configuration, writes
//! its artifacts plus provenance sidecars, and returns a JSON summary that
//! the wrapper prints on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use hoiprior::aggregation::{
    aggregate as aggregate_views, assign_accumulation_scores, bin_counts, infer_posed,
    interaction_region, selective_aggregate, view_bones,
};
use hoiprior::body::{BodyMesh, BodyPart, PoseParams};
use hoiprior::camera::{
    azimuth_of, camera_entropy, entropy::DEFAULT_SIGMA, fit_perspective, FitConfig,
};
use hoiprior::config::{AggregationMode, PipelineConfig};
use hoiprior::dataset::{read_json, view_json_path, write_json, Dataset};
use hoiprior::filtering::{filter_record, read_records, rejection_report, Decision, FilterProfile};
use hoiprior::grid::OccupancyField;
use hoiprior::mesh::{marching_cubes_with, write_mesh, MeshFormat};
use hoiprior::pap::{score_sample, summarize, EvalSample};
use hoiprior::skinning::canonical_weight_field;
use hoiprior::synth::generate_dataset;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{stamp, ConfigArg};

pub struct StageError {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

pub type StageResult = std::result::Result<(), StageError>;

trait AtStage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Reports a failed stage as one JSON object on stderr.
pub fn fail(stage: &str, error: &anyhow::Error) -> ExitCode {
    let msg = json!({ "stage": stage, "error": format!("{error:#}") });
    eprintln!("{msg}");
    ExitCode::FAILURE
}

fn print(summary: &Value) {
    println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    match &arg.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json_artifact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn read_field(path: &Path) -> Result<OccupancyField> {
    let field =
        OccupancyField::read_chor(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match stamp::read_tag(path) {
        Some(tag) => field.with_tag(tag),
        None => field,
    })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

// ---------------------------------------------------------------- stages

fn synth_stage(cfg: &PipelineConfig, out: &Path) -> Result<Value> {
    let scene = cfg
        .scene()
        .ok_or_else(|| anyhow!("the config has no \"synth\" section"))?;
    scene.validate()?;
    let body = BodyMesh::default();
    let weights = if scene.needs_weights() {
        Some(canonical_weight_field(&body, &scene.grid, &cfg.skinning)?)
    } else {
        None
    };
    let ds = generate_dataset(&scene, &body, weights.as_ref())?;
    ds.write(out)
        .with_context(|| format!("writing dataset {}", out.display()))?;
    stamp::write(out, "synth-generate", cfg, None)?;
    Ok(json!({
        "dataset": out,
        "views": ds.views.len(),
        "prompts": ds.meta.prompts,
        "oracles": ds.oracles.iter().map(|o| &o.entry.path).collect::<Vec<_>>(),
    }))
}

fn aggregate_stage(cfg: &mut PipelineConfig, dataset: &Path, out: &Path) -> Result<Value> {
    let ds = load_dataset(dataset)?;
    if cfg.grid != ds.meta.grid {
        log::info!("using the dataset grid instead of the configured one");
        cfg.grid = ds.meta.grid;
    }
    if let Some(seed) = ds.meta.seed {
        cfg.seed = seed;
    }
    let body = BodyMesh::default();
    let weights = canonical_weight_field(&body, &cfg.grid, &cfg.skinning)?;
    let mut views = ds.views;
    let dropped = assign_accumulation_scores(&mut views, cfg.aggregation.bins);
    if !dropped.is_empty() {
        log::warn!("{} views without a defined azimuth were dropped", dropped.len());
    }
    let bones = view_bones(&body, &views)?;
    let (field, used) = match &cfg.aggregation.mode {
        AggregationMode::Holistic => (
            aggregate_views(&views, &weights, &bones, &cfg.grid)?,
            views.len(),
        ),
        AggregationMode::Semantic { prompt, part } => {
            let region = interaction_region(&body, *part, cfg.aggregation.epsilon, &cfg.grid)?;
            let (field, stats) =
                selective_aggregate(&views, prompt, &region, &weights, &bones, &cfg.grid)?;
            log::info!(
                "{} views used, {} of other prompts, {} without contact",
                stats.used,
                stats.other_prompt,
                stats.no_contact
            );
            (field, stats.used)
        }
    };
    ensure_parent(out)?;
    field
        .write_chor(out)
        .with_context(|| format!("writing {}", out.display()))?;
    stamp::write(out, "aggregate", cfg, Some(field.tag.clone()))?;
    Ok(json!({
        "field": out,
        "views": views.len(),
        "used": used,
        "tag": field.tag,
        "max": field.max_value(),
    }))
}

pub struct EvalArgs {
    pub field: PathBuf,
    pub dataset: PathBuf,
    pub mode: Option<hoiprior::pap::ApMode>,
    pub hoa: bool,
    pub interpolation: Option<hoiprior::pap::Interpolation>,
    pub prompt: Option<String>,
    pub posed: bool,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

fn eval_stage(cfg: &PipelineConfig, args: &EvalArgs) -> Result<Value> {
    let field = read_field(&args.field)?;
    let ds = load_dataset(&args.dataset)?;
    let body = BodyMesh::default();
    let mut scores = Vec::new();
    for view in &ds.views {
        if args.prompt.as_ref().is_some_and(|p| &view.prompt != p) {
            continue;
        }
        let posed = if args.posed {
            field.clone()
        } else {
            infer_posed(&field, &view.pose, &body, &cfg.skinning)?
        };
        let sample = EvalSample {
            id: format!("{:05}", view.id),
            field: posed,
            camera: view.camera.clone(),
            gt_mask: view.object_mask.clone(),
            human_mask: view.human_mask.clone(),
        };
        scores.push(score_sample(&sample, &cfg.pap)?);
    }
    if scores.is_empty() {
        bail!("no views to evaluate");
    }
    let report = summarize(scores, &cfg.pap)?;
    if report.skipped_empty_gt > 0 {
        log::info!(
            "{} views with an empty ground-truth mask were skipped",
            report.skipped_empty_gt
        );
    }
    if let Some(out) = &args.out {
        ensure_parent(out)?;
        let mut csv = String::from("sample_id,ap\n");
        for s in &report.samples {
            csv.push_str(&format!("{},{:.9}\n", s.id, s.ap));
        }
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        stamp::write(out, "eval-pap", cfg, Some(field.tag.clone()))?;
    }
    let summary = json!({
        "pap": report.pap,
        "mode": report.mode,
        "hoa": report.hoa,
        "n": report.n,
    });
    if let Some(path) = &args.summary {
        ensure_parent(path)?;
        write_json_artifact(path, &summary)?;
        stamp::write(path, "eval-pap", cfg, Some(field.tag.clone()))?;
    }
    Ok(summary)
}

fn mesh_stage(cfg: &PipelineConfig, field_path: &Path, out: &Path) -> Result<Value> {
    let format = MeshFormat::from_path(out)
        .ok_or_else(|| anyhow!("{}: expected a .obj or .ply extension", out.display()))?;
    let field = read_field(field_path)?;
    let mesh = marching_cubes_with(&field, &cfg.mesh)?;
    ensure_parent(out)?;
    write_mesh(&mesh, out, format).with_context(|| format!("writing {}", out.display()))?;
    stamp::write(out, "export-mesh", cfg, Some(field.tag.clone()))?;
    Ok(json!({
        "mesh": out,
        "vertices": mesh.vertices.len(),
        "triangles": mesh.triangles.len(),
        "closed": mesh.is_closed(),
        "volume": mesh.signed_volume(),
    }))
}

#[derive(Serialize)]
struct Rejections {
    records: usize,
    rejected: usize,
    rejection_rate_percent: f64,
    reasons: BTreeMap<String, usize>,
}

fn rejections(cfg: &PipelineConfig, path: &Path, category: &str) -> Result<(Rejections, String)> {
    let records = read_records(path).with_context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        bail!("{}: no detection records", path.display());
    }
    let th = cfg.filter.thresholds();
    let mut reasons = BTreeMap::new();
    for r in &records {
        if let Decision::Reject(reason) = filter_record(r, category, &th) {
            *reasons.entry(reason.code().to_string()).or_insert(0) += 1;
        }
    }
    let rejected: usize = reasons.values().sum();
    Ok((
        Rejections {
            records: records.len(),
            rejected,
            rejection_rate_percent: 100.0 * rejected as f64 / records.len() as f64,
            reasons,
        },
        rejection_report(&records, category, &th),
    ))
}

fn diagnostics_stage(
    cfg: &PipelineConfig,
    dataset: &Path,
    records: Option<&Path>,
    category: Option<&str>,
) -> Result<Value> {
    let ds = load_dataset(dataset)?;
    let cams: Vec<_> = ds.records.iter().map(|r| r.camera.clone()).collect();
    let mut prompts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &ds.views {
        *prompts.entry(v.prompt.as_str()).or_insert(0) += 1;
    }
    let default_records = dataset.join("records.jsonl");
    let records = records
        .map(Path::to_path_buf)
        .or_else(|| default_records.exists().then_some(default_records));
    let rejection = match records {
        Some(p) => {
            let cat = category.unwrap_or(&ds.meta.category);
            Some(rejections(cfg, &p, cat)?.0)
        }
        None => None,
    };
    Ok(json!({
        "views": ds.views.len(),
        "camera_entropy_bits": camera_entropy(&cams, DEFAULT_SIGMA),
        "bin_counts": bin_counts(&cams, cfg.aggregation.bins),
        "prompt_counts": prompts,
        "rejection": rejection,
    }))
}

// ---------------------------------------------------------------- commands

pub fn synth_generate(arg: &ConfigArg, out: &Path, seed: Option<u64>) -> StageResult {
    const STAGE: &str = "synth-generate";
    let mut cfg = load_config(arg).at(STAGE)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    print(&synth_stage(&cfg, out).at(STAGE)?);
    Ok(())
}

pub fn filter(
    arg: &ConfigArg,
    records: &Path,
    category: Option<String>,
    profile: Option<FilterProfile>,
    out: Option<&Path>,
) -> StageResult {
    const STAGE: &str = "filter";
    let run = || -> Result<Value> {
        let mut cfg = load_config(arg)?;
        if let Some(c) = category {
            cfg.filter.category = c;
        }
        if let Some(p) = profile {
            cfg.filter.profile = p;
        }
        let (summary, csv) = rejections(&cfg, records, &cfg.filter.category)?;
        if let Some(out) = out {
            ensure_parent(out)?;
            fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
            stamp::write(out, STAGE, &cfg, None)?;
        }
        Ok(serde_json::to_value(summary)?)
    };
    print(&run().at(STAGE)?);
    Ok(())
}

#[derive(Serialize)]
struct FitEntry {
    id: u32,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    rms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    azimuth_error_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    camera: Option<hoiprior::camera::PerspectiveCam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn calibrate(
    arg: &ConfigArg,
    dataset: &Path,
    profile: Option<FilterProfile>,
    out: Option<&Path>,
    apply: bool,
) -> StageResult {
    const STAGE: &str = "calibrate";
    let run = || -> Result<Value> {
        let mut cfg = load_config(arg)?;
        if profile == Some(FilterProfile::Eval) {
            cfg.calibration = FitConfig::eval_profile();
        }
        let ds = load_dataset(dataset)?;
        let entries: Vec<FitEntry> = ds
            .records
            .par_iter()
            .map(|rec| {
                let Some(sample) = &rec.calibration else {
                    return FitEntry {
                        id: rec.id,
                        ok: false,
                        rms: None,
                        iterations: None,
                        azimuth_error_deg: None,
                        camera: None,
                        error: Some("no calibration sample".into()),
                    };
                };
                match fit_perspective(sample, &cfg.calibration) {
                    Ok(fit) => {
                        let az = rec.gt_camera.as_ref().and_then(|gt| {
                            let d = (azimuth_of(&fit.camera).ok()? - azimuth_of(gt).ok()?)
                                .rem_euclid(std::f64::consts::TAU);
                            Some(d.min(std::f64::consts::TAU - d).to_degrees())
                        });
                        FitEntry {
                            id: rec.id,
                            ok: true,
                            rms: Some(fit.rms),
                            iterations: Some(fit.iterations),
                            azimuth_error_deg: az,
                            camera: Some(fit.camera),
                            error: None,
                        }
                    }
                    Err(e) => FitEntry {
                        id: rec.id,
                        ok: false,
                        rms: None,
                        iterations: None,
                        azimuth_error_deg: None,
                        camera: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        if apply {
            for (rec, e) in ds.records.iter().zip(&entries) {
                if let Some(cam) = &e.camera {
                    let mut rec = rec.clone();
                    rec.camera = cam.clone();
                    write_json_artifact(&view_json_path(dataset, rec.id), &rec)?;
                }
            }
        }
        if let Some(out) = out {
            ensure_parent(out)?;
            write_json_artifact(out, &entries)?;
            stamp::write(out, STAGE, &cfg, None)?;
        }
        let fitted: Vec<f64> = entries.iter().filter_map(|e| e.rms).collect();
        Ok(json!({
            "views": entries.len(),
            "fitted": fitted.len(),
            "failed": entries.len() - fitted.len(),
            "mean_rms": if fitted.is_empty() { None } else { Some(fitted.iter().sum::<f64>() / fitted.len() as f64) },
            "applied": apply,
        }))
    };
    print(&run().at(STAGE)?);
    Ok(())
}

pub fn aggregate(
    arg: &ConfigArg,
    dataset: &Path,
    out: &Path,
    semantic: Option<(String, BodyPart)>,
) -> StageResult {
    const STAGE: &str = "aggregate";
    let mut cfg = load_config(arg).at(STAGE)?;
    if let Some((prompt, part)) = semantic {
        cfg.aggregation.mode = AggregationMode::Semantic { prompt, part };
    }
    print(&aggregate_stage(&mut cfg, dataset, out).at(STAGE)?);
    Ok(())
}

pub fn infer(
    arg: &ConfigArg,
    field: &Path,
    pose: Option<&Path>,
    view: Option<(&Path, u32)>,
    out: &Path,
) -> StageResult {
    const STAGE: &str = "infer";
    let run = || -> Result<Value> {
        let cfg = load_config(arg)?;
        let pose: PoseParams = match (pose, view) {
            (Some(p), _) => read_json(p).with_context(|| format!("reading {}", p.display()))?,
            (None, Some((dataset, id))) => {
                let p = view_json_path(dataset, id);
                let rec: hoiprior::dataset::ViewRecord =
                    read_json(&p).with_context(|| format!("reading {}", p.display()))?;
                rec.pose
            }
            (None, None) => bail!("give --pose or --dataset with --view"),
        };
        let canonical = read_field(field)?;
        let body = BodyMesh::default();
        let posed = infer_posed(&canonical, &pose, &body, &cfg.skinning)?;
        ensure_parent(out)?;
        posed
            .write_chor(out)
            .with_context(|| format!("writing {}", out.display()))?;
        stamp::write(out, STAGE, &cfg, Some(posed.tag.clone()))?;
        Ok(json!({ "field": out, "tag": posed.tag, "max": posed.max_value() }))
    };
    print(&run().at(STAGE)?);
    Ok(())
}

pub fn eval_pap(arg: &ConfigArg, args: &EvalArgs) -> StageResult {
    const STAGE: &str = "eval-pap";
    let mut cfg = load_config(arg).at(STAGE)?;
    if let Some(m) = args.mode {
        cfg.pap.mode = m;
    }
    if args.hoa {
        cfg.pap.occlusion_aware = true;
    }
    if let Some(i) = args.interpolation {
        cfg.pap.interpolation = i;
    }
    print(&eval_stage(&cfg, args).at(STAGE)?);
    Ok(())
}

pub fn export_mesh(
    arg: &ConfigArg,
    field: &Path,
    iso: Option<f64>,
    out: &Path,
    no_clamp: bool,
) -> StageResult {
    const STAGE: &str = "export-mesh";
    let run = || -> Result<Value> {
        let mut cfg = load_config(arg)?;
        if let Some(i) = iso {
            cfg.mesh.iso = i;
        }
        if no_clamp {
            cfg.mesh.clamp_boundary = false;
        }
        cfg.validate()?;
        mesh_stage(&cfg, field, out)
    };
    print(&run().at(STAGE)?);
    Ok(())
}

pub fn diagnostics(
    arg: &ConfigArg,
    dataset: &Path,
    records: Option<&Path>,
    category: Option<String>,
    out: Option<&Path>,
) -> StageResult {
    const STAGE: &str = "diagnostics";
    let run = || -> Result<Value> {
        let cfg = load_config(arg)?;
        let report = diagnostics_stage(&cfg, dataset, records, category.as_deref())?;
        if let Some(out) = out {
            ensure_parent(out)?;
            write_json_artifact(out, &report)?;
            stamp::write(out, STAGE, &cfg, None)?;
        }
        Ok(report)
    };
    print(&run().at(STAGE)?);
    Ok(())
}

/// Generates a dataset from the config's scene, aggregates it with the
/// configured mode, scores the field on the same views, exports the surface,
/// and collects diagnostics, all under `out`.
pub fn run(arg: &ConfigArg, out: &Path) -> StageResult {
    let cfg = load_config(arg).at("run")?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .at("run")?;
    let dataset = out.join("dataset");
    let field = out.join("field.chor");

    let synth = synth_stage(&cfg, &dataset).at("synth-generate")?;
    let mut agg_cfg = cfg.clone();
    let agg = aggregate_stage(&mut agg_cfg, &dataset, &field).at("aggregate")?;
    let prompt = match &cfg.aggregation.mode {
        AggregationMode::Semantic { prompt, .. } => Some(prompt.clone()),
        AggregationMode::Holistic => None,
    };
    let eval = eval_stage(
        &agg_cfg,
        &EvalArgs {
            field: field.clone(),
            dataset: dataset.clone(),
            mode: None,
            hoa: agg_cfg.pap.occlusion_aware,
            interpolation: None,
            prompt,
            posed: false,
            out: Some(out.join("pap.csv")),
            summary: Some(out.join("summary.json")),
        },
    )
    .at("eval-pap")?;
    let mesh = mesh_stage(&agg_cfg, &field, &out.join("mesh.obj")).at("export-mesh")?;
    let diag = diagnostics_stage(&agg_cfg, &dataset, None, None).at("diagnostics")?;
    write_json_artifact(&out.join("diagnostics.json"), &diag)
        .and_then(|_| stamp::write(&out.join("diagnostics.json"), "diagnostics", &agg_cfg, None))
        .at("diagnostics")?;
    print(&json!({
        "synth-generate": synth,
        "aggregate": agg,
        "eval-pap": eval,
        "export-mesh": mesh,
        "diagnostics": diag,
    }));
    Ok(())
}
