//! `articukit` command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid input, 2 for I/O failures.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use articukit_core::clustering::{segment_parts, ClusterParams, PartSegmentation};
use articukit_core::experiment::{canonical_json, run_experiment, write_experiment, ExperimentConfig};
use articukit_core::formats::{read_cloud, read_fields, read_scene, write_cloud, write_fields, write_scene, write_seg, EstimateRecord};
use articukit_core::generator::SceneRecipe;
use articukit_core::grasp::propose_candidates;
use articukit_core::kinematics::axis_angular_error;
use articukit_core::metrics::{evaluate_modeling, SceneEstimates};
use articukit_core::planner::{plan_trajectory, receding_horizon_run, PlanConfig};
use articukit_core::scene::{corrupt_fields, ground_truth_fields, sample_cloud, NoiseModel};
use articukit_core::voting::{vote_joint, JointEstimate, DEFAULT_MIN_SUPPORT};
use articukit_core::{ArticulatedObject, Error, JointParams, Result, Vec3};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "articukit", version, about = "Articulated-object modeling and adaptive manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene, its labeled cloud and oracle fields.
    Generate {
        /// Generation spec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output directory for scene-<seed>.{scene.json,cloud,fields}.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a cloud into parts and vote their joints.
    Model {
        #[arg(long)]
        cloud: PathBuf,
        /// Fields file, or `oracle` to derive exact fields from the scene.
        #[arg(long)]
        fields: String,
        /// Scene file for `--fields oracle`; defaults to the cloud's sibling
        /// `<stem>.scene.json`.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Noise model JSON applied to the fields.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Seed of the noise model.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cluster parameters JSON.
        #[arg(long)]
        cluster: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
        min_support: usize,
        /// Also write the segmentation file.
        #[arg(long)]
        seg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan contact-point waypoints under a joint estimate.
    Plan {
        /// Joint JSON with axis_dir, origin and joint_type.
        #[arg(long)]
        psi: PathBuf,
        /// Contact point as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        grasp: Vec3,
        #[arg(long, allow_hyphen_values = true)]
        target: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        current: f64,
        #[arg(long = "L")]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run receding-horizon refinement against a scene.
    Refine {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        psi0: PathBuf,
        /// Run config JSON (part, grasp and plan settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score model outputs against ground-truth scenes.
    Eval {
        /// Directory of `<stem>.json` model outputs.
        #[arg(long)]
        runs: PathBuf,
        /// Directory holding `<stem>.scene.json` and `<stem>.cloud`.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded batch experiment.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad coordinate '{p}'")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x, y, z] if parts.iter().all(|v| v.is_finite()) => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers x,y,z, got '{s}'")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateSpec {
    recipe: SceneRecipe,
    /// Inclusive range of movable parts.
    parts: [usize; 2],
    n_points: usize,
    /// Move joints to random states instead of their lower limits.
    random_state: bool,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self { recipe: SceneRecipe::default(), parts: [1, 3], n_points: 4096, random_state: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RefineRunConfig {
    /// Part to manipulate; defaults to the part of the same joint type whose
    /// axis is closest to `psi0`.
    part_id: Option<u32>,
    /// Contact point; defaults to the top grasp candidate under `psi0`.
    grasp: Option<Vec3>,
    n_points: usize,
    plan: PlanConfig,
}

impl Default for RefineRunConfig {
    fn default() -> Self {
        Self { part_id: None, grasp: None, n_points: 2048, plan: PlanConfig::default() }
    }
}

/// Output of `model`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelOutput {
    format_version: u32,
    /// Indices into the input cloud of the points that were modeled.
    kept: Vec<usize>,
    segmentation: PartSegmentation,
    estimates: Vec<EstimateRecord>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: format!("{}: {e}", path.display()) })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn generate(spec_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let spec: GenerateSpec = read_json(spec_path)?;
    let [lo, hi] = spec.parts;
    if lo == 0 || lo > hi {
        return Err(Error::Validation(format!("parts: need 1 <= lo <= hi, got [{lo}, {hi}]")));
    }
    let n_parts = lo + (seed as usize % (hi - lo + 1));
    let obj = if spec.random_state {
        spec.recipe.random_object(seed, n_parts)?
    } else {
        ArticulatedObject::build(spec.recipe.object_spec(seed, n_parts))?
    };
    let cloud = sample_cloud(&obj, spec.n_points, seed)?;
    let fields = ground_truth_fields(&cloud, &obj)?;
    std::fs::create_dir_all(out)?;
    let stem = out.join(format!("scene-{seed}"));
    write_text(&stem.with_extension("scene.json"), &write_scene(&obj)?)?;
    let mut w = create(&stem.with_extension("cloud"))?;
    write_cloud(&cloud, &mut w)?;
    w.flush()?;
    let mut w = create(&stem.with_extension("fields"))?;
    write_fields(&fields, &mut w)?;
    w.flush()?;
    Ok(())
}

/// `foo.cloud` → `foo.scene.json`.
fn sibling_scene(cloud: &Path) -> PathBuf {
    cloud.with_extension("scene.json")
}

#[allow(clippy::too_many_arguments)]
fn model(
    cloud_path: &Path,
    fields_arg: &str,
    scene: Option<&Path>,
    noise: Option<&Path>,
    seed: u64,
    cluster: Option<&Path>,
    min_support: usize,
    seg_out: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cloud = read_cloud(open(cloud_path)?)?;
    let fields = if fields_arg == "oracle" {
        let scene_path = scene.map_or_else(|| sibling_scene(cloud_path), Path::to_path_buf);
        let obj = read_scene(&read_text(&scene_path)?)?;
        ground_truth_fields(&cloud, &obj)?
    } else {
        read_fields(open(Path::new(fields_arg))?)?
    };
    if fields.len() != cloud.len() {
        return Err(Error::Validation(format!("cloud has {} points but fields have {} rows", cloud.len(), fields.len())));
    }
    let noise = match noise {
        Some(p) => NoiseModel { rng_seed: seed, ..read_json(p)? },
        None => NoiseModel { rng_seed: seed, ..NoiseModel::default() },
    };
    let corrupted = corrupt_fields(&fields, &noise)?;
    let points: Vec<Vec3> = corrupted.kept.iter().map(|&i| cloud.points[i]).collect();
    let params: ClusterParams = match cluster {
        Some(p) => read_json(p)?,
        None => ClusterParams::default(),
    };
    let seg = segment_parts(&points, &corrupted.fields, &params)?;
    let mut estimates = Vec::new();
    for (c, members) in seg.members().iter().enumerate() {
        let pts: Vec<Vec3> = members.iter().map(|&i| points[i]).collect();
        match vote_joint(&pts, &corrupted.fields.subset(members), min_support) {
            Ok(e) => estimates.push(EstimateRecord::new(c as i32, &e)),
            Err(Error::InsufficientSupport { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(p) = seg_out {
        let mut w = create(p)?;
        write_seg(&seg, &mut w)?;
        w.flush()?;
    }
    let output = ModelOutput { format_version: 1, kept: corrupted.kept, segmentation: seg, estimates };
    write_text(out, &serde_json::to_string_pretty(&output)?)
}

fn plan(psi: &Path, grasp: Vec3, target: f64, current: f64, steps: usize, out: &Path) -> Result<()> {
    let psi: JointParams = read_json(psi)?;
    psi.validate()?;
    let t = plan_trajectory(&psi, &grasp, current, target, steps)?;
    write_text(out, &serde_json::to_string_pretty(&t)?)
}

fn refine(scene: &Path, psi0: &Path, config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let mut sim = read_scene(&read_text(scene)?)?;
    let psi0: JointParams = read_json(psi0)?;
    psi0.validate()?;
    let config: RefineRunConfig = match config {
        Some(p) => read_json(p)?,
        None => RefineRunConfig::default(),
    };
    let part_id = match config.part_id {
        Some(id) => id,
        None => sim
            .parts()
            .iter()
            .filter(|p| p.joint.joint_type == psi0.joint_type)
            .map(|p| (axis_angular_error(&psi0.axis_dir, &p.joint.axis_dir).unwrap_or(f64::INFINITY), p.part_id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
            .ok_or_else(|| Error::Validation(format!("scene has no {} part", psi0.joint_type.as_str())))?,
    };
    let estimate = JointEstimate { params: psi0, support: 0, direction_dispersion: 0.0, origin_rms: 0.0 };
    let grasp = {
        let cloud = sample_cloud(&sim, config.n_points, seed)?;
        let pts: Vec<Vec3> = cloud.part_indices(part_id).into_iter().map(|i| cloud.points[i]).collect();
        if pts.is_empty() {
            return Err(Error::Validation(format!("part {part_id} has no sampled points")));
        }
        let mut top = propose_candidates(&pts, None, &estimate, 1)?[0];
        if let Some(g) = config.grasp {
            top.point = g;
            top.index = 0;
        }
        top
    };
    let plan = PlanConfig { rng_seed: seed, ..config.plan };
    let log = receding_horizon_run(&mut sim, part_id, &psi0, &grasp, &plan)?;
    write_text(out, &serde_json::to_string_pretty(&log)?)
}

fn eval(runs: &Path, gt: &Path, out: &Path) -> Result<()> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(runs)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Validation(format!("no model outputs (*.json) in {}", runs.display())));
    }
    let mut scenes = Vec::new();
    for stem in &stems {
        let model: ModelOutput = read_json(&runs.join(format!("{stem}.json")))?;
        let obj = read_scene(&read_text(&gt.join(format!("{stem}.scene.json")))?)?;
        let cloud = read_cloud(open(&gt.join(format!("{stem}.cloud")))?)?;
        if model.kept.len() != model.segmentation.cluster_id.len() || model.kept.iter().any(|&i| i >= cloud.len()) {
            return Err(Error::Validation(format!("{stem}: model output does not fit its cloud")));
        }
        let estimates: BTreeMap<i32, JointEstimate> =
            model.estimates.iter().map(|r| Ok((r.part_id, r.estimate()?))).collect::<Result<_>>()?;
        scenes.push(SceneEstimates {
            scene: obj.spec().rng_seed,
            cluster_id: model.segmentation.cluster_id,
            gt_part_id: model.kept.iter().map(|&i| cloud.part_id[i]).collect(),
            estimates,
            gt: obj.parts().iter().map(|p| (p.part_id, p.joint)).collect(),
        });
    }
    let report = evaluate_modeling(&scenes)?;
    write_text(out, &canonical_json(&report)?)
}

fn experiment(config: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::from_json(&read_text(config)?)?;
    let output = run_experiment(&config)?;
    write_experiment(&output, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, seed, out } => generate(&spec, seed, &out),
        Command::Model { cloud, fields, scene, noise, seed, cluster, min_support, seg, out } => model(
            &cloud,
            &fields,
            scene.as_deref(),
            noise.as_deref(),
            seed,
            cluster.as_deref(),
            min_support,
            seg.as_deref(),
            &out,
        ),
        Command::Plan { psi, grasp, target, current, steps, out } => plan(&psi, grasp, target, current, steps, &out),
        Command::Refine { scene, psi0, config, seed, out } => refine(&scene, &psi0, config.as_deref(), seed, &out),
        Command::Eval { runs, gt, out } => eval(&runs, &gt, &out),
        Command::Experiment { config, out } => experiment(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
