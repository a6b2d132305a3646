//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::brt::{evaluate, train, MlpClassifier, TrainConfig};
use crate::flight::{
    augment_dataset, BrtDataset, FlightParams, GenerationConfig, LandingTargetSet,
};
use crate::hedgehog::{
    generate_hedgehog, HedgehogGrids, VelocityHedgehog, DEFAULT_SIGMA_MIN, DEFAULT_SPEED_CAP,
    DESK_SAMPLES, FULL_SAMPLES,
};
use crate::kinematics::{ArmModel, JointVector, Vec3};
use crate::planner::{Planner, PlannerError, ThrowConfiguration, ThrowQuery};
use crate::sim::{
    height_range, home_state, run_adaptive_scenario, run_latency_benchmark, run_success_benchmark,
    Scenario, SimConfig, SimResult, SCHEMA_VERSION,
};
use crate::trajectory::BoundaryState;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_WRITE: i32 = 3;
pub const EXIT_NO_SOLUTION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "throwplan",
    version,
    about = "Kinematic throw planning for a fixed-base arm"
)]
struct Cli {
    /// Project configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the configuration file.
    #[arg(long, global = true, env = "THROWPLAN_SEED")]
    seed: Option<u64>,
    /// Arm parameter file; the bundled Panda model by default.
    #[arg(long, global = true)]
    arm: Option<PathBuf>,
    /// Directory holding artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Velocity hedgehog commands.
    #[command(subcommand)]
    Hedgehog(HedgehogCmd),
    /// Backward reachable tube data and classifier.
    #[command(subcommand)]
    Brt(BrtCmd),
    /// Plan throwing configurations for a target.
    Plan(PlanArgs),
    /// Execute planned throws and simulate their flight.
    Simulate(SimulateArgs),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Compare re-timing against resampling after a disturbance.
    Adaptive(AdaptiveArgs),
}

#[derive(Debug, Subcommand)]
enum HedgehogCmd {
    Build {
        /// Number of random joint configurations.
        #[arg(long)]
        samples: Option<usize>,
        /// Use the full one-million-sample build.
        #[arg(long = "paper-scale")]
        full_scale: bool,
        #[arg(long, default_value_t = DEFAULT_SIGMA_MIN)]
        sigma_min: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum BrtCmd {
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Train {
        /// Dataset CSV written by `brt generate`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on the dataset as is, without position shifts.
        #[arg(long)]
        no_augment: bool,
    },
}

#[derive(Debug, Args)]
struct ArtifactArgs {
    #[arg(long)]
    hedgehog: Option<PathBuf>,
    #[arg(long)]
    brt: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Box center `x,y,z` [m].
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    target: Vec3,
    /// Current base position `x,y,z` [m].
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
    base: Vec3,
    /// Horizontal throwing direction `x,y`.
    #[arg(long, value_parser = parse_vec2, allow_hyphen_values = true)]
    incident: Option<Vec3>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    artifacts: ArtifactArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Plan file written by `plan`.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    Latency {
        #[arg(long, default_value_t = 8)]
        queries: usize,
        /// Heights cycled through by the queries.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-0.2,0.0,0.2,0.5"
        )]
        heights: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
    Success {
        /// Configurations executed per height.
        #[arg(long, default_value_t = 400)]
        limit: usize,
        #[arg(long, allow_hyphen_values = true, default_value_t = -1.2)]
        z_min: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.9)]
        z_max: f64,
        #[arg(long, default_value_t = 0.1)]
        z_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
}

#[derive(Debug, Args)]
struct AdaptiveArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    artifacts: ArtifactArgs,
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(format!("expected {n} comma-separated numbers")),
    }
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    parse_floats(s, 3).map(|v| Vec3::new(v[0], v[1], v[2]))
}

fn parse_vec2(s: &str) -> Result<Vec3, String> {
    parse_floats(s, 2).map(|v| Vec3::new(v[0], v[1], 0.0))
}

/// Settings shared by all commands; every field is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub arm: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub grids: HedgehogGrids,
    pub target_set: LandingTargetSet,
    pub flight: FlightParams,
    pub generation: GenerationConfig,
    pub training: TrainConfig,
    pub augment_shifts: Vec<f64>,
    pub sim: SimConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            arm: None,
            output_dir: PathBuf::from("artifacts"),
            seed: 0,
            grids: HedgehogGrids::default(),
            target_set: LandingTargetSet::default(),
            flight: FlightParams::default(),
            generation: GenerationConfig::default(),
            training: TrainConfig::default(),
            augment_shifts: vec![-0.05, 0.0, 0.05],
            sim: SimConfig::default(),
        }
    }
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn write_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_WRITE,
        message: e.to_string(),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

fn planner_err(e: PlannerError) -> Failure {
    match e {
        PlannerError::NoSolution => Failure {
            code: EXIT_NO_SOLUTION,
            message: e.to_string(),
        },
        PlannerError::InvalidQuery(_) | PlannerError::GridMismatch => config_err(e),
        other => runtime_err(other),
    }
}

struct Context {
    cfg: ProjectConfig,
    arm: ArmModel,
}

impl Context {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.cfg.output_dir.join(name))
    }

    fn planner(&self, a: &ArtifactArgs) -> Result<Planner, Failure> {
        let hp = self.path(&a.hedgehog, "hedgehog.bin");
        let bp = self.path(&a.brt, "brt.csv");
        let mp = self.path(&a.model, "brt_model.json");
        let hedgehog = VelocityHedgehog::read(&hp)
            .map_err(|e| config_err(format!("{}: {e}", hp.display())))?;
        let data =
            BrtDataset::read(&bp).map_err(|e| config_err(format!("{}: {e}", bp.display())))?;
        let model =
            MlpClassifier::load(&mp).map_err(|e| config_err(format!("{}: {e}", mp.display())))?;
        Ok(Planner::new(
            self.arm.clone(),
            hedgehog,
            &data.positives,
            Box::new(model),
            data.meta.flight,
            data.meta.target_set,
        ))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(write_err)?;
    }
    crate::io::write_atomic(path, text.as_bytes())
        .map_err(|e| write_err(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| write_err(format!("{}: {e}", dir.display())))
        }
        None => Ok(()),
    }
}

/// Report goes to `out` as JSON; stdout gets JSON or the text table.
fn emit<T: Serialize>(
    value: &T,
    text: String,
    out: &Option<PathBuf>,
    json: bool,
) -> Result<(), Failure> {
    if let Some(p) = out {
        write_json(p, value)?;
    }
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(value).map_err(runtime_err)?
        );
    } else {
        print!("{text}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub schema_version: u32,
    pub arm: String,
    pub target: Vec3,
    pub base_position: Vec3,
    pub configurations: Vec<ThrowConfiguration>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub start_q: JointVector,
    pub results: Vec<Option<SimResult>>,
    pub succeeded: usize,
    pub total: usize,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_context(cli: &Cli) -> Result<Context, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ProjectConfig>(&text)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => ProjectConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(a) = &cli.arm {
        cfg.arm = Some(a.clone());
    }
    let arm = match &cfg.arm {
        Some(p) => ArmModel::load(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
        None => ArmModel::panda(),
    };
    Ok(Context { cfg, arm })
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let ctx = load_context(&cli)?;
    match cli.command {
        Command::Hedgehog(HedgehogCmd::Build {
            samples,
            full_scale,
            sigma_min,
            out,
        }) => {
            let n = samples.unwrap_or(if full_scale {
                FULL_SAMPLES
            } else {
                DESK_SAMPLES
            });
            if n == 0 {
                return Err(config_err("--samples must be positive"));
            }
            ctx.cfg.grids.validate().map_err(config_err)?;
            let path = ctx.path(&out, "hedgehog.bin");
            let t = Instant::now();
            let h = generate_hedgehog(
                &ctx.arm,
                n,
                ctx.cfg.seed,
                sigma_min,
                &ctx.cfg.grids,
                DEFAULT_SPEED_CAP,
            )
            .map_err(runtime_err)?;
            ensure_parent(&path)?;
            h.write(&path)
                .map_err(|e| write_err(format!("{}: {e}", path.display())))?;
            let populated: Vec<f64> = h.max_speed.iter().copied().filter(|s| *s > 0.0).collect();
            let mut sorted = populated.clone();
            sorted.sort_by(f64::total_cmp);
            let q = |f: f64| {
                sorted
                    .get(((sorted.len() as f64 - 1.0) * f).round() as usize)
                    .copied()
                    .unwrap_or(0.0)
            };
            println!(
                "hedgehog: {} samples ({} retained), {} of {} cells populated, {:.2} s",
                n,
                h.meta.n_retained,
                populated.len(),
                h.grids.num_cells(),
                t.elapsed().as_secs_f64()
            );
            println!(
                "max speed [m/s]: min {:.3} median {:.3} max {:.3}",
                q(0.0),
                q(0.5),
                q(1.0)
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Brt(BrtCmd::Generate { out }) => {
            let path = ctx.path(&out, "brt.csv");
            let t = Instant::now();
            let ds = BrtDataset::generate(
                &ctx.cfg.target_set,
                &ctx.cfg.generation,
                &ctx.cfg.flight,
                ctx.cfg.seed,
            )
            .map_err(config_err)?;
            let secs = t.elapsed().as_secs_f64();
            ensure_parent(&path)?;
            ds.write(&path)
                .map_err(|e| write_err(format!("{}: {e}", path.display())))?;
            println!(
                "tube data: {} inside, {} outside, generated in {:.3} s",
                ds.positives.len(),
                ds.negatives.len(),
                secs
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Brt(BrtCmd::Train {
            data,
            out,
            epochs,
            no_augment,
        }) => {
            let dp = ctx.path(&data, "brt.csv");
            let path = ctx.path(&out, "brt_model.json");
            let ds =
                BrtDataset::read(&dp).map_err(|e| config_err(format!("{}: {e}", dp.display())))?;
            if ds.positives.is_empty() || ds.negatives.is_empty() {
                return Err(config_err(format!(
                    "{}: training needs both inside and outside samples ({} inside, {} outside)",
                    dp.display(),
                    ds.positives.len(),
                    ds.negatives.len()
                )));
            }
            let train_set = if no_augment {
                ds.clone()
            } else {
                let s = &ctx.cfg.augment_shifts;
                augment_dataset(&ds.positives, &ds.negatives, s, s, ds.meta.clone())
                    .map_err(config_err)?
            };
            let mut tc = ctx.cfg.training.clone();
            tc.seed = ctx.cfg.seed;
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let t = Instant::now();
            let (model, metrics) = train(&train_set, &tc).map_err(config_err)?;
            let secs = t.elapsed().as_secs_f64();
            for e in &metrics.epochs {
                println!(
                    "epoch {:>3}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}",
                    e.epoch, e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy
                );
            }
            let (states, labels) = ds.labeled();
            let raw = evaluate(&model, &states, &labels).map_err(runtime_err)?;
            println!(
                "test accuracy {:.4}, accuracy on unshifted data {:.4}, {:.1} s",
                metrics.last().test_accuracy,
                raw.accuracy,
                secs
            );
            ensure_parent(&path)?;
            model
                .save(&path)
                .map_err(|e| write_err(format!("{}: {e}", path.display())))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Plan(a) => {
            let planner = ctx.planner(&a.artifacts)?;
            let query = ThrowQuery {
                target: a.target,
                base_position: a.base,
                incident: a.incident,
            };
            let plans = planner.plan(&query, a.limit).map_err(planner_err)?;
            let report = PlanReport {
                schema_version: SCHEMA_VERSION,
                arm: planner.model.name.clone(),
                target: a.target,
                base_position: a.base,
                configurations: plans,
            };
            match &a.out {
                Some(p) => {
                    write_json(p, &report)?;
                    println!(
                        "{} configurations written to {}",
                        report.configurations.len(),
                        p.display()
                    );
                }
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).map_err(runtime_err)?
                ),
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let text = std::fs::read_to_string(&a.plan)
                .map_err(|e| config_err(format!("{}: {e}", a.plan.display())))?;
            let plan: PlanReport = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", a.plan.display())))?;
            let start: BoundaryState = home_state();
            let bounds = crate::trajectory::KinematicBounds::for_arm(&ctx.arm);
            let mut results = Vec::with_capacity(plan.configurations.len());
            for cfg in &plan.configurations {
                let r = crate::trajectory::plan_trajectory(&start, &cfg.boundary(), &bounds)
                    .ok()
                    .and_then(|t| crate::sim::execute_throw(&t, cfg, &ctx.arm).ok())
                    .and_then(|rel| {
                        crate::sim::simulate_flight(&rel, &crate::sim::box_for(cfg), &ctx.cfg.sim)
                            .ok()
                    });
                results.push(r);
            }
            let succeeded = results
                .iter()
                .filter(|r| r.is_some_and(|r| r.success))
                .count();
            let report = SimulationReport {
                schema_version: SCHEMA_VERSION,
                start_q: start.q,
                total: results.len(),
                succeeded,
                results,
            };
            let mut t = format!(
                "{:>5} {:>8} {:>10} {:>10}\n",
                "index", "success", "time_s", "miss_m"
            );
            for (i, r) in report.results.iter().enumerate() {
                match r {
                    Some(r) => t.push_str(&format!(
                        "{i:>5} {:>8} {:>10.4} {:>10.4}\n",
                        r.success, r.flight_time, r.miss_distance
                    )),
                    None => t.push_str(&format!("{i:>5} {:>8} {:>10} {:>10}\n", "error", "-", "-")),
                }
            }
            t.push_str(&format!(
                "{} of {} landed in the box\n",
                report.succeeded, report.total
            ));
            emit(&report, t, &a.out, a.json)
        }
        Command::Bench(BenchCmd::Latency {
            queries,
            heights,
            out,
            json,
            artifacts,
        }) => {
            let planner = ctx.planner(&artifacts)?;
            let report = run_latency_benchmark(&planner, &heights, queries, 200, &home_state());
            emit(&report, report.to_text(), &out, json)
        }
        Command::Bench(BenchCmd::Success {
            limit,
            z_min,
            z_max,
            z_step,
            out,
            json,
            artifacts,
        }) => {
            if !(z_step > 0.0) || z_max < z_min {
                return Err(config_err(
                    "height range must satisfy z_min <= z_max and z_step > 0",
                ));
            }
            let planner = ctx.planner(&artifacts)?;
            let heights = height_range(z_min, z_max, z_step);
            let report =
                run_success_benchmark(&planner, &heights, Some(limit), &home_state(), &ctx.cfg.sim)
                    .map_err(runtime_err)?;
            emit(&report, report.to_text(), &out, json)
        }
        Command::Adaptive(a) => {
            let text = std::fs::read_to_string(&a.scenario)
                .map_err(|e| config_err(format!("{}: {e}", a.scenario.display())))?;
            let scenario = Scenario::from_json(&text)
                .map_err(|e| config_err(format!("{}: {e}", a.scenario.display())))?;
            let planner = ctx.planner(&a.artifacts)?;
            let report =
                run_adaptive_scenario(&planner, &scenario, &ctx.cfg.sim).map_err(|e| match e {
                    crate::sim::SimError::Planner(p) => planner_err(p),
                    other => runtime_err(other),
                })?;
            emit(&report, report.to_text(), &a.out, a.json)
        }
    }
}
