//! Command-line front end. [`main_with_args`] returns the process exit code:
//! 0 on success, 1 on usage or runtime errors, 2 when no private partition
//! exists.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::arch::{build_architecture_seeded, DEFAULT_INPUT, DEFAULT_SEED};
use crate::attack::AttackConfig;
use crate::chart::{self, Panel};
use crate::cost::{calibrate_with_transfer, predict, CostProfile, RuntimeBreakdown, TransferModel};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::io::write_atomic;
use crate::planner::{plan, Decision, FullEnclaveReason, PartitionPlan, PlanRequest};
use crate::pipeline::simulate_pipeline;
use crate::privacy::{
    evaluate_points, evaluate_points_with_reconstructions, synthetic_images, PointPrivacy, PrivacyReport,
    DEFAULT_SLACK, DEFAULT_THRESHOLD,
};
use crate::ssim::SsimParams;
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NO_PRIVATE_PARTITION: i32 = 2;

/// Environment variable that replaces the default seeds. Explicit `--seed`
/// flags still win.
pub const SEED_ENV: &str = "PARTITION_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "splitpoint",
    version,
    about = "Choose and simulate an enclave/accelerator split of a CNN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump a model graph as JSON.
    Build {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate every partition point.
    Enumerate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a cost profile from measured split runtimes.
    Calibrate {
        #[command(flatten)]
        model: ModelArgs,
        /// `LABEL=SECONDS`, repeatable. First and last points are required.
        #[arg(long = "measure", required = true)]
        measurements: Vec<String>,
        #[arg(long)]
        full_enclave: f64,
        #[arg(long)]
        full_accelerator: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict runtime breakdowns from a cost profile.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        /// `builtin:<model>` or a profile JSON path.
        #[arg(long)]
        profile: String,
        /// Restrict to one boundary.
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert the exposed feature map at selected boundaries.
    Attack {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, required = true)]
        boundary: Vec<String>,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for reconstructed images (PGM/PPM).
        #[arg(long)]
        reconstructions: Option<PathBuf>,
    },
    /// Score every boundary and select the optimal one.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an SSIM-vs-boundary SVG chart.
        #[arg(long)]
        chart: Option<PathBuf>,
    },
    /// Choose the fastest private partition point.
    Plan {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        profile: String,
        /// Privacy report CSV.
        #[arg(long)]
        privacy: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full plan with alternatives as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run split inference and print the trust ledger.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        boundary: String,
        #[arg(long)]
        profile: String,
        /// Input tensor (binary or PGM/PPM); a seeded synthetic image if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Ledger CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output tensor destination (binary format).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write plan summary, per-boundary table and chart into a directory.
    Report {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        privacy: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Built-in architecture name or model JSON path.
    #[arg(long)]
    model: String,
    /// Input shape such as `3x64x64` (built-ins only).
    #[arg(long = "input-shape", value_parser = parse_shape)]
    input_shape: Option<ShapeArg>,
    /// Weight seed for built-ins.
    #[arg(long = "weight-seed")]
    weight_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Image directory, or `synthetic:<count>` for seeded test images.
    #[arg(long, default_value = "synthetic:20")]
    images: String,
    #[arg(long, default_value_t = AttackConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = AttackConfig::default().step_size)]
    step_size: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Debug)]
struct ShapeArg(Vec<usize>);

fn parse_shape(text: &str) -> std::result::Result<ShapeArg, String> {
    let dims: Vec<usize> = text
        .split(['x', 'X', ','])
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("`{d}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(format!("invalid shape `{text}`"));
    }
    Ok(ShapeArg(dims))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidParameter(format!("{SEED_ENV}=`{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn seed_or_default(explicit: Option<u64>, default: u64) -> Result<u64> {
    Ok(match explicit {
        Some(s) => s,
        None => env_seed()?.unwrap_or(default),
    })
}

impl ModelArgs {
    fn load(&self) -> Result<ModelGraph> {
        let path = Path::new(&self.model);
        if path.extension().is_some_and(|e| e == "json") || path.is_file() {
            let graph = ModelGraph::from_json(&std::fs::read_to_string(path)?)?;
            return match self.weight_seed {
                Some(seed) => Ok(graph.with_seed(seed)),
                None => Ok(graph),
            };
        }
        let shape = match &self.input_shape {
            Some(s) => s.0.clone(),
            None if self.model.eq_ignore_ascii_case("toy4") => vec![3, 32, 32],
            None => DEFAULT_INPUT.to_vec(),
        };
        build_architecture_seeded(&self.model, &shape, seed_or_default(self.weight_seed, DEFAULT_SEED)?)
    }
}

impl AttackArgs {
    fn config(&self) -> Result<AttackConfig> {
        let cfg = AttackConfig {
            steps: self.steps,
            step_size: self.step_size,
            init_seed: seed_or_default(self.seed, 0)?,
            ..AttackConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn images(&self, shape: &[usize], seed: u64) -> Result<Vec<Tensor>> {
        if let Some(count) = self.images.strip_prefix("synthetic:") {
            let n: usize = count
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad image count `{count}`")))?;
            return synthetic_images(n, shape, seed);
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.images)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let images: Vec<Tensor> = paths.iter().map(|p| load_tensor(p)).collect::<Result<_>>()?;
        if images.is_empty() {
            return Err(Error::InvalidParameter(format!("no images in `{}`", self.images)));
        }
        Ok(images)
    }
}

/// Binary tensor, or PGM/PPM by extension.
fn load_tensor(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if matches!(ext.as_str(), "pgm" | "ppm" | "pnm") {
        Tensor::load_pnm(path)
    } else {
        Tensor::load(path)
    }
}

fn load_profile(spec: &str) -> Result<CostProfile> {
    match spec.strip_prefix("builtin:") {
        Some(name) => CostProfile::builtin(name),
        None => CostProfile::load(Path::new(spec)),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn csv_text(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w)?;
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn breakdown_csv(rows: &[RuntimeBreakdown]) -> Result<String> {
    csv_text(|w| {
        w.write_record([
            "label",
            "enclave_s",
            "transfer_s",
            "accelerator_s",
            "total_s",
            "speedup_percent",
        ])?;
        for b in rows {
            w.write_record([
                b.boundary_label.clone(),
                b.enclave_seconds.to_string(),
                b.transfer_seconds.to_string(),
                b.accelerator_seconds.to_string(),
                b.total_seconds.to_string(),
                format!("{:.2}", b.speedup_percent()),
            ])?;
        }
        Ok(())
    })
}

fn plan_from_files(
    model: &ModelGraph,
    profile: &str,
    privacy: &Path,
    threshold: f64,
    slack: f64,
) -> Result<PartitionPlan> {
    let profile = load_profile(profile)?;
    let report = PrivacyReport::read_csv(std::fs::File::open(privacy)?, model.name(), threshold, slack)?;
    plan(&PlanRequest::new(profile, report).with_threshold(threshold, slack))
}

fn plan_exit_code(plan: &PartitionPlan) -> i32 {
    match plan.decision {
        Decision::FullEnclave {
            reason: FullEnclaveReason::NoPrivatePartition,
        } => {
            eprintln!("no partition point satisfies the privacy threshold; run the whole model in the enclave");
            EXIT_NO_PRIVATE_PARTITION
        }
        Decision::FullEnclave {
            reason: FullEnclaveReason::NoSpeedup,
        } => {
            eprintln!("no private partition point is faster than full-enclave execution");
            EXIT_OK
        }
        Decision::Partition { .. } => EXIT_OK,
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Build { model, out } => {
            let graph = model.load()?;
            emit(out.as_deref(), &(graph.to_json() + "\n"))?;
        }
        Command::Enumerate { model, out } => {
            let graph = model.load()?;
            let text = csv_text(|w| {
                w.write_record([
                    "label",
                    "boundary",
                    "enclave_layers",
                    "accelerator_layers",
                    "enclave_census",
                    "accelerator_census",
                    "exposed_shape",
                    "exposed_bytes",
                ])?;
                for a in graph.enumerate_partitions() {
                    let shape: Vec<String> = a.exposed_tensor_shape.iter().map(|d| d.to_string()).collect();
                    w.write_record([
                        a.boundary_label.clone(),
                        a.boundary.to_string(),
                        format!("{}..{}", a.enclave_layers.start, a.enclave_layers.end),
                        format!("{}..{}", a.accelerator_layers.start, a.accelerator_layers.end),
                        a.enclave_census.to_string(),
                        a.accelerator_census.to_string(),
                        shape.join("x"),
                        a.exposed_tensor_bytes.to_string(),
                    ])?;
                }
                Ok(())
            })?;
            emit(out.as_deref(), &text)?;
        }
        Command::Calibrate {
            model,
            measurements,
            full_enclave,
            full_accelerator,
            out,
        } => {
            let graph = model.load()?;
            let parsed: Vec<(String, f64)> = measurements
                .iter()
                .map(|m| {
                    let (label, secs) = m
                        .rsplit_once('=')
                        .ok_or_else(|| Error::InvalidParameter(format!("expected LABEL=SECONDS, got `{m}`")))?;
                    let secs: f64 = secs
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidParameter(format!("bad seconds in `{m}`")))?;
                    Ok((label.trim().to_string(), secs))
                })
                .collect::<Result<_>>()?;
            let profile = calibrate_with_transfer(
                &graph,
                &parsed,
                full_enclave,
                full_accelerator,
                TransferModel::builtin(),
            )?;
            emit(out.as_deref(), &(profile.to_json() + "\n"))?;
        }
        Command::Predict {
            model,
            profile,
            boundary,
            out,
        } => {
            let graph = model.load()?;
            let profile = load_profile(&profile)?;
            let rows: Vec<RuntimeBreakdown> = match boundary {
                Some(label) => vec![predict(&profile, &graph.assignment_for(&label)?)?],
                None => graph
                    .enumerate_partitions()
                    .iter()
                    .map(|a| predict(&profile, a))
                    .collect::<Result<_>>()?,
            };
            let mut all = vec![profile.full_enclave_breakdown()];
            all.extend(rows);
            emit(out.as_deref(), &breakdown_csv(&all)?)?;
        }
        Command::Attack {
            model,
            boundary,
            attack,
            out,
            reconstructions,
        } => {
            let graph = model.load()?;
            let cfg = attack.config()?;
            let images = attack.images(graph.input_shape(), cfg.init_seed)?;
            let scored =
                evaluate_points_with_reconstructions(&graph, &boundary, &images, &cfg, &SsimParams::default())?;
            if let Some(dir) = &reconstructions {
                write_reconstructions(&scored, dir)?;
            }
            let points = scored.into_iter().map(|(p, _)| p).collect();
            let report = PrivacyReport::new(graph.name(), points, DEFAULT_THRESHOLD, DEFAULT_SLACK);
            emit(out.as_deref(), &report.to_csv())?;
        }
        Command::Evaluate {
            model,
            attack,
            threshold,
            slack,
            out,
            chart: chart_path,
        } => {
            let graph = model.load()?;
            let cfg = attack.config()?;
            let images = attack.images(graph.input_shape(), cfg.init_seed)?;
            let labels: Vec<String> = graph.partition_points().iter().map(|p| p.label.clone()).collect();
            let points = evaluate_points(&graph, &labels, &images, &cfg, &SsimParams::default())?;
            let report = PrivacyReport::new(graph.name(), points, threshold, slack);
            emit(out.as_deref(), &report.to_csv())?;
            if let Some(path) = chart_path {
                let svg = chart::render(
                    &labels,
                    &[Panel {
                        title: format!("{}: reconstruction SSIM by boundary", graph.name()),
                        y_label: "mean SSIM".into(),
                        values: report.per_point.iter().map(|p| p.mean_ssim).collect(),
                        reference: Some(threshold),
                    }],
                );
                write_atomic(&path, svg.as_bytes())?;
            }
            match &report.optimal_boundary {
                Some(label) => eprintln!("optimal boundary: {label}"),
                None => eprintln!("no boundary satisfies the privacy threshold"),
            }
        }
        Command::Plan {
            model,
            profile,
            privacy,
            threshold,
            slack,
            out,
            json,
        } => {
            let graph = model.load()?;
            let p = plan_from_files(&graph, &profile, &privacy, threshold, slack)?;
            emit(out.as_deref(), &p.summary_csv())?;
            if let Some(path) = json {
                write_atomic(&path, (p.to_json() + "\n").as_bytes())?;
            }
            return Ok(plan_exit_code(&p));
        }
        Command::Simulate {
            model,
            boundary,
            profile,
            input,
            out,
            output,
        } => {
            let graph = model.load()?;
            let profile = load_profile(&profile)?;
            let x = match input {
                Some(path) => load_tensor(&path)?,
                None => synthetic_images(1, graph.input_shape(), seed_or_default(None, 0)?)?.remove(0),
            };
            let run = simulate_pipeline(&graph, &boundary, &x, &profile)?;
            emit(out.as_deref(), &run.ledger.to_csv())?;
            if let Some(path) = output {
                run.output.save(&path)?;
            }
            let b = &run.breakdown;
            eprintln!(
                "{}: enclave {:.4} s + transfer {:.4} s + accelerator {:.4} s = {:.4} s ({:.1}% vs full enclave)",
                b.boundary_label,
                b.enclave_seconds,
                b.transfer_seconds,
                b.accelerator_seconds,
                b.total_seconds,
                b.speedup_percent()
            );
        }
        Command::Report {
            model,
            profile,
            privacy,
            threshold,
            slack,
            out,
        } => {
            let graph = model.load()?;
            let p = plan_from_files(&graph, &profile, &privacy, threshold, slack)?;
            std::fs::create_dir_all(&out)?;
            write_atomic(&out.join("summary.csv"), p.summary_csv().as_bytes())?;
            write_atomic(&out.join("plan.json"), (p.to_json() + "\n").as_bytes())?;
            let table = csv_text(|w| {
                w.write_record(["label", "mean_ssim", "feasible", "total_s", "speedup_percent"])?;
                for a in &p.alternatives {
                    w.write_record([
                        a.boundary_label.clone(),
                        a.mean_ssim.to_string(),
                        a.feasible.to_string(),
                        a.breakdown.total_seconds.to_string(),
                        format!("{:.2}", a.breakdown.speedup_percent()),
                    ])?;
                }
                Ok(())
            })?;
            write_atomic(&out.join("boundaries.csv"), table.as_bytes())?;
            let labels: Vec<String> = p.alternatives.iter().map(|a| a.boundary_label.clone()).collect();
            let svg = chart::render(
                &labels,
                &[
                    Panel {
                        title: format!("{}: reconstruction SSIM by boundary", p.model_name),
                        y_label: "mean SSIM".into(),
                        values: p.alternatives.iter().map(|a| a.mean_ssim).collect(),
                        reference: Some(threshold),
                    },
                    Panel {
                        title: format!("{}: predicted inference runtime", p.model_name),
                        y_label: "seconds".into(),
                        values: p.alternatives.iter().map(|a| a.breakdown.total_seconds).collect(),
                        reference: Some(p.full_enclave_seconds),
                    },
                ],
            );
            write_atomic(&out.join("chart.svg"), svg.as_bytes())?;
            emit(None, &p.summary_csv())?;
            return Ok(plan_exit_code(&p));
        }
    }
    Ok(EXIT_OK)
}

fn write_reconstructions(scored: &[(PointPrivacy, Vec<Tensor>)], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (point, recons) in scored {
        let slug: String = point
            .boundary_label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        for (i, recon) in recons.iter().enumerate() {
            recon.save(&dir.join(format!("{slug}_{i:03}.tensor")))?;
            match recon.shape().first() {
                Some(1) => recon.save_pnm(&dir.join(format!("{slug}_{i:03}.pgm")))?,
                Some(3) => recon.save_pnm(&dir.join(format!("{slug}_{i:03}.ppm")))?,
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
