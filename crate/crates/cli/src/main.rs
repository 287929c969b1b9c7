use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rgbt_saliency::graph::{build_modality_graph, build_topology, write_edge_csv};
use rgbt_saliency::imageio::{read_saliency, rgb_to_lab, write_saliency};
use rgbt_saliency::metrics::evaluate;
use rgbt_saliency::pipeline::{detect_with, write_stage_dump, StageTimings};
use rgbt_saliency::ranking::{MultitaskRanker, Ranker, RankingProblem, RankingSolution};
use rgbt_saliency::superpixel::{compute_features, Side};
use rgbt_saliency::{load_ground_truth, load_manifest, load_pair, AlignedImagePair, PipelineParams};

mod config;

use config::ConfigFile;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntarget: ",
    env!("BUILD_TARGET"),
    "\nprofile: ",
    env!("BUILD_PROFILE"),
);

#[derive(Parser, Debug)]
#[command(name = "rgbt-saliency", version, long_version = LONG_VERSION)]
#[command(about = "Salient object detection on aligned RGB and thermal image pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect saliency for one image pair and write an 8-bit PNG.
    Detect {
        rgb: PathBuf,
        thermal: PathBuf,
        out: PathBuf,
        /// Write superpixels, per-stage scores, edges and solver traces here.
        #[arg(long, value_name = "DIR")]
        dump_stages: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Detect every pair of a dataset manifest into `<out_dir>/<id>.png`.
    Batch {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_name = "N")]
        workers: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Score saliency maps against the manifest's ground truth.
    Eval {
        manifest: PathBuf,
        maps_dir: PathBuf,
        /// JSON report path; CSV and SVG companions are written beside it.
        report_out: PathBuf,
    },
    /// Time each pipeline stage over repeated runs and print medians.
    Bench {
        rgb: PathBuf,
        thermal: PathBuf,
        #[arg(long, value_name = "R")]
        repeat: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Args, Debug, Default)]
struct ParamArgs {
    /// Flat `key = value` file using the long flag names as keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Target superpixel count [default: 300]
    #[arg(long, value_name = "INT", allow_negative_numbers = true)]
    n: Option<String>,
    /// SLIC compactness [default: 10]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    compactness: Option<String>,
    /// RGB affinity scale [default: 24]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    gamma_rgb: Option<String>,
    /// Thermal affinity scale [default: 12]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    gamma_thermal: Option<String>,
    /// Fitting weight of the boundary stage [default: 0.02]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    mu1: Option<String>,
    /// Fitting weight of the foreground stage [default: 0.06]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    mu2: Option<String>,
    /// Cross-modality consistency weight [default: 0.03]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    lambda: Option<String>,
    /// Foreground query margin [default: 0.25]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    epsilon: Option<String>,
}

impl ParamArgs {
    fn flags(&self) -> [(&'static str, Option<&String>); 8] {
        [
            ("n", self.n.as_ref()),
            ("compactness", self.compactness.as_ref()),
            ("gamma-rgb", self.gamma_rgb.as_ref()),
            ("gamma-thermal", self.gamma_thermal.as_ref()),
            ("mu1", self.mu1.as_ref()),
            ("mu2", self.mu2.as_ref()),
            ("lambda", self.lambda.as_ref()),
            ("epsilon", self.epsilon.as_ref()),
        ]
    }

    /// Defaults, then the config file, then flags; validated.
    fn resolve(&self) -> Result<(PipelineParams, ConfigFile), Usage> {
        let config = match &self.config {
            Some(path) => ConfigFile::load(path).map_err(Usage)?,
            None => ConfigFile::default(),
        };
        let mut params = PipelineParams::default();
        config.apply(&mut params).map_err(Usage)?;
        for (key, value) in self.flags() {
            if let Some(v) = value {
                params.set(key, v).map_err(|e| Usage(e.into()))?;
            }
        }
        params.validate().map_err(|e| Usage(e.into()))?;
        Ok((params, config))
    }
}

/// Bad flags or configuration; reported with exit status 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn count(flag: Option<&String>, config: &ConfigFile, key: &str, default: usize) -> Result<usize, Usage> {
    let Some(text) = flag.map(String::as_str).or_else(|| config.get(key)) else {
        return Ok(default);
    };
    match text.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(Usage(anyhow::anyhow!("{key} must be a positive integer, got {text:?}"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Detect {
            rgb,
            thermal,
            out,
            dump_stages,
            params,
        } => {
            let (params, config) = params.resolve()?;
            let dump = dump_stages.or_else(|| config.get("dump-stages").map(PathBuf::from));
            cmd_detect(&rgb, &thermal, &out, &params, dump.as_deref())?;
        }
        Command::Batch {
            manifest,
            out_dir,
            workers,
            params,
        } => {
            let (params, config) = params.resolve()?;
            let workers = count(workers.as_ref(), &config, "workers", 1)?;
            return cmd_batch(&manifest, &out_dir, workers, &params);
        }
        Command::Eval {
            manifest,
            maps_dir,
            report_out,
        } => cmd_eval(&manifest, &maps_dir, &report_out)?,
        Command::Bench {
            rgb,
            thermal,
            repeat,
            params,
        } => {
            let (params, config) = params.resolve()?;
            let repeat = count(repeat.as_ref(), &config, "repeat", 5)?;
            cmd_bench(&rgb, &thermal, repeat, &params)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Keeps every solution it hands out, for the stage dump.
#[derive(Default)]
struct RecordingRanker {
    inner: MultitaskRanker,
    solutions: RefCell<Vec<RankingSolution>>,
}

impl Ranker for RecordingRanker {
    fn rank(&self, prob: &RankingProblem) -> rgbt_saliency::Result<RankingSolution> {
        let sol = self.inner.rank(prob)?;
        self.solutions.borrow_mut().push(sol.clone());
        Ok(sol)
    }
}

fn cmd_detect(
    rgb: &Path,
    thermal: &Path,
    out: &Path,
    params: &PipelineParams,
    dump: Option<&Path>,
) -> Result<()> {
    let pair = load_pair(rgb, thermal)?;
    let ranker = RecordingRanker::default();
    let det = detect_with(&pair, params, &ranker)?;
    write_saliency(&det.saliency.values, out)?;
    log::info!(
        "{}: {} superpixels, weights {:?}, {:.3} s",
        out.display(),
        det.superpixels.len(),
        det.saliency.weights,
        det.timings.total.as_secs_f64()
    );
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        det.superpixels.write_label_png(&dir.join("labels.png"))?;
        det.superpixels.write_segment_table(&dir.join("segments.csv"))?;
        write_stage_dump(&det.saliency, &dir.join("stages.csv"))?;
        write_edges(&pair, &det.superpixels, params, &dir.join("edges.csv"))?;
        let names = Side::ALL
            .iter()
            .map(|s| format!("trace_stage1_{}.csv", s.name()))
            .chain(std::iter::once("trace_stage2.csv".to_string()));
        for (sol, name) in ranker.solutions.borrow().iter().zip(names) {
            sol.write_trace_csv(&dir.join(name))?;
        }
    }
    Ok(())
}

fn write_edges(
    pair: &AlignedImagePair,
    map: &rgbt_saliency::superpixel::SuperpixelMap,
    params: &PipelineParams,
    path: &Path,
) -> Result<()> {
    let lab = rgb_to_lab(pair);
    let (rgb_feats, thermal_feats) = compute_features(map, &lab, pair.thermal())?;
    let topo = build_topology(map)?;
    let g_rgb = build_modality_graph(&topo, &rgb_feats, params.gamma_rgb)?;
    let g_t = build_modality_graph(&topo, &thermal_feats, params.gamma_thermal)?;
    write_edge_csv(&topo, &[&g_rgb, &g_t], &["rgb", "thermal"], path)?;
    Ok(())
}

fn cmd_batch(manifest: &Path, out_dir: &Path, workers: usize, params: &PipelineParams) -> Result<ExitCode> {
    let records = load_manifest(manifest)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot start worker pool")?;
    let results: Vec<(String, Result<StageTimings>)> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| {
                let run = || -> Result<StageTimings> {
                    let pair = load_pair(&rec.rgb_path, &rec.thermal_path)?;
                    let det = detect_with(&pair, params, &MultitaskRanker::default())?;
                    write_saliency(&det.saliency.values, &out_dir.join(format!("{}.png", rec.id)))?;
                    Ok(det.timings)
                };
                (rec.id.clone(), run())
            })
            .collect()
    });

    let mut csv = String::from("id,segment_s,feature_s,stage1_s,stage2_s,total_s\n");
    let mut failed = 0usize;
    for (id, res) in &results {
        match res {
            Ok(t) => {
                let secs = [t.segmentation, t.features, t.stage1, t.stage2, t.total]
                    .map(|d| format!("{:.6}", d.as_secs_f64()));
                csv.push_str(&format!("{id},{}\n", secs.join(",")));
            }
            Err(e) => {
                failed += 1;
                log::error!("{id}: {e:#}");
            }
        }
    }
    let timings = out_dir.join("timings.csv");
    std::fs::File::create(&timings)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
        .with_context(|| format!("cannot write {}", timings.display()))?;
    println!("{} of {} pairs processed", results.len() - failed, results.len());
    if failed > 0 {
        eprintln!("error: {failed} pair(s) failed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(manifest: &Path, maps_dir: &Path, report_out: &Path) -> Result<()> {
    let records = load_manifest(manifest)?;
    let mut maps = BTreeMap::new();
    let mut truths = BTreeMap::new();
    for rec in &records {
        let path = maps_dir.join(format!("{}.png", rec.id));
        if !path.is_file() {
            bail!("no saliency map for {} (expected {})", rec.id, path.display());
        }
        maps.insert(rec.id.clone(), read_saliency(&path)?);
        truths.insert(rec.id.clone(), load_ground_truth(&rec.gt_path)?);
    }
    let report = evaluate(&records, &maps, &truths)?;
    if let Some(dir) = report_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    report.write_all(report_out)?;
    let o = &report.overall;
    println!(
        "images {}  P {:.4}  R {:.4}  F {:.4}  MAE {:.4}",
        o.images, o.precision, o.recall, o.f_measure, o.mae
    );
    for id in &report.excluded {
        println!("excluded {id}: empty ground truth");
    }
    Ok(())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

fn cmd_bench(rgb: &Path, thermal: &Path, repeat: usize, params: &PipelineParams) -> Result<()> {
    let pair = load_pair(rgb, thermal)?;
    let ranker = MultitaskRanker::default();
    let runs: Vec<StageTimings> = (0..repeat)
        .map(|_| detect_with(&pair, params, &ranker).map(|d| d.timings))
        .collect::<rgbt_saliency::Result<_>>()?;
    let rows: [(&str, fn(&StageTimings) -> Duration); 5] = [
        ("segmentation", |t| t.segmentation),
        ("features", |t| t.features),
        ("stage1", |t| t.stage1),
        ("stage2", |t| t.stage2),
        ("total", |t| t.total),
    ];
    let total = median(runs.iter().map(|t| t.total).collect()).as_secs_f64();
    println!("{}x{}, {repeat} runs, median seconds", pair.width(), pair.height());
    println!("{:<14}{:>10}{:>8}", "stage", "seconds", "share");
    for (name, get) in rows {
        let secs = median(runs.iter().map(get).collect()).as_secs_f64();
        let share = if total > 0.0 { 100.0 * secs / total } else { 0.0 };
        println!("{name:<14}{secs:>10.4}{share:>7.1}%");
    }
    Ok(())
}
