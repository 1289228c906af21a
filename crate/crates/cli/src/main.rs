//! `itpcqa` command-line entry point.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itpcqa::config::RunConfig;
use itpcqa::distortion::{build_synth_manifests, distort_cloud, DistortionKind, DistortionSpec, SynthCounts, SynthOptions, SOURCE_MANIFEST, TARGET_MANIFEST};
use itpcqa::gradsuite::gradient_suite;
use itpcqa::manifest::{sidecar_path, Domain, Manifest, SampleRecord, Split};
use itpcqa::metrics::REPORT_CSV_HEADER;
use itpcqa::pointcloud::{bounding_cube, read_ply, write_ply};
use itpcqa::projection::{render_face, render_multiperspective, Face, ProjectionMode};
use itpcqa::trainer::{log_csv, matrix_cells, run_ablation, train, AblationMatrix, AnyModel, RunOptions};
use itpcqa::Error;

const MODEL_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "train_log.csv";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "itpcqa", about = "No-reference point cloud quality assessment via image transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every stochastic step.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a cloud to the network input image and its cube faces.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// 2d2 (six faces spliced) or 2d1 (one face).
        #[arg(long)]
        mode: Option<String>,
        /// Face used by 2d1, e.g. +z or -y.
        #[arg(long, allow_hyphen_values = true)]
        face: Option<String>,
    },
    /// Apply one distortion at one level to a cloud.
    Distort {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// OT, DS, GN, CN, QN or LL.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        level: u8,
    },
    /// Build the synthetic source images and target clouds.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 80)]
        source: usize,
        #[arg(long, default_value_t = 80)]
        target: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 12_000)]
        cloud_points: usize,
        /// Percentage of source rows placed in the test split.
        #[arg(long, default_value_t = 0)]
        test_percent: usize,
    },
    /// Train on a labeled source manifest and an unlabeled target manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Score clouds or images with a trained model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Cloud (.ply) or image (.ppm) files.
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate a model on a manifest with a hidden-label sidecar.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train and evaluate every cell of an ablation matrix over k seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// loss, projection or encoder.
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Check analytic gradients of every layer, loss and the full pipeline.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Print the version.
    Version,
}

/// Failure with its exit code: 1 for usage, 2 for data or format.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 1 } else { 2 },
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CliResult = Result<Vec<(String, String)>, Failure>;

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(fields) => {
            let mut line = String::from("status=ok");
            for (k, v) in fields {
                let _ = write!(line, " {k}={v}");
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            println!("status=error code={}", f.code);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Project { common, input, mode, face } => project(&common, &input, mode.as_deref(), face.as_deref()),
        Command::Distort { common, input, kind, level } => distort(&common, &input, &kind, level),
        Command::Synth {
            common,
            source,
            target,
            image_size,
            cloud_points,
            test_percent,
        } => synth(
            &common,
            SynthCounts { source, target },
            SynthOptions {
                image_size,
                cloud_points,
                source_test_percent: test_percent,
            },
        ),
        Command::Train { common, source, target } => train_cmd(&common, &source, &target),
        Command::Predict {
            common,
            model,
            manifest,
            inputs,
        } => predict(&common, &model, manifest.as_deref(), &inputs),
        Command::Eval { common, model, manifest } => eval(&common, &model, &manifest),
        Command::Ablate {
            common,
            matrix,
            source,
            target,
            k,
        } => ablate(&common, &matrix, &source, &target, k),
        Command::Gradcheck { common } => gradcheck(&common),
        Command::Version => Ok(vec![kv("version", env!("CARGO_PKG_VERSION"))]),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => usage(e.to_string()),
            e => e.into(),
        })?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string()
}

fn project(common: &Common, input: &Path, mode: Option<&str>, face: Option<&str>) -> CliResult {
    let mut cfg = load_config(common)?;
    if let Some(f) = face {
        cfg.set("projection.face", f)?;
    }
    if let Some(m) = mode {
        cfg.set("projection.mode", m)?;
    }
    let cloud = read_ply(input)?;
    let cube = bounding_cube(&cloud)?;
    make_out(&common.out)?;
    let name = stem(input);
    let image = render_multiperspective(&cloud, &cfg.projection)?;
    image.write_ppm(common.out.join(format!("{name}.mp.ppm")))?;
    let faces: Vec<Face> = match cfg.projection.mode {
        ProjectionMode::SixFace => Face::ALL.to_vec(),
        ProjectionMode::SingleFace(f) => vec![f],
    };
    for f in &faces {
        render_face(&cloud, &cube, *f, &cfg.projection).write_ppm(common.out.join(format!("{name}.face{}.ppm", f.as_str())))?;
    }
    Ok(vec![
        kv("points", cloud.len()),
        kv("mode", itpcqa::config::mode_str(cfg.projection.mode)),
        kv("faces", faces.len()),
        kv("size", image.width),
    ])
}

fn distort(common: &Common, input: &Path, kind: &str, level: u8) -> CliResult {
    let k = DistortionKind::parse(kind).ok_or_else(|| usage(format!("unknown distortion kind `{kind}`")))?;
    let spec = DistortionSpec::new(k, level, common.seed.unwrap_or(0)).map_err(|e| usage(e.to_string()))?;
    let cloud = read_ply(input)?;
    let out = distort_cloud(&cloud, &spec)?;
    make_out(&common.out)?;
    let path = common.out.join(format!("{}.{}{level}.ply", stem(input), k.as_str()));
    write_ply(&path, &out)?;
    Ok(vec![kv("kind", k.as_str()), kv("level", level), kv("points_in", cloud.len()), kv("points_out", out.len()), kv("file", path.display())])
}

fn synth(common: &Common, counts: SynthCounts, opts: SynthOptions) -> CliResult {
    let seed = common.seed.unwrap_or(0);
    let (src, tgt) = build_synth_manifests(&common.out, counts, seed, &opts)?;
    Ok(vec![
        kv("source", src.len()),
        kv("target", tgt.len()),
        kv("seed", seed),
        kv("source_manifest", common.out.join(SOURCE_MANIFEST).display()),
        kv("target_manifest", common.out.join(TARGET_MANIFEST).display()),
    ])
}

fn cache_opts(out: &Path) -> RunOptions {
    RunOptions::from_env(Some(out.join("cache")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

fn train_cmd(common: &Common, source: &Path, target: &Path) -> CliResult {
    let cfg = load_config(common)?;
    let src = Manifest::read(source)?;
    let tgt = Manifest::read(target)?;
    make_out(&common.out)?;
    let opts = cache_opts(&common.out);
    let (model, log) = train(&src, &tgt, &cfg, &opts, &mut |e| {
        eprintln!("epoch {} loss_r={:.5} loss_da={:.5} d_rate={:.3} src_srocc={}", e.epoch, e.loss_r, e.loss_da, e.d_rate, fmt_opt(e.src_srocc));
    })?;
    model.save(common.out.join(MODEL_FILE))?;
    write_file(&common.out.join(LOG_FILE), log_csv(&log))?;
    write_file(&common.out.join(CONFIG_FILE), cfg.to_canonical())?;
    let last = log.last().expect("at least one epoch");
    Ok(vec![
        kv("epochs", log.len()),
        kv("variant", cfg.train.variant.as_str()),
        kv("loss_r", format!("{:.6}", last.loss_r)),
        kv("src_srocc", fmt_opt(last.src_srocc)),
        kv("model", common.out.join(MODEL_FILE).display()),
    ])
}

fn load_model(common: &Common, path: &Path) -> Result<AnyModel, Failure> {
    let model = AnyModel::load(path)?;
    if common.config.is_some() || !common.set.is_empty() {
        model.check_compatible(&load_config(common)?)?;
    }
    Ok(model)
}

fn predict(common: &Common, model_path: &Path, manifest: Option<&Path>, inputs: &[PathBuf]) -> CliResult {
    let model = load_model(common, model_path)?;
    let m = match (manifest, inputs.is_empty()) {
        (Some(p), true) => Manifest::read(p)?,
        (None, false) => Manifest::new(
            ".",
            inputs
                .iter()
                .map(|p| SampleRecord {
                    id: stem(p),
                    path: p.clone(),
                    domain: Domain::Target,
                    label: None,
                    split: Split::None,
                })
                .collect(),
        ),
        _ => return Err(usage("predict needs exactly one of --manifest or --in")),
    };
    if m.is_empty() {
        return Err(data("nothing to predict"));
    }
    make_out(&common.out)?;
    let rows: Vec<&SampleRecord> = m.records.iter().collect();
    let scores = model.predict(&m, &rows, &cache_opts(&common.out))?;
    let mut csv = String::from("id,score\n");
    for (r, s) in rows.iter().zip(&scores) {
        let _ = writeln!(csv, "{},{s}", r.id);
    }
    write_file(&common.out.join("predictions.csv"), csv)?;
    Ok(vec![kv("n", scores.len()), kv("file", common.out.join("predictions.csv").display())])
}

fn eval(common: &Common, model_path: &Path, manifest: &Path) -> CliResult {
    let model = load_model(common, model_path)?;
    if !sidecar_path(manifest).exists() && Manifest::read(manifest)?.records.iter().all(|r| r.label.is_none()) {
        return Err(data(format!("no labels for {}: hidden-label sidecar missing", manifest.display())));
    }
    let m = Manifest::read_with_hidden_labels(manifest)?;
    make_out(&common.out)?;
    let ev = model.evaluate(&m, &cache_opts(&common.out))?;
    write_file(&common.out.join("report.csv"), format!("{REPORT_CSV_HEADER}\n{}\n", ev.report.csv_row()))?;
    let mut csv = String::from("id,score,label\n");
    for ((id, p), l) in ev.ids.iter().zip(&ev.predictions).zip(&ev.labels) {
        let _ = writeln!(csv, "{id},{p},{l}");
    }
    write_file(&common.out.join("predictions.csv"), csv)?;
    let r = &ev.report;
    Ok(vec![
        kv("n", r.n),
        kv("srocc", fmt_opt(r.srocc)),
        kv("plcc", fmt_opt(r.plcc_mapped)),
        kv("rmse", format!("{:.4}", r.rmse_mapped)),
        kv("fallback", r.fallback),
    ])
}

fn ablate(common: &Common, matrix: &str, source: &Path, target: &Path, k: usize) -> CliResult {
    let base = load_config(common)?;
    let mx = AblationMatrix::parse(matrix).ok_or_else(|| usage(format!("unknown ablation matrix `{matrix}`")))?;
    if k == 0 {
        return Err(usage("--k must be positive"));
    }
    let src = Manifest::read(source)?;
    let tgt = Manifest::read(target)?;
    let tgt_eval = Manifest::read_with_hidden_labels(target)?;
    make_out(&common.out)?;
    let cells = matrix_cells(mx, &base);
    let table = run_ablation(&cells, base.train.seed, k, &src, &tgt, &tgt_eval, &cache_opts(&common.out), &mut |cell, seed, r| match r {
        Ok(ev) => eprintln!("{cell} seed {seed}: srocc={}", fmt_opt(ev.report.srocc)),
        Err(e) => eprintln!("{cell} seed {seed}: failed: {e}"),
    });
    write_file(&common.out.join("ablation.csv"), table.to_csv())?;
    write_file(&common.out.join("verdicts.txt"), table.verdict_text())?;
    let failed: usize = table.cells.iter().map(|c| c.failures.len()).sum();
    Ok(vec![kv("matrix", matrix), kv("cells", table.cells.len()), kv("seeds", k), kv("failed", failed), kv("file", common.out.join("ablation.csv").display())])
}

fn gradcheck(common: &Common) -> CliResult {
    let suite = gradient_suite(common.seed.unwrap_or(0))?;
    make_out(&common.out)?;
    let mut csv = String::from("group,check,max_rel_err,tolerance,checked,skipped,passed\n");
    let mut failed = Vec::new();
    for e in &suite {
        let r = &e.report;
        println!("{} {} max_rel_err={:.3e} tol={:.0e}", e.group.as_str(), r.name, r.max_rel_err(), r.tolerance);
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", e.group.as_str(), r.name, r.max_rel_err(), r.tolerance, r.checked, r.skipped, r.passed());
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    write_file(&common.out.join("gradcheck.csv"), csv)?;
    if !failed.is_empty() {
        return Err(data(format!("gradient check failed: {}", failed.join(", "))));
    }
    let worst = suite.iter().map(|e| e.report.max_rel_err()).fold(0.0, f64::max);
    Ok(vec![kv("checks", suite.len()), kv("failed", 0), kv("max_rel_err", format!("{worst:.3e}"))])
}
