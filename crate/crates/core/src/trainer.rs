//! Data loading, the adversarial training loop, prediction, evaluation and
//! ablation runs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::autodiff::Graph;
use crate::checkpoint::{peek_dtype, Checkpoint};
use crate::config::{LossVariant, RunConfig};
use crate::distortion::derived_rng;
use crate::error::{Error, MetricError, Result};
use crate::losses::{flag_d, loss_ccel, loss_all, loss_mmd, loss_regression, loss_t3_surrogate};
use crate::manifest::{Domain, Manifest, SampleRecord, Split};
use crate::metrics::{srocc, EvalReport};
use crate::models::Networks;
use crate::nn::{Adam, Mode, BN_MOMENTUM};
use crate::pointcloud::parse_ply;
use crate::projection::{render_multiperspective, resize_bilinear, RasterImage};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const THREADS_ENV: &str = "ITPCQA_THREADS";
pub const LOG_HEADER: &str = "epoch,loss_r,loss_da,d_rate,src_srocc";

/// Worker cap from `ITPCQA_THREADS`; 1 when unset or invalid.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Content-addressed store of rendered projections.
#[derive(Debug, Default)]
pub struct ProjectionCache {
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ProjectionCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(ProjectionCache {
            dir,
            ..Default::default()
        })
    }

    pub fn disabled() -> Self {
        ProjectionCache::default()
    }

    /// Key of a cloud file's bytes under a projection configuration.
    pub fn key(cloud_bytes: &[u8], config: &RunConfig) -> String {
        let mut h = Sha256::new();
        h.update((cloud_bytes.len() as u64).to_le_bytes());
        h.update(cloud_bytes);
        h.update(config.projection_key().as_bytes());
        crate::checkpoint::hex(&h.finalize())
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn project(&self, cloud_bytes: &[u8], config: &RunConfig) -> Result<RasterImage> {
        let entry = self.dir.as_ref().map(|d| d.join(format!("{}.ppm", Self::key(cloud_bytes, config))));
        if let Some(p) = &entry {
            if let Ok(bytes) = std::fs::read(p) {
                if let Ok(img) = RasterImage::decode_ppm(&bytes) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(img);
                }
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let cloud = parse_ply(cloud_bytes)?.cloud;
        let img = render_multiperspective(&cloud, &config.projection)?;
        if let Some(p) = entry {
            let tmp = p.with_extension(format!("tmp{}", std::process::id()));
            std::fs::write(&tmp, img.encode_ppm()).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(img)
    }
}

pub fn is_cloud(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Network input for one sample: clouds are projected, images resized.
pub fn load_input_image(path: &Path, config: &RunConfig, cache: &ProjectionCache) -> Result<RasterImage> {
    let s = config.train.input_size;
    if is_cloud(path) {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        cache.project(&bytes, config)
    } else {
        let img = RasterImage::read_ppm(path)?;
        Ok(if img.width == s && img.height == s { img } else { resize_bilinear(&img, s) })
    }
}

/// CHW inputs for `records`, in order, loaded by up to `threads` workers.
pub fn load_inputs<T: Scalar>(manifest: &Manifest, records: &[&SampleRecord], config: &RunConfig, cache: &ProjectionCache, threads: usize) -> Result<Vec<Vec<T>>> {
    let load = |r: &SampleRecord| -> Result<Vec<T>> {
        load_input_image(&manifest.resolve(r), config, cache).map(|img| img.to_chw::<T>().into_data())
    };
    let threads = threads.max(1).min(records.len().max(1));
    if threads == 1 {
        return records.iter().map(|r| load(r)).collect();
    }
    let chunk = records.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<T>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(|r| load(r)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("loader thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(records.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn stack<T: Scalar>(items: &[&[T]], s: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(items.len() * 3 * s * s);
    for it in items {
        data.extend_from_slice(it);
    }
    Tensor::new(vec![items.len(), 3, s, s], data).expect("consistent sample size")
}

/// Indices for one epoch of one domain: concatenated seeded permutations,
/// truncated to `needed`. Pure in `(seed, domain, epoch, n)`.
pub fn epoch_order(seed: u64, domain: &str, epoch: usize, n: usize, needed: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(needed + n);
    let mut pass = 0;
    while out.len() < needed {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut derived_rng(seed, &format!("order/{domain}/{epoch}/{pass}")));
        out.extend(perm);
        pass += 1;
    }
    out.truncate(needed);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_r: f64,
    pub loss_da: f64,
    pub d_rate: f64,
    pub src_srocc: Option<f64>,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let s = self.src_srocc.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        format!("{},{},{},{},{}", self.epoch, self.loss_r, self.loss_da, self.d_rate, s)
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        s.push_str(&e.csv_row());
        s.push('\n');
    }
    s
}

/// A trained pipeline with the metadata needed to reproduce predictions.
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub nets: Networks<T>,
    pub config: RunConfig,
    pub label_min: f64,
    pub label_max: f64,
    pub optimizer: Option<Adam<T>>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let meta = vec![
            ("config".to_string(), self.config.to_canonical()),
            ("label_min".to_string(), self.label_min.to_string()),
            ("label_max".to_string(), self.label_max.to_string()),
        ];
        Checkpoint::from_params(
            &self.nets.params,
            self.optimizer.as_ref(),
            self.config.train.seed,
            self.config.inference_digest(),
            meta,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let missing = |k: &str| Error::Checkpoint(crate::error::CheckpointError::Malformed(format!("missing metadata `{k}`")));
        let config = RunConfig::parse(ck.meta("config").ok_or_else(|| missing("config"))?)?;
        ck.check_digest(&config.inference_digest())?;
        let num = |k: &str| -> Result<f64> {
            ck.meta(k)
                .ok_or_else(|| missing(k))?
                .parse()
                .map_err(|_| Error::Checkpoint(crate::error::CheckpointError::Malformed(format!("bad `{k}`"))))
        };
        let mut nets = Networks::new(config.model, config.train.seed);
        ck.apply_to(&mut nets.params)?;
        let optimizer = ck.restore_optimizer(&nets.params)?;
        Ok(TrainedModel {
            nets,
            config,
            label_min: num("label_min")?,
            label_max: num("label_max")?,
            optimizer,
        })
    }

    fn denormalize(&self, v: f64) -> f64 {
        self.label_min + v * (self.label_max - self.label_min)
    }

    /// Normalized-scale predictions for CHW inputs.
    fn predict_normalized(&self, inputs: &[Vec<T>]) -> Result<Vec<f64>> {
        let s = self.config.train.input_size;
        let bs = self.config.train.batch_size;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(bs) {
            let items: Vec<&[T]> = chunk.iter().map(|v| v.as_slice()).collect();
            out.extend(self.nets.predict(&stack(&items, s))?.into_iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }

    pub fn predict_inputs(&self, inputs: &[Vec<T>]) -> Result<Vec<f64>> {
        Ok(self.predict_normalized(inputs)?.into_iter().map(|v| self.denormalize(v)).collect())
    }
}

/// Loading options shared by training, prediction and evaluation.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub cache_dir: Option<PathBuf>,
    pub threads: usize,
}

impl RunOptions {
    pub fn from_env(cache_dir: Option<PathBuf>) -> Self {
        RunOptions {
            cache_dir,
            threads: threads_from_env(),
        }
    }
}

fn training_rows(source: &Manifest, target: &Manifest) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let src: Vec<SampleRecord> = source
        .records
        .iter()
        .filter(|r| r.split != Split::Test)
        .cloned()
        .collect();
    if src.is_empty() {
        return Err(Error::Manifest("source manifest has no training rows".into()));
    }
    if let Some(r) = src.iter().find(|r| r.label.is_none_or(|l| !l.is_finite())) {
        return Err(Error::Manifest(format!("source row `{}` has no finite label", r.id)));
    }
    if target.is_empty() {
        return Err(Error::Manifest("target manifest is empty".into()));
    }
    if let Some(r) = target.records.iter().find(|r| r.domain == Domain::Target && r.label.is_some()) {
        return Err(Error::Manifest(format!("target row `{}` exposes a label to training", r.id)));
    }
    for (m, rows) in [(source, &src), (target, &target.records)] {
        for r in rows.iter() {
            let p = m.resolve(r);
            if !p.is_file() {
                return Err(Error::Manifest(format!("row `{}`: file {} not found", r.id, p.display())));
            }
        }
    }
    Ok((src, target.records.clone()))
}

struct StepStats {
    loss_r: f64,
    loss_da: f64,
    d: u8,
}

fn train_step<T: Scalar>(nets: &mut Networks<T>, adam: &mut Adam<T>, x: &Tensor<T>, ys: &[f64], cfg: &RunConfig, lambda: f64) -> Result<StepStats> {
    let b = ys.len();
    let l = &cfg.loss;
    let mut g = Graph::new();
    let xv = g.input(x);
    let pv = nets.forward_both(&mut g, xv, Mode::Train)?;
    let scores_s = g.slice_rows(pv.scores, 0, b)?;
    let labels: Vec<T> = ys.iter().map(|&y| T::of(y)).collect();
    let l_r = loss_regression(&mut g, scores_s, &labels)?;
    let mut d = 0u8;
    let (total, l_da) = match cfg.train.variant {
        LossVariant::ROnly => (l_r, None),
        LossVariant::T1Mmd => {
            let gs = g.slice_rows(pv.g_feats, 0, b)?;
            let gt = g.slice_rows(pv.g_feats, b, b)?;
            let mmd = loss_mmd(&mut g, gs, gt, l.mmd_kernel)?;
            (loss_all(&mut g, mmd, l_r, l.mu1, l.mu2)?, Some(mmd))
        }
        LossVariant::T2Adv | LossVariant::All => {
            if cfg.train.variant == LossVariant::All {
                let mapped: Vec<f64> = g.value(scores_s).iter().map(|v| v.as_f64()).collect();
                let feats = Tensor::new(vec![b, nets.config.feature_dim], g.value(pv.g_feats)[..b * nets.config.feature_dim].to_vec())?;
                let unmapped: Vec<f64> = nets.regress_values(&feats)?.into_iter().map(|v| v.as_f64()).collect();
                d = flag_d(&mapped, &unmapped, ys, l.epsilon);
            }
            let rev = g.grad_reverse(pv.m_feats, T::of(lambda));
            let prob = nets.discriminate(&mut g, rev)?;
            let ds = g.slice_rows(prob, 0, b)?;
            let dt = g.slice_rows(prob, b, b)?;
            let ccel = loss_ccel(&mut g, ds, dt, d, l.delta)?;
            (loss_all(&mut g, ccel, l_r, l.mu1, l.mu2)?, Some(ccel))
        }
        LossVariant::T3Srocc => {
            let sur = loss_t3_surrogate(&mut g, scores_s, ys, l.t3_tau)?;
            (loss_all(&mut g, sur, l_r, l.mu1, l.mu2)?, Some(sur))
        }
    };
    let stats = StepStats {
        loss_r: g.scalar_value(l_r).as_f64(),
        loss_da: l_da.map_or(0.0, |v| g.scalar_value(v).as_f64()),
        d,
    };
    let grads = g.backward(total)?;
    nets.params.zero_grad();
    grads.accumulate_into(&mut nets.params);
    g.apply_bn_updates(&mut nets.params, T::of(BN_MOMENTUM));
    adam.step(&mut nets.params)?;
    for id in nets.params.ids().collect::<Vec<_>>() {
        nets.params.get_mut(id).clear_grad();
    }
    Ok(stats)
}

/// Progress callback invoked after every epoch.
pub type EpochHook<'a> = dyn FnMut(&EpochLog) + 'a;

pub fn train_typed<T: Scalar>(source: &Manifest, target: &Manifest, config: &RunConfig, opts: &RunOptions, hook: &mut EpochHook<'_>) -> Result<(TrainedModel<T>, Vec<EpochLog>)> {
    config.validate()?;
    let (src_rows, tgt_rows) = training_rows(source, target)?;
    let raw: Vec<f64> = src_rows.iter().map(|r| r.label.expect("validated")).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::Manifest("source training labels are constant".into()));
    }
    let ys: Vec<f64> = raw.iter().map(|y| (y - lo) / (hi - lo)).collect();
    let cache = ProjectionCache::new(opts.cache_dir.clone())?;
    let src_refs: Vec<&SampleRecord> = src_rows.iter().collect();
    let tgt_refs: Vec<&SampleRecord> = tgt_rows.iter().collect();
    let src_x = load_inputs::<T>(source, &src_refs, config, &cache, opts.threads)?;
    let tgt_x = load_inputs::<T>(target, &tgt_refs, config, &cache, opts.threads)?;

    let seed = config.train.seed;
    let nets = Networks::<T>::new(config.model, seed);
    let mut adam = Adam::new(&nets.params, config.train.adam);
    let b = config.train.batch_size;
    let s = config.train.input_size;
    let steps = src_x.len().max(tgt_x.len()).div_ceil(b);
    let mut log = Vec::with_capacity(config.train.epochs);
    let mut model = TrainedModel {
        nets,
        config: *config,
        label_min: lo,
        label_max: hi,
        optimizer: None,
    };
    for epoch in 0..config.train.epochs {
        let so = epoch_order(seed, "source", epoch, src_x.len(), steps * b);
        let to = epoch_order(seed, "target", epoch, tgt_x.len(), steps * b);
        let (mut lr_sum, mut da_sum, mut d_sum) = (0.0, 0.0, 0usize);
        for step in 0..steps {
            let si = &so[step * b..(step + 1) * b];
            let ti = &to[step * b..(step + 1) * b];
            let items: Vec<&[T]> = si.iter().map(|&i| src_x[i].as_slice()).chain(ti.iter().map(|&i| tgt_x[i].as_slice())).collect();
            let x = stack(&items, s);
            let batch_y: Vec<f64> = si.iter().map(|&i| ys[i]).collect();
            let progress = (epoch * steps + step) as f64 / (config.train.epochs * steps) as f64;
            let lambda = config.train.lambda_schedule.at(config.train.lambda, progress);
            let st = train_step(&mut model.nets, &mut adam, &x, &batch_y, config, lambda)?;
            if !(st.loss_r.is_finite() && st.loss_da.is_finite()) {
                return Err(Error::Train(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            lr_sum += st.loss_r;
            da_sum += st.loss_da;
            d_sum += st.d as usize;
        }
        let pred = model.predict_normalized(&src_x)?;
        let entry = EpochLog {
            epoch,
            loss_r: lr_sum / steps as f64,
            loss_da: da_sum / steps as f64,
            d_rate: d_sum as f64 / steps as f64,
            src_srocc: match srocc(&pred, &ys) {
                Ok(v) => Some(v),
                Err(MetricError::Undefined) => None,
                Err(e) => return Err(e.into()),
            },
        };
        hook(&entry);
        log.push(entry);
    }
    model.optimizer = Some(adam);
    Ok((model, log))
}

/// Model of either precision.
#[derive(Debug, Clone)]
pub enum AnyModel {
    F32(TrainedModel<f32>),
    F64(TrainedModel<f64>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::F32($m) => $body,
            AnyModel::F64($m) => $body,
        }
    };
}

/// Scores and hidden labels for evaluated samples.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub ids: Vec<String>,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

impl AnyModel {
    pub fn config(&self) -> &RunConfig {
        dispatch!(self, m => &m.config)
    }

    pub fn label_range(&self) -> (f64, f64) {
        dispatch!(self, m => (m.label_min, m.label_max))
    }

    pub fn encode(&self) -> Vec<u8> {
        dispatch!(self, m => m.to_checkpoint().encode())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        match peek_dtype(bytes)? {
            1 => Ok(AnyModel::F32(TrainedModel::from_checkpoint(&Checkpoint::decode(bytes)?)?)),
            _ => Ok(AnyModel::F64(TrainedModel::from_checkpoint(&Checkpoint::decode(bytes)?)?)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Rejects a projection/model configuration that differs from the one
    /// the model was trained with.
    pub fn check_compatible(&self, supplied: &RunConfig) -> Result<()> {
        let stored = self.config().inference_digest();
        let given = supplied.inference_digest();
        if stored != given {
            return Err(Error::Checkpoint(crate::error::CheckpointError::DigestMismatch {
                stored: crate::checkpoint::hex(&stored),
                supplied: crate::checkpoint::hex(&given),
            }));
        }
        Ok(())
    }

    /// De-normalized scores for every record, in order.
    pub fn predict(&self, manifest: &Manifest, records: &[&SampleRecord], opts: &RunOptions) -> Result<Vec<f64>> {
        let cache = ProjectionCache::new(opts.cache_dir.clone())?;
        dispatch!(self, m => {
            let x = load_inputs(manifest, records, &m.config, &cache, opts.threads)?;
            m.predict_inputs(&x)
        })
    }

    /// Scores the labeled rows of `manifest` (test split only when the
    /// manifest has one).
    pub fn evaluate(&self, manifest: &Manifest, opts: &RunOptions) -> Result<Evaluation> {
        let has_test = manifest.records.iter().any(|r| r.split == Split::Test);
        let rows: Vec<&SampleRecord> = manifest
            .records
            .iter()
            .filter(|r| r.label.is_some() && (!has_test || r.split == Split::Test))
            .collect();
        if rows.len() < crate::metrics::VQEG_MIN_N {
            return Err(MetricError::Insufficient {
                needed: crate::metrics::VQEG_MIN_N,
                got: rows.len(),
            }
            .into());
        }
        let predictions = self.predict(manifest, &rows, opts)?;
        let labels: Vec<f64> = rows.iter().map(|r| r.label.expect("filtered")).collect();
        let report = EvalReport::compute(&predictions, &labels)?;
        Ok(Evaluation {
            report,
            ids: rows.iter().map(|r| r.id.clone()).collect(),
            predictions,
            labels,
        })
    }
}

pub fn train(source: &Manifest, target: &Manifest, config: &RunConfig, opts: &RunOptions, hook: &mut EpochHook<'_>) -> Result<(AnyModel, Vec<EpochLog>)> {
    Ok(match config.train.precision {
        Precision::F32 => {
            let (m, l) = train_typed::<f32>(source, target, config, opts, hook)?;
            (AnyModel::F32(m), l)
        }
        Precision::F64 => {
            let (m, l) = train_typed::<f64>(source, target, config, opts, hook)?;
            (AnyModel::F64(m), l)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMatrix {
    Loss,
    Projection,
    Encoder,
}

impl AblationMatrix {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loss" => Some(AblationMatrix::Loss),
            "projection" => Some(AblationMatrix::Projection),
            "encoder" => Some(AblationMatrix::Encoder),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub name: String,
    pub config: RunConfig,
}

/// Cells of a matrix; each differs from `base` in exactly one factor.
pub fn matrix_cells(matrix: AblationMatrix, base: &RunConfig) -> Vec<AblationCell> {
    let with = |key: &str, value: &str, name: &str| {
        let mut c = *base;
        c.set(key, value).expect("built-in ablation setting");
        AblationCell {
            name: name.to_string(),
            config: c,
        }
    };
    match matrix {
        AblationMatrix::Loss => [LossVariant::ROnly, LossVariant::T1Mmd, LossVariant::T2Adv, LossVariant::All]
            .iter()
            .map(|v| with("train.variant", v.as_str(), v.as_str()))
            .collect(),
        AblationMatrix::Projection => vec![with("projection.mode", "2d1", "2d1"), with("projection.mode", "2d2", "2d2")],
        AblationMatrix::Encoder => vec![with("model.encoder", "scnn", "scnn"), with("model.encoder", "hscnn", "hscnn")],
    }
}

#[derive(Debug, Clone, Default)]
pub struct CellResult {
    pub name: String,
    /// Per-seed `(seed, plcc_mapped, srocc)`; `None` marks undefined values.
    pub runs: Vec<(u64, Option<f64>, Option<f64>)>,
    pub failures: Vec<(u64, String)>,
}

fn mean_spread(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

impl CellResult {
    pub fn srocc_values(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.2).collect()
    }

    pub fn plcc_values(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.1).collect()
    }

    pub fn srocc_of(&self, seed: u64) -> Option<f64> {
        self.runs.iter().find(|r| r.0 == seed).and_then(|r| r.2)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

pub const ABLATION_HEADER: &str = "cell,runs,failed,plcc_mean,plcc_std,srocc_mean,srocc_std";

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ABLATION_HEADER}\n");
        for c in &self.cells {
            let (pm, ps) = mean_spread(&c.plcc_values());
            let (sm, ss) = mean_spread(&c.srocc_values());
            s.push_str(&format!("{},{},{},{pm:.4},{ps:.4},{sm:.4},{ss:.4}\n", c.name, c.runs.len(), c.failures.len()));
        }
        s
    }

    /// For every ordered cell pair, the number of seeds where the first
    /// cell's SROCC is strictly higher.
    pub fn verdicts(&self) -> Vec<(String, String, usize, usize)> {
        let mut out = Vec::new();
        for a in &self.cells {
            for b in &self.cells {
                if a.name == b.name {
                    continue;
                }
                let mut wins = 0;
                let mut total = 0;
                for &seed in &self.seeds {
                    if let (Some(x), Some(y)) = (a.srocc_of(seed), b.srocc_of(seed)) {
                        total += 1;
                        wins += usize::from(x > y);
                    }
                }
                out.push((a.name.clone(), b.name.clone(), wins, total));
            }
        }
        out
    }

    pub fn verdict_text(&self) -> String {
        self.verdicts()
            .into_iter()
            .map(|(a, b, w, t)| format!("{a} > {b}: {w}/{t} seeds\n"))
            .collect()
    }
}

/// Trains and evaluates every cell with seeds `base_seed..base_seed + k`.
/// A failed run is recorded and the table is still produced.
pub fn run_ablation(
    cells: &[AblationCell],
    base_seed: u64,
    k: usize,
    source: &Manifest,
    target_train: &Manifest,
    target_eval: &Manifest,
    opts: &RunOptions,
    progress: &mut dyn FnMut(&str, u64, &Result<Evaluation>),
) -> AblationTable {
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed + i).collect();
    let mut table = AblationTable {
        seeds: seeds.clone(),
        cells: Vec::new(),
    };
    for cell in cells {
        let mut res = CellResult {
            name: cell.name.clone(),
            ..Default::default()
        };
        for &seed in &seeds {
            let mut cfg = cell.config;
            cfg.train.seed = seed;
            let outcome = train(source, target_train, &cfg, opts, &mut |_| {}).and_then(|(m, _)| m.evaluate(target_eval, opts));
            progress(&cell.name, seed, &outcome);
            match outcome {
                Ok(ev) => res.runs.push((seed, ev.report.plcc_mapped, ev.report.srocc)),
                Err(e) => res.failures.push((seed, e.to_string())),
            }
        }
        table.cells.push(res);
    }
    table
}
