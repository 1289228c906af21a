use std::path::PathBuf;
use std::sync::OnceLock;

use itpcqa::checkpoint::Checkpoint;
use itpcqa::config::{LossVariant, RunConfig};
use itpcqa::distortion::{build_synth_manifests, SynthCounts, SynthOptions, TARGET_MANIFEST};
use itpcqa::manifest::{Domain, Manifest, Split};
use itpcqa::models::Networks;
use itpcqa::nn::Mode;
use itpcqa::pointcloud::encode_ply;
use itpcqa::projection::Face;
use itpcqa::tensor::Tensor;
use itpcqa::trainer::{load_inputs, log_csv, train, train_typed, AnyModel, ProjectionCache, RunOptions};
use itpcqa::autodiff::Graph;
use itpcqa::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    source: Manifest,
    target: Manifest,
    target_eval: Manifest,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let opts = SynthOptions {
            image_size: 32,
            cloud_points: 1500,
            source_test_percent: 0,
        };
        let (source, target_eval) = build_synth_manifests(&root, SynthCounts { source: 40, target: 40 }, 3, &opts).unwrap();
        let target = Manifest::read(root.join(TARGET_MANIFEST)).unwrap();
        Fixture {
            _dir: dir,
            root,
            source,
            target,
            target_eval,
        }
    })
}

fn tiny(variant: LossVariant) -> RunConfig {
    let mut c = RunConfig::desk_scale();
    c.set_input_size(32);
    c.projection.face_resolution = 32;
    c.train.batch_size = 4;
    c.train.epochs = 2;
    c.train.variant = variant;
    c.train.seed = 5;
    c
}

fn opts() -> RunOptions {
    RunOptions {
        cache_dir: Some(fixture().root.join("cache")),
        threads: 1,
    }
}

fn run(cfg: &RunConfig) -> (AnyModel, String) {
    let f = fixture();
    let (m, log) = train(&f.source, &f.target, cfg, &opts(), &mut |_| {}).unwrap();
    (m, log_csv(&log))
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = tiny(LossVariant::All);
    let (a, la) = run(&cfg);
    let (b, lb) = run(&cfg);
    assert_eq!(a.encode(), b.encode());
    assert_eq!(la, lb);
    assert_eq!(la.lines().count(), 1 + cfg.train.epochs);
}

#[test]
fn parallel_loading_does_not_change_bytes() {
    let f = fixture();
    let cfg = tiny(LossVariant::ROnly);
    let rows: Vec<_> = f.target.records.iter().collect();
    let cache = ProjectionCache::disabled();
    let serial = load_inputs::<f32>(&f.target, &rows, &cfg, &cache, 1).unwrap();
    let parallel = load_inputs::<f32>(&f.target, &rows, &cfg, &cache, 4).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn zero_adaptation_weights_reduce_to_regression_only() {
    let mut all = tiny(LossVariant::All);
    all.train.lambda = 0.0;
    all.loss.mu1 = 0.0;
    let mut r_only = tiny(LossVariant::ROnly);
    r_only.train.lambda = 0.0;
    r_only.loss.mu1 = 0.0;
    let f = fixture();
    let (a, _) = train_typed::<f32>(&f.source, &f.target, &all, &opts(), &mut |_| {}).unwrap();
    let (b, _) = train_typed::<f32>(&f.source, &f.target, &r_only, &opts(), &mut |_| {}).unwrap();
    let (ca, cb) = (a.to_checkpoint(), b.to_checkpoint());
    assert_eq!(ca.tensors, cb.tensors);
    assert_eq!(ca.optimizer, cb.optimizer);
}

#[test]
fn regression_only_leaves_discriminator_at_init() {
    let f = fixture();
    let cfg = tiny(LossVariant::ROnly);
    let (m, log) = train_typed::<f32>(&f.source, &f.target, &cfg, &opts(), &mut |_| {}).unwrap();
    let init = Networks::<f32>::new(cfg.model, cfg.train.seed);
    for (_, name, t) in init.params.iter() {
        let trained = m.nets.params.by_name(name).unwrap();
        if name.starts_with("d.") {
            assert_eq!(trained.data(), t.data(), "{name}");
        } else if name == "r.fc2.bias" {
            assert_ne!(trained.data(), t.data());
        }
    }
    assert!(log.iter().all(|e| (0.0..=1.0).contains(&e.d_rate)));
}

fn mean_discriminator(nets: &Networks<f32>, inputs: &[Vec<f32>], s: usize) -> f64 {
    let mut data = Vec::new();
    for x in inputs {
        data.extend_from_slice(x);
    }
    let x = Tensor::new(vec![inputs.len(), 3, s, s], data).unwrap();
    let mut g = Graph::inference();
    let xv = g.input(&x);
    let gf = nets.encode(&mut g, xv, Mode::Eval).unwrap();
    let mf = nets.map(&mut g, gf).unwrap();
    let p = nets.discriminate(&mut g, mf).unwrap();
    g.value(p).iter().map(|v| *v as f64).sum::<f64>() / inputs.len() as f64
}

#[test]
fn discriminator_scores_source_above_target() {
    let f = fixture();
    let mut cfg = tiny(LossVariant::T2Adv);
    cfg.train.lambda = 0.0;
    cfg.train.epochs = 4;
    let (m, _) = train_typed::<f32>(&f.source, &f.target, &cfg, &opts(), &mut |_| {}).unwrap();
    let cache = ProjectionCache::new(opts().cache_dir).unwrap();
    let src: Vec<_> = f.source.records.iter().collect();
    let tgt: Vec<_> = f.target.records.iter().collect();
    let xs = load_inputs::<f32>(&f.source, &src, &cfg, &cache, 1).unwrap();
    let xt = load_inputs::<f32>(&f.target, &tgt, &cfg, &cache, 1).unwrap();
    let s = cfg.train.input_size;
    assert!(mean_discriminator(&m.nets, &xs, s) > mean_discriminator(&m.nets, &xt, s));
}

#[test]
fn predictions_are_deterministic_and_bounded() {
    let f = fixture();
    let (m, _) = run(&tiny(LossVariant::All));
    let rows: Vec<_> = f.source.records.iter().collect();
    let a = m.predict(&f.source, &rows, &opts()).unwrap();
    let b = m.predict(&f.source, &rows, &opts()).unwrap();
    assert_eq!(a, b);
    let (lo, hi) = m.label_range();
    let span = hi - lo;
    assert!(a.iter().all(|v| v.is_finite() && *v >= lo - 0.5 * span && *v <= hi + 0.5 * span));
    let back = AnyModel::decode(&m.encode()).unwrap();
    assert_eq!(back.predict(&f.source, &rows, &opts()).unwrap(), a);
}

#[test]
fn evaluation_reports_and_requires_five_labels() {
    let f = fixture();
    let (m, _) = run(&tiny(LossVariant::ROnly));
    let ev = m.evaluate(&f.target_eval, &opts()).unwrap();
    assert_eq!(ev.report.n, f.target_eval.len());
    let few = f.target_eval.filter(|r| r.id.as_str() < "t0004");
    assert!(matches!(m.evaluate(&few, &opts()), Err(Error::Metrics(_))));
}

#[test]
fn projection_config_mismatch_is_rejected() {
    let mut single = tiny(LossVariant::ROnly);
    single.set("projection.mode", "2d1").unwrap();
    single.train.epochs = 1;
    let (m, _) = run(&single);
    assert!(m.check_compatible(&single).is_ok());
    let six = tiny(LossVariant::ROnly);
    assert!(matches!(m.check_compatible(&six), Err(Error::Checkpoint(_))));
    let ck = Checkpoint::<f32>::decode(&m.encode()).unwrap();
    assert!(ck.check_digest(&six.inference_digest()).is_err());
}

#[test]
fn projection_cache_is_content_addressed() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cache = ProjectionCache::new(Some(dir.path().to_path_buf())).unwrap();
    let cfg = tiny(LossVariant::ROnly);
    let a = std::fs::read(f.target.resolve(&f.target.records[0])).unwrap();
    let b = std::fs::read(f.target.resolve(&f.target.records[1])).unwrap();
    let first = cache.project(&a, &cfg).unwrap();
    assert_eq!((cache.hits(), cache.misses()), (0, 1));
    assert_eq!(cache.project(&a, &cfg).unwrap(), first);
    assert_eq!((cache.hits(), cache.misses()), (1, 1));
    cache.project(&b, &cfg).unwrap();
    assert_eq!(cache.misses(), 2);
    let mut other = cfg;
    other.projection.mode = itpcqa::projection::ProjectionMode::SingleFace(Face::NegX);
    cache.project(&a, &other).unwrap();
    assert_eq!(cache.misses(), 3);
    let keys = [
        ProjectionCache::key(&a, &cfg),
        ProjectionCache::key(&b, &cfg),
        ProjectionCache::key(&a, &other),
    ];
    assert!(keys[0] != keys[1] && keys[0] != keys[2] && keys[1] != keys[2]);
    // a re-encoded identical cloud shares the entry
    let same = encode_ply(&itpcqa::pointcloud::parse_ply(&a).unwrap().cloud);
    assert_eq!(ProjectionCache::key(&same, &cfg), keys[0]);
}

#[test]
fn invalid_inputs_fail_before_training() {
    let f = fixture();
    let cfg = tiny(LossVariant::All);
    let o = opts();
    let mut hook = |_: &itpcqa::trainer::EpochLog| panic!("training must not start");
    let empty = f.target.filter(|_| false);
    let err = train(&f.source, &empty, &cfg, &o, &mut hook).unwrap_err();
    assert!(err.to_string().contains("empty"), "{err}");
    let mut unlabeled = f.source.clone();
    unlabeled.records[3].label = None;
    let err = train(&unlabeled, &f.target, &cfg, &o, &mut hook).unwrap_err();
    assert!(err.to_string().contains(&unlabeled.records[3].id), "{err}");
    let err = train(&f.source, &f.target_eval, &cfg, &o, &mut hook).unwrap_err();
    assert!(err.to_string().contains("label"), "{err}");
    let mut missing = f.target.clone();
    missing.records[0].path = PathBuf::from("target/nope.ply");
    let err = train(&f.source, &missing, &cfg, &o, &mut hook).unwrap_err();
    assert!(err.to_string().contains("nope.ply"), "{err}");
    let mut flat = f.source.clone();
    flat.records.iter_mut().for_each(|r| r.label = Some(0.5));
    assert!(train(&flat, &f.target, &cfg, &o, &mut hook).is_err());
    let mut small = cfg;
    small.train.batch_size = 3;
    assert!(train(&f.source, &f.target, &small, &o, &mut hook).unwrap_err().is_usage());
}

#[test]
fn manifests_keep_target_labels_out_of_training_columns() {
    let f = fixture();
    assert!(f.target.records.iter().all(|r| r.label.is_none() && r.domain == Domain::Target && r.split == Split::None));
    assert!(f.target_eval.records.iter().all(|r| r.label.is_some()));
    let hidden = Manifest::read_with_hidden_labels(f.root.join(TARGET_MANIFEST)).unwrap();
    assert_eq!(hidden.records, f.target_eval.records);
}
