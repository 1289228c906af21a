//! Point-cloud distortions at four severity levels, procedural reference
//! clouds, and synthetic labeled source images.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::{Domain, Manifest, SampleRecord, Split};
use crate::pointcloud::{bounding_cube, write_ply, PointCloud};
use crate::projection::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistortionKind {
    /// Octree-style grid snapping with point merging.
    Ot,
    /// Random downsampling.
    Ds,
    /// Geometric Gaussian noise.
    Gn,
    /// Color Gaussian noise.
    Cn,
    /// Color quantization.
    Qn,
    /// Local loss around a random seed point.
    Ll,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 6] = [
        DistortionKind::Ot,
        DistortionKind::Ds,
        DistortionKind::Gn,
        DistortionKind::Cn,
        DistortionKind::Qn,
        DistortionKind::Ll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::Ot => "ot",
            DistortionKind::Ds => "ds",
            DistortionKind::Gn => "gn",
            DistortionKind::Cn => "cn",
            DistortionKind::Qn => "qn",
            DistortionKind::Ll => "ll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

pub const OT_DIVISORS: [f64; 4] = [256.0, 128.0, 64.0, 32.0];
/// Kept fraction in tenths.
pub const DS_KEEP_TENTHS: [usize; 4] = [7, 5, 3, 1];
pub const GN_SIGMA: [f64; 4] = [0.001, 0.003, 0.007, 0.012];
pub const CN_SIGMA: [f64; 4] = [8.0, 16.0, 32.0, 64.0];
pub const QN_BITS: [u32; 4] = [6, 5, 4, 3];
pub const LL_RADIUS: [f64; 4] = [0.02, 0.04, 0.08, 0.12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: u8,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: u8, seed: u64) -> Result<Self> {
        if !(1..=4).contains(&level) {
            return Err(Error::Distortion(format!("level {level} outside 1..=4")));
        }
        Ok(DistortionSpec { kind, level, seed })
    }
}

/// Independent stream for a named purpose under a run seed.
pub fn derived_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

fn annihilated() -> Error {
    Error::Distortion("distortion annihilated cloud".into())
}

/// Unsigned 8-bit quantizer to `bits` bits: uniform bins of width 256/2^bits,
/// each mapped to its rounded midpoint.
pub fn quantize_channel(v: u8, bits: u32) -> u8 {
    let levels = 1u32 << bits;
    let width = 256.0 / levels as f64;
    let q = (v as u32 * levels) >> 8;
    ((q as f64 + 0.5) * width - 0.5).round().clamp(0.0, 255.0) as u8
}

pub fn distort_cloud(cloud: &PointCloud, spec: &DistortionSpec) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Distortion("cannot distort an empty cloud".into()));
    }
    DistortionSpec::new(spec.kind, spec.level, spec.seed)?;
    let li = spec.level as usize - 1;
    let cube = bounding_cube(cloud)?;
    let diag = cube.diagonal();
    // the stream does not depend on the level, so levels share draws
    let mut rng = derived_rng(spec.seed, spec.kind.as_str());
    let out = match spec.kind {
        DistortionKind::Ot => {
            let step = diag / OT_DIVISORS[li];
            let origin = cube.center.map(|c| c - cube.half_extent);
            let mut order: Vec<[i64; 3]> = Vec::new();
            let mut acc: HashMap<[i64; 3], ([u64; 3], u64)> = HashMap::new();
            for (p, c) in cloud.points.iter().zip(&cloud.colors) {
                let key = [0, 1, 2].map(|a| ((p[a] as f64 - origin[a]) / step).round() as i64);
                let e = acc.entry(key).or_insert_with(|| {
                    order.push(key);
                    ([0; 3], 0)
                });
                for k in 0..3 {
                    e.0[k] += c[k] as u64;
                }
                e.1 += 1;
            }
            let mut points = Vec::with_capacity(order.len());
            let mut colors = Vec::with_capacity(order.len());
            for key in order {
                let (sum, n) = acc[&key];
                points.push([0, 1, 2].map(|a| (origin[a] + key[a] as f64 * step) as f32));
                colors.push(sum.map(|s| ((2 * s + n) / (2 * n)) as u8));
            }
            PointCloud { points, colors }
        }
        DistortionKind::Ds => {
            let n = cloud.len();
            let keep = n * DS_KEEP_TENTHS[li] / 10;
            if keep == 0 {
                return Err(annihilated());
            }
            let mut idx = sample(&mut rng, n, keep).into_vec();
            idx.sort_unstable();
            PointCloud {
                points: idx.iter().map(|&i| cloud.points[i]).collect(),
                colors: idx.iter().map(|&i| cloud.colors[i]).collect(),
            }
        }
        DistortionKind::Gn => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let sigma = diag * GN_SIGMA[li];
            let points = cloud
                .points
                .iter()
                .map(|p| p.map(|v| (v as f64 + sigma * normal.sample(&mut rng)) as f32))
                .collect();
            PointCloud {
                points,
                colors: cloud.colors.clone(),
            }
        }
        DistortionKind::Cn => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let sigma = CN_SIGMA[li];
            let colors = cloud
                .colors
                .iter()
                .map(|c| c.map(|v| (v as f64 + sigma * normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8))
                .collect();
            PointCloud {
                points: cloud.points.clone(),
                colors,
            }
        }
        DistortionKind::Qn => PointCloud {
            points: cloud.points.clone(),
            colors: cloud.colors.iter().map(|c| c.map(|v| quantize_channel(v, QN_BITS[li]))).collect(),
        },
        DistortionKind::Ll => {
            let center = cloud.points[rng.random_range(0..cloud.len())];
            let r2 = (diag * LL_RADIUS[li]).powi(2);
            let mut out = PointCloud::default();
            for (p, c) in cloud.points.iter().zip(&cloud.colors) {
                let d2: f64 = (0..3).map(|a| (p[a] as f64 - center[a] as f64).powi(2)).sum();
                if d2 > r2 {
                    out.points.push(*p);
                    out.colors.push(*c);
                }
            }
            if out.is_empty() {
                return Err(annihilated());
            }
            out
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Torus,
    Cube,
    Cylinder,
    Blob,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Torus, Shape::Cube, Shape::Cylinder, Shape::Blob];
}

/// Procedurally textured surface cloud used as a pristine reference.
pub fn reference_cloud(shape: Shape, n_points: usize, seed: u64) -> PointCloud {
    let mut rng = derived_rng(seed, "reference");
    let freq = [0, 1, 2].map(|_| rng.random_range(1.5..5.0));
    let phase = [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI));
    let base: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(60.0..200.0));
    let mut points = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let p = match shape {
            Shape::Sphere | Shape::Blob => {
                let theta = 2.0 * PI * u;
                let z = 2.0 * v - 1.0;
                let s = (1.0 - z * z).sqrt();
                let r = if shape == Shape::Blob {
                    1.0 + 0.2 * (3.0 * theta).sin() * (4.0 * z).cos()
                } else {
                    1.0
                };
                [r * s * theta.cos(), r * s * theta.sin(), r * z]
            }
            Shape::Torus => {
                let (a, b) = (2.0 * PI * u, 2.0 * PI * v);
                [(1.0 + 0.4 * b.cos()) * a.cos(), (1.0 + 0.4 * b.cos()) * a.sin(), 0.4 * b.sin()]
            }
            Shape::Cube => {
                let face = rng.random_range(0..6usize);
                let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Shape::Cylinder => {
                let theta = 2.0 * PI * u;
                [theta.cos(), theta.sin(), 2.0 * v - 1.0]
            }
        };
        let c = [0, 1, 2].map(|k| {
            let wave = (freq[k] * p[k] + phase[k]).sin() + 0.5 * (freq[(k + 1) % 3] * p[(k + 1) % 3] * 2.0).cos();
            (base[k] + 45.0 * wave).round().clamp(0.0, 255.0) as u8
        });
        points.push(p.map(|x| x as f32));
        colors.push(c);
    }
    PointCloud { points, colors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceDistortion {
    Blur,
    Noise,
    Quantize,
}

impl SourceDistortion {
    pub const ALL: [SourceDistortion; 3] = [SourceDistortion::Blur, SourceDistortion::Noise, SourceDistortion::Quantize];
}

pub const BLUR_SIGMA: [f64; 4] = [0.6, 1.2, 2.0, 3.0];
pub const NOISE_SIGMA: [f64; 4] = [8.0, 16.0, 32.0, 64.0];
pub const QUANT_BITS: [u32; 4] = [4, 3, 2, 1];

/// Synthetic source sample; level 0 is the pristine texture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSourceSpec {
    pub texture_seed: u64,
    pub kind: SourceDistortion,
    pub level: u8,
    pub size: usize,
}

pub fn quality_label(level: u8) -> f64 {
    1.0 - 0.22 * level as f64
}

/// Gradients, sinusoids and random rectangles.
pub fn synth_texture(seed: u64, size: usize) -> RasterImage {
    let mut rng = derived_rng(seed, "texture");
    let n = size as f64;
    let grad_a: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(30.0..220.0));
    let grad_b: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(30.0..220.0));
    let angle = rng.random_range(0.0..2.0 * PI);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(2.0..10.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..PI),
                rng.random_range(15.0..40.0),
            )
        })
        .collect();
    let rects: Vec<([usize; 4], [f64; 3])> = (0..rng.random_range(3..7))
        .map(|_| {
            let x0 = rng.random_range(0..size);
            let y0 = rng.random_range(0..size);
            let w = rng.random_range(size / 8..=size / 3).max(1);
            let h = rng.random_range(size / 8..=size / 3).max(1);
            ([x0, y0, (x0 + w).min(size), (y0 + h).min(size)], [0, 1, 2].map(|_| rng.random_range(0.0..255.0)))
        })
        .collect();
    let mut img = RasterImage::filled(size, size, [0; 3]);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let t = 0.5 + 0.5 * ((u - 0.5) * angle.cos() + (v - 0.5) * angle.sin()) * 1.4;
            let mut c = [0, 1, 2].map(|k| grad_a[k] * (1.0 - t) + grad_b[k] * t);
            for (k, &(f, ph, dir, amp)) in waves.iter().enumerate() {
                let s = (2.0 * PI * f * (u * dir.cos() + v * dir.sin()) + ph).sin();
                c[k % 3] += amp * s;
                c[(k + 1) % 3] += 0.5 * amp * s;
            }
            for (r, col) in &rects {
                if x >= r[0] && x < r[2] && y >= r[1] && y < r[3] {
                    c = [0, 1, 2].map(|k| 0.35 * c[k] + 0.65 * col[k]);
                }
            }
            img.set(x, y, c.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}

fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = (img.width as isize, img.height as isize);
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (j, kv) in kernel.iter().enumerate() {
                    let o = j as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, h - 1))
                    };
                    let p = src[(sy * w + sx) as usize];
                    for k in 0..3 {
                        acc[k] += kv * p[k];
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let src: Vec<[f64; 3]> = img.pixels.iter().map(|p| p.map(|v| v as f64)).collect();
    let out = pass(&pass(&src, true), false);
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: out.iter().map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8)).collect(),
    }
}

pub fn synth_source_image(spec: &SynthSourceSpec) -> Result<(RasterImage, f64)> {
    if spec.level > 4 {
        return Err(Error::Distortion(format!("level {} outside 0..=4", spec.level)));
    }
    if spec.size < 8 {
        return Err(Error::Distortion(format!("image size {} < 8", spec.size)));
    }
    let img = synth_texture(spec.texture_seed, spec.size);
    let label = quality_label(spec.level);
    if spec.level == 0 {
        return Ok((img, label));
    }
    let li = spec.level as usize - 1;
    let out = match spec.kind {
        SourceDistortion::Blur => gaussian_blur(&img, BLUR_SIGMA[li] * spec.size as f64 / 64.0),
        SourceDistortion::Noise => {
            let mut rng = derived_rng(spec.texture_seed, "source-noise");
            let normal = Normal::new(0.0, NOISE_SIGMA[li]).expect("positive sigma");
            let mut out = img;
            for p in &mut out.pixels {
                *p = p.map(|v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
            out
        }
        SourceDistortion::Quantize => {
            let mut out = img;
            for p in &mut out.pixels {
                *p = p.map(|v| quantize_channel(v, QUANT_BITS[li]));
            }
            out
        }
    };
    Ok((out, label))
}

/// Sum of squared discrete Laplacian over all channels (interior pixels).
pub fn laplacian_energy(img: &RasterImage) -> f64 {
    let mut e = 0.0;
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            for k in 0..3 {
                let c = img.get(x, y)[k] as f64;
                let l = img.get(x - 1, y)[k] as f64
                    + img.get(x + 1, y)[k] as f64
                    + img.get(x, y - 1)[k] as f64
                    + img.get(x, y + 1)[k] as f64
                    - 4.0 * c;
                e += l * l;
            }
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthCounts {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub image_size: usize,
    pub cloud_points: usize,
    /// Fraction of source rows, in percent, assigned to the test split.
    pub source_test_percent: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            image_size: 64,
            cloud_points: 12_000,
            source_test_percent: 0,
        }
    }
}

pub const SOURCE_MANIFEST: &str = "source.csv";
pub const TARGET_MANIFEST: &str = "target.csv";

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Source sample `i`: kind cycles fastest, then level 0..=4; each run of 15
/// samples degrades one reference texture.
pub fn source_spec(seed: u64, i: usize, size: usize) -> SynthSourceSpec {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(((i / 15) as u64).to_le_bytes());
    let d = h.finalize();
    SynthSourceSpec {
        texture_seed: u64::from_le_bytes(d[..8].try_into().expect("8 bytes")),
        kind: SourceDistortion::ALL[i % 3],
        level: ((i / 3) % 5) as u8,
        size,
    }
}

/// Target sample `i`: reference shape, distortion kind, and level 0..=4
/// (level 0 is the pristine reference).
pub fn target_spec(seed: u64, i: usize) -> (Shape, u64, DistortionKind, u8) {
    let kind = DistortionKind::ALL[i % 6];
    let level = ((i / 6) % 5) as u8;
    let shape = Shape::ALL[(i / 30 + i) % Shape::ALL.len()];
    (shape, seed.wrapping_mul(1_000_003).wrapping_add(i as u64), kind, level)
}

/// Writes `source.csv`, `target.csv`, `target.eval.csv` and the samples
/// under `out_dir`.
pub fn build_synth_manifests(out_dir: &Path, counts: SynthCounts, seed: u64, opts: &SynthOptions) -> Result<(Manifest, Manifest)> {
    if counts.source < 40 || counts.target < 40 {
        return Err(Error::Config(format!(
            "synthetic counts must be at least 40 per domain, got {}+{}",
            counts.source, counts.target
        )));
    }
    let src_dir = out_dir.join("source");
    let tgt_dir = out_dir.join("target");
    for d in [out_dir, &src_dir, &tgt_dir] {
        std::fs::create_dir_all(d).map_err(write_err(d))?;
    }
    let n_test = counts.source * opts.source_test_percent / 100;
    // Stratify: walk rows grouped by (kind, level) and spread test rows evenly
    // along that walk, so every combination lands in both splits.
    let mut walk: Vec<usize> = (0..counts.source).collect();
    walk.sort_by_key(|&i| (i % 15, i / 15));
    let mut is_test = vec![false; counts.source];
    for (j, &i) in walk.iter().enumerate() {
        is_test[i] = n_test > 0 && (j * n_test) / counts.source != ((j + 1) * n_test) / counts.source;
    }
    let mut source = Vec::with_capacity(counts.source);
    for i in 0..counts.source {
        let spec = source_spec(seed, i, opts.image_size);
        let (img, label) = synth_source_image(&spec)?;
        let name = format!("s{i:04}.ppm");
        img.write_ppm(src_dir.join(&name))?;
        let split = if is_test[i] { Split::Test } else { Split::Train };
        source.push(SampleRecord {
            id: format!("s{i:04}"),
            path: PathBuf::from("source").join(name),
            domain: Domain::Source,
            label: Some(label),
            split,
        });
    }
    let mut target = Vec::with_capacity(counts.target);
    for i in 0..counts.target {
        let (shape, cseed, kind, level) = target_spec(seed, i);
        let reference = reference_cloud(shape, opts.cloud_points, cseed);
        let cloud = if level == 0 {
            reference
        } else {
            distort_cloud(&reference, &DistortionSpec::new(kind, level, cseed)?)?
        };
        let name = format!("t{i:04}.ply");
        write_ply(tgt_dir.join(&name), &cloud)?;
        target.push(SampleRecord {
            id: format!("t{i:04}"),
            path: PathBuf::from("target").join(name),
            domain: Domain::Target,
            label: Some(quality_label(level)),
            split: Split::None,
        });
    }
    let source = Manifest::new(out_dir, source);
    let target = Manifest::new(out_dir, target);
    source.write(out_dir.join(SOURCE_MANIFEST))?;
    target.write(out_dir.join(TARGET_MANIFEST))?;
    Ok((source, target))
}
