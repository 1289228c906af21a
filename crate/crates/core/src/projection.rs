//! Orthographic six-face projection of point clouds and raster utilities.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::{bounding_cube, BoundingCube, PointCloud};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{} pixels do not fill a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    /// Copy of the `w`×`h` region whose top-left corner is (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RasterImage {
        let mut out = RasterImage::filled(w, h, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, self.get(x0 + x, y0 + y));
            }
        }
        out
    }

    fn blit(&mut self, src: &RasterImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            let row = (y0 + y) * self.width + x0;
            self.pixels[row..row + src.width].copy_from_slice(&src.pixels[y * src.width..(y + 1) * src.width]);
        }
    }

    /// Channel-first tensor of shape (3, height, width) with values in [0, 1].
    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); 3 * plane];
        let inv = T::of(1.0 / 255.0);
        for (i, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::of(p[c] as f64) * inv;
            }
        }
        Tensor::new(vec![3, self.height, self.width], data).expect("consistent image shape")
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Image(format!("invalid PPM: {m}"));
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if tokens[0] != "P6" {
            return Err(bad("expected P6 magic"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
        let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        pos += 1;
        let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
        let pixels = body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        RasterImage::from_pixels(w, h, pixels)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 0,
            Face::PosY | Face::NegY => 1,
            Face::PosZ | Face::NegZ => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Face::PosX | Face::PosY | Face::PosZ => 1.0,
            _ => -1.0,
        }
    }

    /// Image right and up directions as seen by a viewer outside the face
    /// looking toward the cube center.
    fn basis(self) -> ([f64; 3], [f64; 3]) {
        match self {
            Face::PosX => ([0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
            Face::NegX => ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
            Face::PosY => ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
            Face::NegY => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            Face::PosZ => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            Face::NegZ => ([-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Face::PosX => "+x",
            Face::NegX => "-x",
            Face::PosY => "+y",
            Face::NegY => "-y",
            Face::PosZ => "+z",
            Face::NegZ => "-z",
        }
    }

    pub fn parse(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    SixFace,
    SingleFace(Face),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionConfig {
    pub face_resolution: usize,
    pub mode: ProjectionMode,
    pub background: [u8; 3],
    pub splat_radius: usize,
    pub output_size: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            face_resolution: 512,
            mode: ProjectionMode::SixFace,
            background: [255, 255, 255],
            splat_radius: 0,
            output_size: 224,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.face_resolution < 8 {
            return Err(Error::Config(format!("face_resolution {} < 8", self.face_resolution)));
        }
        if self.output_size < 16 {
            return Err(Error::Config(format!("output_size {} < 16", self.output_size)));
        }
        Ok(())
    }
}

/// Pixel (column, row) and viewing depth of a point on `face`.
pub fn face_coords(p: [f32; 3], cube: &BoundingCube, face: Face, res: usize) -> (usize, usize, f64) {
    let d = [0, 1, 2].map(|a| p[a] as f64 - cube.center[a]);
    let (right, up) = face.basis();
    let dot = |v: [f64; 3]| d[0] * v[0] + d[1] * v[1] + d[2] * v[2];
    let h = cube.half_extent;
    let scale = res as f64 / (2.0 * h);
    let to_px = |t: f64| ((t * scale).floor().max(0.0) as usize).min(res - 1);
    let col = to_px(dot(right) + h);
    let row = to_px(h - dot(up));
    let depth = h - face.sign() * d[face.axis()];
    (col, row, depth)
}

pub fn render_face(cloud: &PointCloud, cube: &BoundingCube, face: Face, config: &ProjectionConfig) -> RasterImage {
    let res = config.face_resolution;
    let mut img = RasterImage::filled(res, res, config.background);
    let mut depth = vec![f64::INFINITY; res * res];
    let r = config.splat_radius as isize;
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        let (col, row, z) = face_coords(*p, cube, face, res);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (col as isize + dx, row as isize + dy);
                if x < 0 || y < 0 || x >= res as isize || y >= res as isize {
                    continue;
                }
                let i = y as usize * res + x as usize;
                // strict comparison keeps the earliest point on equal depth
                if z < depth[i] {
                    depth[i] = z;
                    img.pixels[i] = *c;
                }
            }
        }
    }
    img
}

/// Faces of a six-face splice in (column, row) tile order.
pub const SPLICE_LAYOUT: [(Face, usize, usize); 6] = [
    (Face::PosX, 0, 0),
    (Face::PosY, 1, 0),
    (Face::PosZ, 2, 0),
    (Face::NegX, 0, 1),
    (Face::NegY, 1, 1),
    (Face::NegZ, 2, 1),
];

/// All six faces spliced into a 3×2 mosaic, before resizing.
pub fn splice_faces(cloud: &PointCloud, cube: &BoundingCube, config: &ProjectionConfig) -> RasterImage {
    let res = config.face_resolution;
    let mut out = RasterImage::filled(3 * res, 2 * res, config.background);
    for (face, tx, ty) in SPLICE_LAYOUT {
        out.blit(&render_face(cloud, cube, face, config), tx * res, ty * res);
    }
    out
}

/// Network-ready projection: the six-face splice (or a single face) resized
/// to `output_size` square.
pub fn render_multiperspective(cloud: &PointCloud, config: &ProjectionConfig) -> Result<RasterImage> {
    config.validate()?;
    let cube = bounding_cube(cloud)?;
    let full = match config.mode {
        ProjectionMode::SixFace => splice_faces(cloud, &cube, config),
        ProjectionMode::SingleFace(face) => render_face(cloud, &cube, face, config),
    };
    Ok(resize_bilinear(&full, config.output_size))
}

pub fn resize_bilinear(image: &RasterImage, size: usize) -> RasterImage {
    resize_bilinear_to(image, size, size)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear_to(image: &RasterImage, width: usize, height: usize) -> RasterImage {
    assert!(width >= 1 && height >= 1, "target size must be positive");
    if width == image.width && height == image.height {
        return image.clone();
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(width, image.width);
    let ys = taps(height, image.height);
    let mut out = RasterImage::filled(width, height, [0; 3]);
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let (a, b, c, d) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
            let mut px = [0u8; 3];
            for k in 0..3 {
                let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
                let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
                px[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, px);
        }
    }
    out
}
