//! Procedural renderers from manifold points to images, training triplets,
//! and the dataset / image file formats.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{quat_to_matrix, Manifold, ManifoldPoint};

/// Pixel values below this are cut off to zero.
const CUTOFF: f64 = 1.0 / 255.0;

pub const DATASET_MAGIC: &[u8; 4] = b"LBLD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![0.0; width * height * channels],
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn is_valid(&self) -> bool {
        self.pixels.len() == self.width * self.height * self.channels
            && self
                .pixels
                .iter()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Binary PGM (P5) for one channel, PPM (P6) for three.
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let tag = match self.channels {
            1 => "P5",
            3 => "P6",
            c => {
                return Err(Error::InvalidArgument(format!(
                    "cannot write {c}-channel image"
                )))
            }
        };
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "{tag}\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

/// Rounds every pixel to 0 or 1 (`>= 0.5` maps to 1).
pub fn quantize(img: &Image) -> Image {
    Image {
        pixels: img
            .pixels
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
        ..*img
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub img_x: Image,
    pub img_y: Image,
    pub img_av: Image,
    pub dist: f64,
}

/// Rotated, scaled and translated anisotropic Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    /// Ratio of the major to the minor standard deviation.
    pub aspect: f64,
    /// Range `[a, b]` of the major-axis standard deviation.
    pub scale: (f64, f64),
    /// Range `[c, d]` of both center coordinates. The image shows `[c, d]^2`.
    pub translation: (f64, f64),
    /// Circumference of the orientation circle. A Gaussian is symmetric
    /// under rotation by pi, so pi makes the image map injective.
    pub orientation_period: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            aspect: 2.0,
            scale: (0.25, 0.45),
            translation: (-1.0, 1.0),
            orientation_period: PI,
        }
    }
}

/// Sundial shadows.
#[derive(Clone, Debug, PartialEq)]
pub struct SundialParams {
    pub rod_height: f64,
    pub orth_std: f64,
    pub var_floor: f64,
    /// The image shows `[-extent, extent]^2` of the ground plane.
    pub extent: f64,
}

impl Default for SundialParams {
    fn default() -> Self {
        Self {
            rod_height: 0.5,
            orth_std: 0.1,
            var_floor: 0.01,
            extent: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub pos: [f64; 3],
    pub color: [f64; 3],
}

/// Orthographic splats of a rotated rigid landmark set.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkParams {
    pub landmarks: Vec<Landmark>,
    pub radius: f64,
    pub channels: usize,
    pub extent: f64,
}

impl Default for LandmarkParams {
    fn default() -> Self {
        let lm = |pos: [f64; 3], color: [f64; 3]| Landmark { pos, color };
        Self {
            landmarks: vec![
                lm([0.62, 0.05, 0.0], [1.0, 0.2, 0.2]),
                lm([-0.3, 0.48, 0.08], [0.2, 1.0, 0.2]),
                lm([-0.22, -0.31, 0.52], [0.2, 0.3, 1.0]),
                lm([0.12, 0.24, -0.57], [1.0, 1.0, 0.3]),
                lm([0.37, -0.43, -0.17], [0.9, 0.3, 1.0]),
                lm([-0.55, -0.12, -0.29], [0.3, 1.0, 1.0]),
                lm([0.05, 0.58, 0.41], [0.7, 0.7, 0.7]),
            ],
            radius: 0.14,
            channels: 3,
            extent: 1.0,
        }
    }
}

impl LandmarkParams {
    /// A landmark set without rotational symmetry: non-coplanar, and all
    /// pairwise distances distinct.
    pub fn is_asymmetric(&self) -> bool {
        let lms = &self.landmarks;
        if lms.len() < 4 {
            return false;
        }
        let mut dists = Vec::new();
        for i in 0..lms.len() {
            for j in i + 1..lms.len() {
                let d: f64 = (0..3)
                    .map(|k| (lms[i].pos[k] - lms[j].pos[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                dists.push(d);
            }
        }
        dists.sort_by(f64::total_cmp);
        if dists.windows(2).any(|w| w[1] - w[0] < 1e-6) {
            return false;
        }
        // some tetrahedron of landmarks must have volume
        let p0 = lms[0].pos;
        let rel: Vec<[f64; 3]> = lms[1..]
            .iter()
            .map(|l| [l.pos[0] - p0[0], l.pos[1] - p0[1], l.pos[2] - p0[2]])
            .collect();
        for i in 0..rel.len() {
            for j in i + 1..rel.len() {
                for k in j + 1..rel.len() {
                    let c = crate::geometry::cross(&rel[j], &rel[k]);
                    let det = rel[i][0] * c[0] + rel[i][1] * c[1] + rel[i][2] * c[2];
                    if det.abs() > 1e-6 {
                        return true;
                    }
                }
            }
        }
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    /// Anisotropic Gaussians on `S^1 x [a,b] x [c,d]^2`.
    G,
    /// Anisotropic Gaussians with fixed scale and center; only the
    /// orientation circle varies.
    GRotation,
    /// Sundial shadows on the upper hemisphere.
    S,
    /// Rotated landmark object on SO(3).
    R,
    /// The unit square, rendered as its own two coordinates.
    FlatSquare,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::G => "g",
            DatasetKind::GRotation => "g-rot",
            DatasetKind::S => "s",
            DatasetKind::R => "r",
            DatasetKind::FlatSquare => "flat-square",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(DatasetKind::G),
            "g-rot" | "g_rot" | "grot" => Ok(DatasetKind::GRotation),
            "s" => Ok(DatasetKind::S),
            "r" => Ok(DatasetKind::R),
            "flat-square" | "flat_square" => Ok(DatasetKind::FlatSquare),
            other => Err(Error::InvalidArgument(format!("unknown dataset '{other}'"))),
        }
    }

    /// Locality radius used for training: pi/2 for the Gaussian circle
    /// factor and the sundial, pi/4 for rotations.
    pub fn default_epsilon(&self) -> f64 {
        match self {
            DatasetKind::G | DatasetKind::GRotation | DatasetKind::S => PI / 2.0,
            DatasetKind::R => PI / 4.0,
            DatasetKind::FlatSquare => 0.25,
        }
    }

    pub fn default_latent_dim(&self) -> usize {
        match self {
            DatasetKind::R => 16,
            _ => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RendererParams {
    G(GaussianParams),
    GRotation {
        gaussian: GaussianParams,
        scale: f64,
        center: (f64, f64),
    },
    S(SundialParams),
    R(LandmarkParams),
    FlatSquare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RendererConfig {
    /// Side length in pixels.
    pub resolution: usize,
    pub params: RendererParams,
}

impl RendererConfig {
    pub fn new(kind: DatasetKind, resolution: usize) -> Result<Self> {
        let params = match kind {
            DatasetKind::G => RendererParams::G(GaussianParams::default()),
            DatasetKind::GRotation => RendererParams::GRotation {
                gaussian: GaussianParams::default(),
                scale: 0.6,
                center: (0.0, 0.0),
            },
            DatasetKind::S => RendererParams::S(SundialParams::default()),
            DatasetKind::R => RendererParams::R(LandmarkParams::default()),
            DatasetKind::FlatSquare => RendererParams::FlatSquare,
        };
        let cfg = Self { resolution, params };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::InvalidArgument(format!(
                "resolution {} below 8",
                self.resolution
            )));
        }
        let g_ok = |g: &GaussianParams| {
            g.aspect > 0.0
                && g.scale.0 > 0.0
                && g.scale.0 < g.scale.1
                && g.translation.0 < g.translation.1
                && g.orientation_period > 0.0
        };
        let ok = match &self.params {
            RendererParams::G(g) => g_ok(g),
            RendererParams::GRotation {
                gaussian, scale, ..
            } => g_ok(gaussian) && *scale > 0.0,
            RendererParams::S(s) => {
                s.rod_height > 0.0 && s.orth_std > 0.0 && s.var_floor > 0.0 && s.extent > 0.0
            }
            RendererParams::R(r) => {
                r.is_asymmetric() && r.radius > 0.0 && matches!(r.channels, 1 | 3)
            }
            RendererParams::FlatSquare => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid renderer config {:?}",
                self.params
            )))
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self.params {
            RendererParams::G(_) => DatasetKind::G,
            RendererParams::GRotation { .. } => DatasetKind::GRotation,
            RendererParams::S(_) => DatasetKind::S,
            RendererParams::R(_) => DatasetKind::R,
            RendererParams::FlatSquare => DatasetKind::FlatSquare,
        }
    }

    /// The manifold the renderer is parametrized by.
    pub fn manifold(&self) -> Manifold {
        match &self.params {
            RendererParams::G(g) => Manifold::Product(vec![
                Manifold::Circle {
                    circumference: g.orientation_period,
                },
                Manifold::Interval {
                    lo: g.scale.0,
                    hi: g.scale.1,
                },
                Manifold::Interval {
                    lo: g.translation.0,
                    hi: g.translation.1,
                },
                Manifold::Interval {
                    lo: g.translation.0,
                    hi: g.translation.1,
                },
            ]),
            RendererParams::GRotation { gaussian, .. } => Manifold::Circle {
                circumference: gaussian.orientation_period,
            },
            RendererParams::S(_) => Manifold::Hemisphere2,
            RendererParams::R(_) => Manifold::SO3,
            RendererParams::FlatSquare => Manifold::Product(vec![
                Manifold::Interval { lo: 0.0, hi: 1.0 },
                Manifold::Interval { lo: 0.0, hi: 1.0 },
            ]),
        }
    }

    /// `(width, height, channels)` of rendered images.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        match &self.params {
            RendererParams::R(r) => (self.resolution, self.resolution, r.channels),
            RendererParams::FlatSquare => (2, 1, 1),
            _ => (self.resolution, self.resolution, 1),
        }
    }

    pub fn image_len(&self) -> usize {
        let (w, h, c) = self.image_shape();
        w * h * c
    }

    pub fn render(&self, p: &ManifoldPoint) -> Result<Image> {
        match &self.params {
            RendererParams::G(g) => {
                let c = &p.coords;
                if c.len() != 4 {
                    return Err(Error::InvalidArgument("G point needs 4 coordinates".into()));
                }
                Ok(render_gaussian(self.resolution, g, c[0], c[1], c[2], c[3]))
            }
            RendererParams::GRotation {
                gaussian,
                scale,
                center,
            } => {
                if p.coords.len() != 1 {
                    return Err(Error::InvalidArgument(
                        "orientation point needs 1 coordinate".into(),
                    ));
                }
                Ok(render_gaussian(
                    self.resolution,
                    gaussian,
                    p.coords[0],
                    *scale,
                    center.0,
                    center.1,
                ))
            }
            RendererParams::S(s) => render_sundial(self.resolution, s, p),
            RendererParams::R(r) => render_landmarks(self.resolution, r, p),
            RendererParams::FlatSquare => {
                if p.coords.len() != 2 {
                    return Err(Error::InvalidArgument(
                        "square point needs 2 coordinates".into(),
                    ));
                }
                Ok(Image {
                    width: 2,
                    height: 1,
                    channels: 1,
                    pixels: p.coords.clone(),
                })
            }
        }
    }

    fn uses_circle_locality(&self) -> bool {
        matches!(self.params, RendererParams::G(_))
    }

    /// Draws a pair for training: circle-factor locality for (G), full
    /// geodesic locality otherwise.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        eps: f64,
        rng: &mut R,
    ) -> Result<(ManifoldPoint, ManifoldPoint)> {
        let m = self.manifold();
        if self.uses_circle_locality() {
            m.sample_pair_g(eps, rng)
        } else {
            m.sample_pair(eps, rng)
        }
    }

    /// Renders the triplet for a given pair. Returns `None` for pairs closer
    /// than `1e-6 * eps`, which would make the difference quotients blow up.
    pub fn build_triplet(
        &self,
        x: &ManifoldPoint,
        y: &ManifoldPoint,
        eps: f64,
    ) -> Result<Option<Triplet>> {
        let m = self.manifold();
        let dist = m.distance(x, y)?;
        if dist < 1e-6 * eps {
            return Ok(None);
        }
        let av = m.average(x, y, 0.5)?;
        Ok(Some(Triplet {
            img_x: self.render(x)?,
            img_y: self.render(y)?,
            img_av: self.render(&av)?,
            dist,
        }))
    }

    pub fn make_triplet<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Result<Triplet> {
        loop {
            let (x, y) = self.sample_pair(eps, rng)?;
            if let Some(t) = self.build_triplet(&x, &y, eps)? {
                return Ok(t);
            }
        }
    }
}

/// Derives the independent random stream for record `index` of a seed.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates `count` triplets. Record `i` draws from its own stream of
/// `seed`, so the output does not depend on the number of workers.
pub fn generate_triplets(
    cfg: &RendererConfig,
    eps: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Triplet>> {
    let make = |i: usize| cfg.make_triplet(eps, &mut record_rng(seed, i as u64));
    if workers <= 1 {
        return (0..count).map(make).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| (0..count).into_par_iter().map(make).collect())
}

fn pixel_center(lo: f64, h: f64, i: usize) -> f64 {
    lo + (i as f64 + 0.5) * h
}

fn cut(v: f64) -> f64 {
    if v < CUTOFF {
        0.0
    } else {
        v.min(1.0)
    }
}

/// Anisotropic Gaussian with peak 1 at `(cx, cy)`, major standard deviation
/// `scale` along angle `alpha`, minor `scale / aspect`. Column index runs
/// along the first plane coordinate, row index along the second.
fn render_gaussian(
    res: usize,
    g: &GaussianParams,
    alpha: f64,
    scale: f64,
    cx: f64,
    cy: f64,
) -> Image {
    let (lo, hi) = g.translation;
    let h = (hi - lo) / res as f64;
    let (sa, ca) = alpha.sin_cos();
    let inv_major = 1.0 / (scale * scale);
    let inv_minor = (g.aspect * g.aspect) / (scale * scale);
    let mut img = Image::zeros(res, res, 1);
    for i in 0..res {
        let dy = pixel_center(lo, h, i) - cy;
        for j in 0..res {
            let dx = pixel_center(lo, h, j) - cx;
            let a = ca * dx + sa * dy;
            let b = -sa * dx + ca * dy;
            img.pixels[i * res + j] = cut((-0.5 * (a * a * inv_major + b * b * inv_minor)).exp());
        }
    }
    img
}

/// Ground-plane shadow tip for a sun position on the upper hemisphere: the
/// line through the rod tip `(0, 0, h)` and the antipode `-p` of the sun
/// meets the plane at `y = -h (p1, p2) / (h + p3)`. The shadow points away
/// from the sun, has length in `[0, 1]` on the closed hemisphere and grows
/// monotonically with the zenith angle.
pub fn shadow_tip(p: &ManifoldPoint, rod_height: f64) -> Result<[f64; 2]> {
    let c = &p.coords;
    if c.len() != 3 {
        return Err(Error::InvalidArgument(
            "sun position needs 3 coordinates".into(),
        ));
    }
    let denom = rod_height + c[2];
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "shadow line parallel to the ground plane".into(),
        ));
    }
    let s = rod_height / denom;
    Ok([-s * c[0], -s * c[1]])
}

fn render_sundial(res: usize, s: &SundialParams, p: &ManifoldPoint) -> Result<Image> {
    let y = shadow_tip(p, s.rod_height)?;
    let len = (y[0] * y[0] + y[1] * y[1]).sqrt();
    let (ux, uy) = if len > 0.0 {
        (y[0] / len, y[1] / len)
    } else {
        (1.0, 0.0)
    };
    let var_along = len.max(s.var_floor);
    let var_orth = s.orth_std * s.orth_std;
    let (cx, cy) = (0.5 * y[0], 0.5 * y[1]);
    let h = 2.0 * s.extent / res as f64;
    let mut img = Image::zeros(res, res, 1);
    for i in 0..res {
        let dy = pixel_center(-s.extent, h, i) - cy;
        for j in 0..res {
            let dx = pixel_center(-s.extent, h, j) - cx;
            let a = ux * dx + uy * dy;
            let b = -uy * dx + ux * dy;
            img.pixels[i * res + j] = cut((-0.5 * (a * a / var_along + b * b / var_orth)).exp());
        }
    }
    Ok(img)
}

fn render_landmarks(res: usize, r: &LandmarkParams, q: &ManifoldPoint) -> Result<Image> {
    if q.coords.len() != 4 {
        return Err(Error::InvalidArgument("rotation needs a quaternion".into()));
    }
    let rot = quat_to_matrix(&q.coords);
    let h = 2.0 * r.extent / res as f64;
    let inv = 1.0 / (2.0 * r.radius * r.radius);
    let ch = r.channels;
    let mut acc = vec![0.0; res * res * ch];
    let mut gx = vec![0.0; res];
    let mut gy = vec![0.0; res];
    for lm in &r.landmarks {
        let p = lm.pos;
        let px = rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2];
        let py = rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2];
        // separable blob: exp(-(dx^2 + dy^2) / 2r^2) = gx * gy
        for k in 0..res {
            let c = pixel_center(-r.extent, h, k);
            gx[k] = (-(c - px) * (c - px) * inv).exp();
            gy[k] = (-(c - py) * (c - py) * inv).exp();
        }
        let color: Vec<f64> = if ch == 1 {
            vec![(lm.color[0] + lm.color[1] + lm.color[2]) / 3.0]
        } else {
            lm.color.to_vec()
        };
        for i in 0..res {
            for j in 0..res {
                let v = gy[i] * gx[j];
                let base = (i * res + j) * ch;
                for (c, w) in color.iter().enumerate() {
                    acc[base + c] += w * v;
                }
            }
        }
    }
    Ok(Image {
        width: res,
        height: res,
        channels: ch,
        pixels: acc.into_iter().map(cut).collect(),
    })
}

/// Writes triplets as an `LBLD` dataset file.
pub fn write_dataset(path: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, triplets)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(w: &mut W, triplets: &[Triplet]) -> Result<()> {
    let (width, height, channels) = triplets
        .first()
        .map(|t| t.img_x.shape())
        .unwrap_or((0, 0, 0));
    w.write_all(DATASET_MAGIC)?;
    for v in [
        DATASET_VERSION,
        u32::try_from(triplets.len()).map_err(|_| Error::Format("too many records".into()))?,
        width as u32,
        height as u32,
        channels as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in triplets {
        for img in [&t.img_x, &t.img_y, &t.img_av] {
            if img.shape() != (width, height, channels) {
                return Err(Error::Shape("triplet images differ in shape".into()));
            }
            for &p in &img.pixels {
                w.write_all(&(p as f32).to_le_bytes())?;
            }
        }
        w.write_all(&t.dist.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Triplet>> {
    read_dataset_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<Vec<Triplet>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not an LBLD dataset".into()));
    }
    let mut u32s = [0u32; 5];
    for v in u32s.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, count, width, height, channels] = u32s;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let (width, height, channels) = (width as usize, height as usize, channels as usize);
    let n = width * height * channels;
    let mut buf = vec![0u8; n * 4];
    let mut read_img = |r: &mut R| -> Result<Image> {
        r.read_exact(&mut buf)?;
        let pixels = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    };
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let img_x = read_img(r)?;
        let img_y = read_img(r)?;
        let img_av = read_img(r)?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        out.push(Triplet {
            img_x,
            img_y,
            img_av,
            dist: f64::from_le_bytes(b),
        });
    }
    Ok(out)
}
