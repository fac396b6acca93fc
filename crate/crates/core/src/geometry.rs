//! Closed-form Riemannian geometry for the manifolds the datasets live on.
//!
//! Every supported kind has an exact geodesic distance, weighted geodesic
//! average, exponential and logarithm map, and a sampler that is uniform
//! with respect to the Riemannian volume. Unit quaternions represent
//! rotations; `q` and `-q` are the same point of SO(3) and all operations
//! respect that.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// Trials without a single acceptance after which pair sampling gives up.
/// Zero hits in this many draws puts the acceptance rate below 1e-6.
const REJECTION_WINDOW: u64 = 4_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Manifold {
    /// Circle parametrized by arclength angle in `[0, circumference)`.
    Circle {
        circumference: f64,
    },
    Interval {
        lo: f64,
        hi: f64,
    },
    Product(Vec<Manifold>),
    Sphere2,
    /// Closed upper hemisphere `z >= 0` of the unit sphere.
    Hemisphere2,
    /// Rotations as unit quaternions `(w, x, y, z)`.
    SO3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub coords: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl From<Vec<f64>> for ManifoldPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// Tangent vector at `base`.
///
/// Circle and interval tangents are scalars, sphere tangents are ambient
/// 3-vectors orthogonal to the base point, and SO(3) tangents are rotation
/// vectors (axis times rotation angle). Because the SO(3) distance is the
/// quaternion angle, i.e. half the rotation angle, the metric norm of an
/// SO(3) tangent is half its Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub components: Vec<f64>,
}

impl Manifold {
    pub fn circle(circumference: f64) -> Result<Self> {
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "circle circumference must be positive, got {circumference}"
            )));
        }
        Ok(Manifold::Circle { circumference })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "interval requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Manifold::Interval { lo, hi })
    }

    pub fn product(factors: Vec<Manifold>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("empty product manifold".into()));
        }
        Ok(Manifold::Product(factors))
    }

    /// Intrinsic dimension `m`.
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Circle { .. } | Manifold::Interval { .. } => 1,
            Manifold::Product(fs) => fs.iter().map(Manifold::dim).sum(),
            Manifold::Sphere2 | Manifold::Hemisphere2 => 2,
            Manifold::SO3 => 3,
        }
    }

    /// Number of stored coordinates of a point.
    pub fn coord_len(&self) -> usize {
        match self {
            Manifold::Circle { .. } | Manifold::Interval { .. } => 1,
            Manifold::Product(fs) => fs.iter().map(Manifold::coord_len).sum(),
            Manifold::Sphere2 | Manifold::Hemisphere2 => 3,
            Manifold::SO3 => 4,
        }
    }

    /// Number of stored components of a tangent vector.
    pub fn tangent_len(&self) -> usize {
        match self {
            Manifold::Circle { .. } | Manifold::Interval { .. } => 1,
            Manifold::Product(fs) => fs.iter().map(Manifold::tangent_len).sum(),
            Manifold::Sphere2 | Manifold::Hemisphere2 => 3,
            Manifold::SO3 => 3,
        }
    }

    /// Distance below which the minimizing geodesic is unique.
    ///
    /// For products this is the smallest factor bound, which is sufficient
    /// but not necessary; `average` checks each factor individually.
    pub fn uniqueness_bound(&self) -> f64 {
        match self {
            Manifold::Circle { circumference } => circumference / 2.0,
            Manifold::Interval { .. } => f64::INFINITY,
            Manifold::Product(fs) => fs
                .iter()
                .map(Manifold::uniqueness_bound)
                .fold(f64::INFINITY, f64::min),
            Manifold::Sphere2 | Manifold::Hemisphere2 => PI,
            Manifold::SO3 => PI / 2.0,
        }
    }

    pub fn validate(&self, p: &ManifoldPoint) -> Result<()> {
        self.validate_coords(&p.coords)
    }

    fn validate_coords(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.coord_len() {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, {:?} expects {}",
                c.len(),
                self,
                self.coord_len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        match self {
            Manifold::Circle { circumference } => {
                if c[0] < 0.0 || c[0] >= *circumference {
                    return Err(Error::InvalidArgument(format!(
                        "angle {} outside [0, {circumference})",
                        c[0]
                    )));
                }
            }
            Manifold::Interval { lo, hi } => {
                if c[0] < *lo || c[0] > *hi {
                    return Err(Error::InvalidArgument(format!(
                        "value {} outside [{lo}, {hi}]",
                        c[0]
                    )));
                }
            }
            Manifold::Product(fs) => {
                let mut off = 0;
                for f in fs {
                    let n = f.coord_len();
                    f.validate_coords(&c[off..off + n])?;
                    off += n;
                }
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 | Manifold::SO3 => {
                let norm = norm(c);
                if (norm - 1.0).abs() > UNIT_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "point norm {norm} is not 1"
                    )));
                }
                if matches!(self, Manifold::Hemisphere2) && c[2] < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "hemisphere point has z = {} < 0",
                        c[2]
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_pair(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let n = self.coord_len();
        if x.len() != n || y.len() != n {
            return Err(Error::InvalidArgument(format!(
                "points with {} and {} coordinates do not belong to {:?}",
                x.len(),
                y.len(),
                self
            )));
        }
        Ok(())
    }

    /// Geodesic distance.
    pub fn distance(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
        self.check_pair(&x.coords, &y.coords)?;
        Ok(self.dist_raw(&x.coords, &y.coords))
    }

    fn dist_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Manifold::Circle { circumference } => circle_dist(x[0], y[0], *circumference),
            Manifold::Interval { .. } => (x[0] - y[0]).abs(),
            Manifold::Product(fs) => {
                let mut off = 0;
                let mut sq = 0.0;
                for f in fs {
                    let n = f.coord_len();
                    let d = f.dist_raw(&x[off..off + n], &y[off..off + n]);
                    sq += d * d;
                    off += n;
                }
                sq.sqrt()
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => unit_angle(x, y),
            Manifold::SO3 => {
                if dot(x, y) < 0.0 {
                    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                    unit_angle(x, &neg)
                } else {
                    unit_angle(x, y)
                }
            }
        }
    }

    /// Weighted geodesic average with weights `1 - t` and `t`: the point at
    /// parameter `t` along the minimizing geodesic from `x` to `y`.
    pub fn average(&self, x: &ManifoldPoint, y: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
        self.check_pair(&x.coords, &y.coords)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
        }
        if t == 0.0 {
            return Ok(x.clone());
        }
        let mut out = vec![0.0; x.coords.len()];
        self.average_raw(&x.coords, &y.coords, t, &mut out)?;
        Ok(ManifoldPoint::new(out))
    }

    fn average_raw(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Manifold::Circle { circumference } => {
                let c = *circumference;
                let delta = signed_circle_diff(x[0], y[0], c);
                if delta.abs() >= c / 2.0 {
                    return Err(Error::AmbiguousGeodesic {
                        distance: delta.abs(),
                        bound: c / 2.0,
                    });
                }
                out[0] = wrap(x[0] + t * delta, c);
            }
            Manifold::Interval { .. } => {
                out[0] = (1.0 - t) * x[0] + t * y[0];
            }
            Manifold::Product(fs) => {
                let mut off = 0;
                for f in fs {
                    let n = f.coord_len();
                    f.average_raw(
                        &x[off..off + n],
                        &y[off..off + n],
                        t,
                        &mut out[off..off + n],
                    )?;
                    off += n;
                }
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => slerp(x, y, t, PI, out)?,
            Manifold::SO3 => {
                if dot(x, y) < 0.0 {
                    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                    slerp4(x, &neg, t, out)?;
                } else {
                    slerp4(x, y, t, out)?;
                }
            }
        }
        Ok(())
    }

    /// Point uniformly distributed with respect to the Riemannian volume.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        let mut out = Vec::with_capacity(self.coord_len());
        self.sample_into(rng, &mut out);
        ManifoldPoint::new(out)
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            Manifold::Circle { circumference } => {
                out.push(wrap(rng.random::<f64>() * circumference, *circumference))
            }
            Manifold::Interval { lo, hi } => out.push(lo + (hi - lo) * rng.random::<f64>()),
            Manifold::Product(fs) => {
                for f in fs {
                    f.sample_into(rng, out);
                }
            }
            Manifold::Sphere2 => out.extend(gaussian_unit::<3, _>(rng)),
            Manifold::Hemisphere2 => loop {
                let p = gaussian_unit::<3, _>(rng);
                if p[2] >= 0.0 {
                    out.extend(p);
                    break;
                }
            },
            Manifold::SO3 => out.extend(gaussian_unit::<4, _>(rng)),
        }
    }

    /// Pair drawn uniformly from `M x M` conditioned on `d(x, y) <= eps`,
    /// by rejection.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        eps: f64,
        rng: &mut R,
    ) -> Result<(ManifoldPoint, ManifoldPoint)> {
        check_eps(eps)?;
        let mut trials = 0u64;
        loop {
            let x = self.sample_uniform(rng);
            let y = self.sample_uniform(rng);
            if self.dist_raw(&x.coords, &y.coords) <= eps {
                return Ok((x, y));
            }
            trials += 1;
            if trials >= REJECTION_WINDOW {
                return Err(Error::PathologicalEpsilon {
                    epsilon: eps,
                    trials,
                });
            }
        }
    }

    /// Pair sampler for product manifolds whose first factor is a circle:
    /// only the circle coordinates are constrained to lie within `eps`, the
    /// remaining factors are drawn independently and uniformly.
    pub fn sample_pair_g<R: Rng + ?Sized>(
        &self,
        eps: f64,
        rng: &mut R,
    ) -> Result<(ManifoldPoint, ManifoldPoint)> {
        check_eps(eps)?;
        let first = match self {
            Manifold::Product(fs) if matches!(fs[0], Manifold::Circle { .. }) => &fs[0],
            Manifold::Circle { .. } => self,
            _ => {
                return Err(Error::InvalidArgument(
                    "sample_pair_g needs a product whose first factor is a circle".into(),
                ))
            }
        };
        let x = self.sample_uniform(rng);
        let mut trials = 0u64;
        loop {
            let y = self.sample_uniform(rng);
            if first.dist_raw(&x.coords[..1], &y.coords[..1]) <= eps {
                return Ok((x, y));
            }
            trials += 1;
            if trials >= REJECTION_WINDOW {
                return Err(Error::PathologicalEpsilon {
                    epsilon: eps,
                    trials,
                });
            }
        }
    }

    /// Point uniformly distributed (w.r.t. volume) in the geodesic ball of
    /// radius `eps` around `x`.
    ///
    /// Circles and spheres use exact inverse-CDF draws, everything else
    /// rejects from a box of per-factor balls. The exact draws consume the
    /// same random numbers for every `eps`, so runs over several radii with
    /// one seed share their random numbers.
    pub fn sample_in_ball<R: Rng + ?Sized>(
        &self,
        x: &ManifoldPoint,
        eps: f64,
        rng: &mut R,
    ) -> Result<ManifoldPoint> {
        check_eps(eps)?;
        self.check_pair(&x.coords, &x.coords)?;
        let mut trials = 0u64;
        loop {
            let mut out = Vec::with_capacity(x.coords.len());
            if self.ball_candidate(&x.coords, eps, rng, &mut out)
                && self.dist_raw(&x.coords, &out) <= eps
            {
                return Ok(ManifoldPoint::new(out));
            }
            trials += 1;
            if trials >= REJECTION_WINDOW {
                return Err(Error::PathologicalEpsilon {
                    epsilon: eps,
                    trials,
                });
            }
        }
    }

    /// Appends a candidate point to `out`; returns false when the candidate
    /// fell outside the manifold.
    fn ball_candidate<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        eps: f64,
        rng: &mut R,
        out: &mut Vec<f64>,
    ) -> bool {
        match self {
            Manifold::Circle { circumference } => {
                let c = *circumference;
                let u: f64 = rng.random();
                if eps >= c / 2.0 {
                    out.push(wrap(u * c, c));
                } else {
                    out.push(wrap(x[0] + eps * (2.0 * u - 1.0), c));
                }
                true
            }
            Manifold::Interval { lo, hi } => {
                let u: f64 = rng.random();
                let v = x[0] + eps * (2.0 * u - 1.0);
                out.push(v);
                v >= *lo && v <= *hi
            }
            Manifold::Product(fs) => {
                let mut off = 0;
                let mut inside = true;
                for f in fs {
                    let n = f.coord_len();
                    inside &= f.ball_candidate(&x[off..off + n], eps, rng, out);
                    off += n;
                }
                inside
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => {
                let e = eps.min(PI);
                let u: f64 = rng.random();
                let w: f64 = rng.random();
                let cos_s = 1.0 - u * (1.0 - e.cos());
                let sin_s = (1.0 - cos_s * cos_s).max(0.0).sqrt();
                let az = 2.0 * PI * w;
                let [e1, e2] = sphere_frame(x);
                for k in 0..3 {
                    out.push(cos_s * x[k] + sin_s * (az.cos() * e1[k] + az.sin() * e2[k]));
                }
                normalize_tail(out, 3);
                !(matches!(self, Manifold::Hemisphere2) && out[out.len() - 1] < 0.0)
            }
            Manifold::SO3 => {
                out.extend(gaussian_unit::<4, _>(rng));
                true
            }
        }
    }

    /// Metric norm of a tangent vector.
    pub fn norm_g(&self, v: &TangentVector) -> f64 {
        self.norm_g_raw(&v.components)
    }

    fn norm_g_raw(&self, v: &[f64]) -> f64 {
        match self {
            Manifold::Circle { .. } | Manifold::Interval { .. } => v[0].abs(),
            Manifold::Product(fs) => {
                let mut off = 0;
                let mut sq = 0.0;
                for f in fs {
                    let n = f.tangent_len();
                    let a = f.norm_g_raw(&v[off..off + n]);
                    sq += a * a;
                    off += n;
                }
                sq.sqrt()
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => norm(v),
            Manifold::SO3 => 0.5 * norm(v),
        }
    }

    /// Riemannian exponential map.
    pub fn exp_map(&self, x: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
        self.validate(x)?;
        if v.components.len() != self.tangent_len() {
            return Err(Error::InvalidArgument(format!(
                "tangent has {} components, expected {}",
                v.components.len(),
                self.tangent_len()
            )));
        }
        let mut out = vec![0.0; x.coords.len()];
        self.exp_raw(&x.coords, &v.components, &mut out)?;
        Ok(ManifoldPoint::new(out))
    }

    fn exp_raw(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Manifold::Circle { circumference } => {
                let c = *circumference;
                if v[0].abs() >= c / 2.0 {
                    return Err(Error::Domain(format!(
                        "|v| = {} beyond circle bound {}",
                        v[0].abs(),
                        c / 2.0
                    )));
                }
                out[0] = wrap(x[0] + v[0], c);
            }
            Manifold::Interval { lo, hi } => {
                let y = x[0] + v[0];
                if y < *lo || y > *hi {
                    return Err(Error::Domain(format!("{y} leaves [{lo}, {hi}]")));
                }
                out[0] = y;
            }
            Manifold::Product(fs) => {
                let (mut xo, mut vo) = (0, 0);
                for f in fs {
                    let (n, k) = (f.coord_len(), f.tangent_len());
                    f.exp_raw(&x[xo..xo + n], &v[vo..vo + k], &mut out[xo..xo + n])?;
                    xo += n;
                    vo += k;
                }
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => {
                if dot(x, v).abs() > UNIT_TOL * (1.0 + norm(v)) {
                    return Err(Error::Domain(
                        "sphere tangent not orthogonal to base".into(),
                    ));
                }
                let theta = norm(v);
                if theta >= PI {
                    return Err(Error::Domain(format!("|v| = {theta} >= pi")));
                }
                if theta == 0.0 {
                    out.copy_from_slice(x);
                } else {
                    let (s, c) = theta.sin_cos();
                    for k in 0..3 {
                        out[k] = c * x[k] + s * v[k] / theta;
                    }
                    normalize(out);
                }
                if matches!(self, Manifold::Hemisphere2) && out[2] < 0.0 {
                    return Err(Error::Domain("geodesic leaves the upper hemisphere".into()));
                }
            }
            Manifold::SO3 => {
                let half = 0.5 * norm(v);
                if half >= PI / 2.0 {
                    return Err(Error::Domain(format!("|v|_g = {half} >= pi/2")));
                }
                let dq = axis_angle_quat(v);
                let q = [x[0], x[1], x[2], x[3]];
                let r = quat_mul(&q, &dq);
                out.copy_from_slice(&r);
                normalize(out);
            }
        }
        Ok(())
    }

    /// Riemannian logarithm map, inverse of `exp_map` below the uniqueness bound.
    pub fn log_map(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
        self.check_pair(&x.coords, &y.coords)?;
        let mut out = vec![0.0; self.tangent_len()];
        self.log_raw(&x.coords, &y.coords, &mut out)?;
        Ok(TangentVector {
            base: x.clone(),
            components: out,
        })
    }

    fn log_raw(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Manifold::Circle { circumference } => {
                let c = *circumference;
                let delta = signed_circle_diff(x[0], y[0], c);
                if delta.abs() >= c / 2.0 {
                    return Err(Error::Domain("antipodal circle points".into()));
                }
                out[0] = delta;
            }
            Manifold::Interval { .. } => out[0] = y[0] - x[0],
            Manifold::Product(fs) => {
                let (mut xo, mut vo) = (0, 0);
                for f in fs {
                    let (n, k) = (f.coord_len(), f.tangent_len());
                    f.log_raw(&x[xo..xo + n], &y[xo..xo + n], &mut out[vo..vo + k])?;
                    xo += n;
                    vo += k;
                }
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => {
                let theta = unit_angle(x, y);
                if theta >= PI - 1e-12 {
                    return Err(Error::Domain("antipodal sphere points".into()));
                }
                let c = dot(x, y);
                let mut w = [y[0] - c * x[0], y[1] - c * x[1], y[2] - c * x[2]];
                let wn = norm(&w);
                if wn == 0.0 || theta == 0.0 {
                    out.fill(0.0);
                } else {
                    for k in 0..3 {
                        w[k] *= theta / wn;
                    }
                    out.copy_from_slice(&w);
                }
            }
            Manifold::SO3 => {
                let q = [x[0], x[1], x[2], x[3]];
                let mut r = [y[0], y[1], y[2], y[3]];
                if dot(&q, &r) < 0.0 {
                    r.iter_mut().for_each(|v| *v = -*v);
                }
                if dot(&q, &r) <= 1e-12 {
                    return Err(Error::Domain(
                        "rotations at quaternion distance pi/2".into(),
                    ));
                }
                let d = quat_mul(&quat_conj(&q), &r);
                let vec = [d[1], d[2], d[3]];
                let vn = norm(&vec);
                if vn == 0.0 {
                    out.fill(0.0);
                } else {
                    let half = vn.atan2(d[0]);
                    for k in 0..3 {
                        out[k] = 2.0 * half * vec[k] / vn;
                    }
                }
            }
        }
        Ok(())
    }

    /// Orthonormal (in the metric) basis of the tangent space at `x`.
    pub fn tangent_basis(&self, x: &ManifoldPoint) -> Result<Vec<TangentVector>> {
        self.validate(x)?;
        Ok(self
            .basis_raw(&x.coords)
            .into_iter()
            .map(|components| TangentVector {
                base: x.clone(),
                components,
            })
            .collect())
    }

    fn basis_raw(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Manifold::Circle { .. } | Manifold::Interval { .. } => vec![vec![1.0]],
            Manifold::Product(fs) => {
                let total = self.tangent_len();
                let mut out = Vec::new();
                let (mut xo, mut vo) = (0, 0);
                for f in fs {
                    let (n, k) = (f.coord_len(), f.tangent_len());
                    for b in f.basis_raw(&x[xo..xo + n]) {
                        let mut full = vec![0.0; total];
                        full[vo..vo + k].copy_from_slice(&b);
                        out.push(full);
                    }
                    xo += n;
                    vo += k;
                }
                out
            }
            Manifold::Sphere2 | Manifold::Hemisphere2 => {
                sphere_frame(x).iter().map(|e| e.to_vec()).collect()
            }
            Manifold::SO3 => vec![
                vec![2.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0],
                vec![0.0, 0.0, 2.0],
            ],
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    Ok(())
}

fn wrap(a: f64, c: f64) -> f64 {
    let r = a.rem_euclid(c);
    // rem_euclid can round up to exactly c
    if r >= c {
        0.0
    } else {
        r
    }
}

fn signed_circle_diff(a: f64, b: f64, c: f64) -> f64 {
    let d = (b - a).rem_euclid(c);
    if d > c / 2.0 {
        d - c
    } else {
        d
    }
}

fn circle_dist(a: f64, b: f64, c: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(c);
    d.min(c - d)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    a.iter_mut().for_each(|v| *v /= n);
}

fn normalize_tail(a: &mut [f64], k: usize) {
    let len = a.len();
    normalize(&mut a[len - k..]);
}

/// Angle between two unit vectors, accurate at both small and large angles.
fn unit_angle(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

fn gaussian_unit<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> [f64; N] {
    loop {
        let mut v = [0.0; N];
        for c in v.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|c| *c /= n);
            return v;
        }
    }
}

/// Two unit vectors completing `x` to a right-handed orthonormal frame.
fn sphere_frame(x: &[f64]) -> [[f64; 3]; 2] {
    // Pick the coordinate axis least aligned with x.
    let ax = x.iter().map(|v| v.abs()).collect::<Vec<_>>();
    let k = if ax[0] <= ax[1] && ax[0] <= ax[2] {
        0
    } else if ax[1] <= ax[2] {
        1
    } else {
        2
    };
    let mut a = [0.0; 3];
    a[k] = 1.0;
    let c = dot(&a, x);
    let mut e1 = [a[0] - c * x[0], a[1] - c * x[1], a[2] - c * x[2]];
    normalize(&mut e1);
    let e2 = cross(x, &e1);
    [e1, e2]
}

pub(crate) fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn slerp(x: &[f64], y: &[f64], t: f64, bound: f64, out: &mut [f64]) -> Result<()> {
    let theta = unit_angle(x, y);
    if theta >= bound - 1e-12 {
        return Err(Error::AmbiguousGeodesic {
            distance: theta,
            bound,
        });
    }
    if theta < 1e-12 {
        for (o, (a, b)) in out.iter_mut().zip(x.iter().zip(y)) {
            *o = (1.0 - t) * a + t * b;
        }
    } else {
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        for (o, (a, b)) in out.iter_mut().zip(x.iter().zip(y)) {
            *o = wa * a + wb * b;
        }
    }
    normalize(out);
    Ok(())
}

fn slerp4(x: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
    // On S^3 after sign alignment; the SO(3) bound is pi/2 in quaternion angle.
    slerp(x, y, t, PI / 2.0, out)
}

pub(crate) fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub(crate) fn quat_conj(q: &[f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Unit quaternion of the rotation vector `v` (axis times angle).
pub fn axis_angle_quat(v: &[f64]) -> [f64; 4] {
    let angle = norm(v);
    if angle == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * v[0] / angle, s * v[1] / angle, s * v[2] / angle]
}

/// Rotation matrix (row-major) of a unit quaternion. Quadratic in `q`, so
/// `q` and `-q` give bit-identical matrices.
pub fn quat_to_matrix(q: &[f64]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}
