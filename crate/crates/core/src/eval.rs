//! Analysis of trained models: PCA of latent codes, dimension usage,
//! projections for plotting, and interpolation error curves.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::ManifoldPoint;
use crate::imaging::RendererConfig;
use crate::nn::{Matrix, Mlp};

/// Off-diagonal Frobenius norm at which Jacobi iteration stops.
pub const JACOBI_TOL: f64 = 1e-12;

/// Fraction of the leading standard deviation above which a direction counts
/// as used.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, ordered by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Standard deviations along `components`, nonincreasing.
    pub stds: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors (as rows), unsorted.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

pub fn pca(codes: &[Vec<f64>]) -> Result<PcaResult> {
    if codes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 codes, got {}",
            codes.len()
        )));
    }
    let l = codes[0].len();
    if l == 0 || codes.iter().any(|c| c.len() != l) {
        return Err(Error::Shape("codes differ in length".into()));
    }
    let n = codes.len() as f64;
    let mut mean = vec![0.0; l];
    for c in codes {
        mean.iter_mut().zip(c).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; l]; l];
    for c in codes {
        let d: Vec<f64> = c.iter().zip(&mean).map(|(a, b)| a - b).collect();
        for i in 0..l {
            for j in i..l {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..l {
        for j in i..l {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    Ok(PcaResult {
        mean,
        components: order.iter().map(|&i| vecs[i].clone()).collect(),
        stds: order.iter().map(|&i| vals[i].max(0.0).sqrt()).collect(),
    })
}

impl PcaResult {
    /// Coordinates of the centered code along the selected components.
    pub fn project(&self, code: &[f64], dims: &[usize]) -> Result<Vec<f64>> {
        let l = self.mean.len();
        if code.len() != l {
            return Err(Error::Shape(format!(
                "code of length {} for {l} dims",
                code.len()
            )));
        }
        dims.iter()
            .map(|&k| {
                let c = self
                    .components
                    .get(k)
                    .ok_or_else(|| Error::InvalidArgument(format!("component {k} of only {l}")))?;
                Ok(code
                    .iter()
                    .zip(&self.mean)
                    .zip(c)
                    .map(|((x, m), e)| (x - m) * e)
                    .sum())
            })
            .collect()
    }

    /// Covariance rebuilt from the spectrum.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let l = self.mean.len();
        let mut cov = vec![vec![0.0; l]; l];
        for (e, s) in self.components.iter().zip(&self.stds) {
            for i in 0..l {
                for j in 0..l {
                    cov[i][j] += s * s * e[i] * e[j];
                }
            }
        }
        cov
    }
}

/// Number of standard deviations at least `tau` times the largest.
pub fn dim_usage(stds: &[f64], tau: f64) -> usize {
    match stds.first() {
        Some(&top) => stds.iter().filter(|&&s| s >= tau * top).count(),
        None => 0,
    }
}

pub fn write_pca_stds<W: Write>(w: &mut W, pca: &PcaResult) -> Result<()> {
    writeln!(w, "component,std")?;
    for (i, s) in pca.stds.iter().enumerate() {
        writeln!(w, "{},{:.17e}", i + 1, s)?;
    }
    Ok(())
}

/// Writes `id,c_a,c_b,c_c,<label columns>` for the centered codes projected
/// onto three components.
pub fn export_projection<W: Write>(
    w: &mut W,
    codes: &[Vec<f64>],
    pca: &PcaResult,
    dims: [usize; 3],
    label_names: &[&str],
    labels: &[Vec<String>],
) -> Result<()> {
    if labels.len() != codes.len() {
        return Err(Error::Shape(format!(
            "{} label rows for {} codes",
            labels.len(),
            codes.len()
        )));
    }
    write!(w, "id,c_a,c_b,c_c")?;
    for n in label_names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, (c, lab)) in codes.iter().zip(labels).enumerate() {
        let p = pca.project(c, &dims)?;
        write!(w, "{i},{:.17e},{:.17e},{:.17e}", p[0], p[1], p[2])?;
        for v in lab {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Radial spread of a 3D point cloud around a fitted center.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSpread {
    pub center: [f64; 3],
    pub median_radius: f64,
    /// Largest of `r / median` and `median / r` over the points.
    pub max_ratio: f64,
}

fn radial_spread(points: &[[f64; 3]], center: [f64; 3]) -> Result<RadialSpread> {
    let mut r: Vec<f64> = points
        .iter()
        .map(|p| {
            ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2))
                .sqrt()
        })
        .collect();
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    if !(median > 0.0) {
        return Err(Error::DegenerateGeometry("all points at the center".into()));
    }
    r.iter_mut()
        .for_each(|v| *v = (*v / median).max(median / *v));
    Ok(RadialSpread {
        center,
        median_radius: median,
        max_ratio: r.iter().copied().fold(0.0, f64::max),
    })
}

/// Spread around the centroid of the points.
pub fn centroid_spread(points: &[[f64; 3]]) -> Result<RadialSpread> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        (0..3).for_each(|k| c[k] += p[k] / n);
    }
    radial_spread(points, c)
}

/// Spread around the center of the least-squares sphere
/// `|p|^2 = 2 c.p + k`, which stays at the true center for point clouds
/// covering only part of a sphere.
pub fn sphere_fit_spread(points: &[[f64; 3]]) -> Result<RadialSpread> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument("need at least 4 points".into()));
    }
    // Normal equations of the linear fit in (c, k).
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for p in points {
        let row = [2.0 * p[0], 2.0 * p[1], 2.0 * p[2], 1.0];
        let rhs = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        for i in 0..4 {
            atb[i] += row[i] * rhs;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let sol = solve4(ata, atb)
        .ok_or_else(|| Error::DegenerateGeometry("points do not determine a sphere".into()))?;
    radial_spread(points, [sol[0], sol[1], sol[2]])
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Interpolation errors at one grid value, aggregated over pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpRow {
    pub t: f64,
    /// `sqrt(max(0, signed_mean_sq))`.
    pub err: f64,
    /// Mean of `err_i^2 - err_b^2`.
    pub signed_mean_sq: f64,
    pub err_i_mean: f64,
    pub err_b_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpCurve {
    pub rows: Vec<InterpRow>,
}

/// `n` equispaced values from 0 to 1 inclusive.
pub fn t_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn images_matrix(cfg: &RendererConfig, pts: &[ManifoldPoint]) -> Result<Matrix> {
    let n = cfg.image_len();
    let mut data = Vec::with_capacity(pts.len() * n);
    for p in pts {
        data.extend_from_slice(&cfg.render(p)?.pixels);
    }
    Matrix::from_vec(pts.len(), n, data)
}

fn row_dist(a: &Matrix, b: &Matrix, r: usize) -> f64 {
    a.row(r)
        .iter()
        .zip(b.row(r))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// For every pair and `t`: `err_i` compares the image of the geodesic
/// average with the decoded linear latent interpolation, `err_b` with the
/// reconstruction of that image itself.
pub fn interp_errors(
    encoder: &Mlp,
    decoder: &Mlp,
    renderer: &RendererConfig,
    pairs: &[(ManifoldPoint, ManifoldPoint)],
    ts: &[f64],
) -> Result<InterpCurve> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no test pairs".into()));
    }
    if encoder.spec.input_width() != renderer.image_len() {
        return Err(Error::Shape(format!(
            "encoder expects {} pixels, renderer makes {}",
            encoder.spec.input_width(),
            renderer.image_len()
        )));
    }
    let m = renderer.manifold();
    let xs: Vec<ManifoldPoint> = pairs.iter().map(|p| p.0.clone()).collect();
    let ys: Vec<ManifoldPoint> = pairs.iter().map(|p| p.1.clone()).collect();
    let cx = encoder.forward_values(&images_matrix(renderer, &xs)?)?;
    let cy = encoder.forward_values(&images_matrix(renderer, &ys)?)?;
    let np = pairs.len() as f64;
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
        }
        let avs = pairs
            .iter()
            .map(|(x, y)| {
                if t == 1.0 {
                    Ok(y.clone())
                } else {
                    m.average(x, y, t)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let target = images_matrix(renderer, &avs)?;
        let mut lin = cx.clone();
        for (o, (a, b)) in lin.data.iter_mut().zip(cx.data.iter().zip(&cy.data)) {
            *o = (1.0 - t) * a + t * b;
        }
        if t == 1.0 {
            lin = cy.clone();
        }
        let dec_lin = decoder.forward_values(&lin)?;
        let dec_base = decoder.forward_values(&encoder.forward_values(&target)?)?;
        let (mut si, mut sb, mut signed) = (0.0, 0.0, 0.0);
        for r in 0..pairs.len() {
            let ei = row_dist(&target, &dec_lin, r);
            let eb = row_dist(&target, &dec_base, r);
            si += ei;
            sb += eb;
            signed += ei * ei - eb * eb;
        }
        let signed = signed / np;
        rows.push(InterpRow {
            t,
            err: signed.max(0.0).sqrt(),
            signed_mean_sq: signed,
            err_i_mean: si / np,
            err_b_mean: sb / np,
        });
    }
    Ok(InterpCurve { rows })
}

impl InterpCurve {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,err,signed_mean_sq,err_i_mean,err_b_mean")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.t, r.err, r.signed_mean_sq, r.err_i_mean, r.err_b_mean
            )?;
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Option<&InterpRow> {
        self.rows.iter().find(|r| (r.t - t).abs() < 1e-12)
    }
}
