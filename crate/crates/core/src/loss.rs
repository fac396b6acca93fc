//! Encoder regularizer (isometry plus flatness), reconstruction loss and
//! their combination, built on the autodiff tape.

use crate::error::{Error, Result};
use crate::imaging::Triplet;
use crate::nn::{BoundMlp, Matrix, Tape, Var};

/// Codes with `|delta1|` below this are treated as a collapsed encoder.
pub const COLLAPSE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Encoder and decoder minimize `E + kappa * R` together.
    Joint,
    /// Encoder minimizes `E` first, then the decoder fits `R` with the
    /// encoder frozen.
    EncoderFirst,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "encoder_first" => Ok(Self::EncoderFirst),
            _ => Err(Error::InvalidArgument(format!(
                "unknown training mode {s:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::EncoderFirst => "encoder_first",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Locality radius of the training pairs.
    pub eps: f64,
    /// Flatness weight.
    pub lambda: f64,
    /// Reconstruction weight.
    pub kappa: f64,
    pub mode: TrainMode,
}

impl LossConfig {
    pub fn new(eps: f64, lambda: f64, kappa: f64, mode: TrainMode) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "flatness weight must be finite and >= 0, got {lambda}"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reconstruction weight must be finite and > 0, got {kappa}"
            )));
        }
        Ok(Self {
            eps,
            lambda,
            kappa,
            mode,
        })
    }
}

/// `|v|^2 + |v|^-2 - 2`, minimal (zero) at unit length.
pub fn gamma(v: &[f64]) -> Result<f64> {
    let n2: f64 = v.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return Err(Error::DivisionByZero("gamma of the zero vector".into()));
    }
    Ok(n2 + 1.0 / n2 - 2.0)
}

fn check_dist(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "distance must be positive, got {d}"
        )))
    }
}

/// First difference quotient `(phi_y - phi_x) / d`.
pub fn delta1(phi_x: &[f64], phi_y: &[f64], d: f64) -> Result<Vec<f64>> {
    check_dist(d)?;
    Ok(phi_x.iter().zip(phi_y).map(|(a, b)| (b - a) / d).collect())
}

/// Second difference quotient `8 ((phi_x + phi_y)/2 - phi_av) / d^2`.
pub fn delta2(phi_x: &[f64], phi_y: &[f64], phi_av: &[f64], d: f64) -> Result<Vec<f64>> {
    check_dist(d)?;
    let s = 8.0 / (d * d);
    Ok(phi_x
        .iter()
        .zip(phi_y)
        .zip(phi_av)
        .map(|((a, b), m)| s * (0.5 * (a + b) - m))
        .collect())
}

/// Images of a batch of triplets stacked row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
    pub av: Matrix,
    pub dist: Vec<f64>,
}

impl Batch {
    pub fn from_triplets(triplets: &[&Triplet]) -> Result<Self> {
        let first = triplets
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let n = first.img_x.len();
        let b = triplets.len();
        let mut x = Vec::with_capacity(b * n);
        let mut y = Vec::with_capacity(b * n);
        let mut av = Vec::with_capacity(b * n);
        let mut dist = Vec::with_capacity(b);
        for t in triplets {
            if t.img_x.len() != n || t.img_y.len() != n || t.img_av.len() != n {
                return Err(Error::Shape("triplet images differ in size".into()));
            }
            check_dist(t.dist)?;
            x.extend_from_slice(&t.img_x.pixels);
            y.extend_from_slice(&t.img_y.pixels);
            av.extend_from_slice(&t.img_av.pixels);
            dist.push(t.dist);
        }
        Ok(Self {
            x: Matrix::from_vec(b, n, x)?,
            y: Matrix::from_vec(b, n, y)?,
            av: Matrix::from_vec(b, n, av)?,
            dist,
        })
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let b = self.len();
        let n = self.x.cols;
        for m in [&self.x, &self.y, &self.av] {
            if m.rows != b || m.cols != n {
                return Err(Error::Shape(format!(
                    "batch matrix {:?} for {b} pairs of width {n}",
                    m.shape()
                )));
            }
        }
        self.dist.iter().try_for_each(|&d| check_dist(d))
    }
}

/// Loss node together with the batch means of its parts.
#[derive(Clone, Copy, Debug)]
pub struct EncoderTerms {
    pub loss: Var,
    /// Mean of `gamma(delta1)`.
    pub isometry: f64,
    /// Mean of `|delta2|^2`, before weighting.
    pub flatness: f64,
}

/// Encoder loss from codes already on the tape (one row per pair).
pub fn encoder_loss_on_codes(
    tape: &mut Tape,
    cx: Var,
    cy: Var,
    cav: Var,
    dist: &[f64],
    lambda: f64,
) -> Result<EncoderTerms> {
    if dist.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    dist.iter().try_for_each(|&d| check_dist(d))?;
    let inv_d: Vec<f64> = dist.iter().map(|d| 1.0 / d).collect();
    let inv_d2: Vec<f64> = dist.iter().map(|d| 8.0 / (d * d)).collect();

    let diff = tape.sub(cy, cx)?;
    let d1 = tape.row_scale(diff, inv_d)?;
    let d1_sq = tape.square(d1);
    let n1 = tape.row_sum(d1_sq);
    let min_n1 = tape
        .value(n1)
        .data
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_n1.sqrt() >= COLLAPSE_THRESHOLD) {
        return Err(Error::CollapsedEncoder {
            norm: min_n1.sqrt(),
        });
    }
    let inv_n1 = tape.recip(n1)?;
    let g = tape.add(n1, inv_n1)?;
    let g = tape.add_scalar(g, -2.0);

    let sum_xy = tape.add(cx, cy)?;
    let mid = tape.scale(sum_xy, 0.5);
    let off = tape.sub(mid, cav)?;
    let d2 = tape.row_scale(off, inv_d2)?;
    let d2_sq = tape.square(d2);
    let f = tape.row_sum(d2_sq);

    let b = dist.len() as f64;
    let isometry = tape.value(g).data.iter().sum::<f64>() / b;
    let flatness = tape.value(f).data.iter().sum::<f64>() / b;

    let wf = tape.scale(f, lambda);
    let per_pair = tape.add(g, wf)?;
    let loss = tape.mean(per_pair)?;
    Ok(EncoderTerms {
        loss,
        isometry,
        flatness,
    })
}

/// Codes of `[x; y; av]` from one stacked forward pass.
struct Codes {
    x: Var,
    y: Var,
    av: Var,
    xy: Var,
}

fn encode(tape: &mut Tape, enc: &BoundMlp, batch: &Batch) -> Result<Codes> {
    batch.check()?;
    let b = batch.len();
    let xi = tape.constant(batch.x.clone());
    let yi = tape.constant(batch.y.clone());
    let ai = tape.constant(batch.av.clone());
    let stacked = tape.concat_rows(&[xi, yi, ai])?;
    let codes = enc.forward(tape, stacked)?;
    Ok(Codes {
        x: tape.slice_rows(codes, 0, b)?,
        y: tape.slice_rows(codes, b, b)?,
        av: tape.slice_rows(codes, 2 * b, b)?,
        xy: tape.slice_rows(codes, 0, 2 * b)?,
    })
}

pub fn encoder_loss(
    tape: &mut Tape,
    enc: &BoundMlp,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<EncoderTerms> {
    let c = encode(tape, enc, batch)?;
    encoder_loss_on_codes(tape, c.x, c.y, c.av, &batch.dist, cfg.lambda)
}

/// Mean over pairs of `|dec(enc(x)) - x|^2 + |dec(enc(y)) - y|^2`.
fn recon_on_codes(tape: &mut Tape, dec: &BoundMlp, codes_xy: Var, batch: &Batch) -> Result<Var> {
    let out = dec.forward(tape, codes_xy)?;
    let xi = tape.constant(batch.x.clone());
    let yi = tape.constant(batch.y.clone());
    let target = tape.concat_rows(&[xi, yi])?;
    let err = tape.sub(out, target)?;
    let sq = tape.square(err);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / batch.len() as f64))
}

pub fn recon_loss(tape: &mut Tape, enc: &BoundMlp, dec: &BoundMlp, batch: &Batch) -> Result<Var> {
    batch.check()?;
    let xi = tape.constant(batch.x.clone());
    let yi = tape.constant(batch.y.clone());
    let stacked = tape.concat_rows(&[xi, yi])?;
    let codes = enc.forward(tape, stacked)?;
    recon_on_codes(tape, dec, codes, batch)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Encoder loss node alone, for encoder-only phases.
    pub encoder: Var,
    /// Unweighted reconstruction node alone, for decoder-only phases.
    pub recon_node: Var,
    pub isometry: f64,
    pub flatness: f64,
    pub recon: f64,
}

/// `E + kappa * R` from a single encoder pass. How the encoder was bound
/// (trainable or frozen) decides which parameters receive gradients.
pub fn total_loss(
    tape: &mut Tape,
    enc: &BoundMlp,
    dec: &BoundMlp,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let c = encode(tape, enc, batch)?;
    let e = encoder_loss_on_codes(tape, c.x, c.y, c.av, &batch.dist, cfg.lambda)?;
    let r = recon_on_codes(tape, dec, c.xy, batch)?;
    let recon = tape.scalar_value(r);
    let kr = tape.scale(r, cfg.kappa);
    let total = tape.add(e.loss, kr)?;
    Ok(LossTerms {
        total,
        encoder: e.loss,
        recon_node: r,
        isometry: e.isometry,
        flatness: e.flatness,
        recon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{DatasetKind, RendererConfig};
    use crate::nn::{Mlp, MlpSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_values() {
        assert!(gamma(&[0.6, 0.8]).unwrap().abs() < 1e-15);
        assert!((gamma(&[2.0, 0.0]).unwrap() - 2.25).abs() < 1e-15);
        assert!((gamma(&[0.0, 0.5]).unwrap() - 2.25).abs() < 1e-15);
        assert!(matches!(gamma(&[0.0, 0.0]), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn difference_quotients() {
        assert_eq!(
            delta1(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap(),
            vec![0.6, 0.8]
        );
        assert_eq!(
            delta1(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(),
            vec![0.0, 0.0]
        );
        let d2 = delta2(&[0.0, 0.0], &[2.0, 0.0], &[0.9, 0.1], 2.0).unwrap();
        assert!((d2[0] - 0.2).abs() < 1e-14 && (d2[1] + 0.2).abs() < 1e-14);
        assert_eq!(delta2(&[1.0], &[3.0], &[2.0], 0.5).unwrap(), vec![0.0]);
        assert!(delta1(&[0.0], &[1.0], 0.0).is_err());
        assert!(delta2(&[0.0], &[1.0], &[0.5], -1.0).is_err());
    }

    fn flat_batch(count: usize) -> Batch {
        let cfg = RendererConfig::new(DatasetKind::FlatSquare, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts: Vec<Triplet> = (0..count)
            .map(|_| cfg.make_triplet(0.25, &mut rng).unwrap())
            .collect();
        Batch::from_triplets(&ts.iter().collect::<Vec<_>>()).unwrap()
    }

    fn scaled_embedding(scale: f64, latent: usize) -> Mlp {
        let mut enc = Mlp::zeros(MlpSpec::new(vec![2, latent]).unwrap());
        enc.layers[0].weight.data[0] = scale;
        enc.layers[0].weight.data[latent + 1] = scale;
        enc
    }

    #[test]
    fn flat_square_identity_has_zero_loss() {
        let batch = flat_batch(64);
        let cfg = LossConfig::new(0.25, 1.0, 1.0, TrainMode::Joint).unwrap();
        let mut tape = Tape::new();
        let enc = scaled_embedding(1.0, 4).bind(&mut tape, true);
        let e = encoder_loss(&mut tape, &enc, &batch, &cfg).unwrap();
        assert!(tape.scalar_value(e.loss).abs() < 1e-12);
    }

    #[test]
    fn flat_square_doubled_embedding() {
        let batch = flat_batch(64);
        let cfg = LossConfig::new(0.25, 0.0, 1.0, TrainMode::Joint).unwrap();
        let mut tape = Tape::new();
        let enc = scaled_embedding(2.0, 3).bind(&mut tape, true);
        let e = encoder_loss(&mut tape, &enc, &batch, &cfg).unwrap();
        assert!((tape.scalar_value(e.loss) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn collapsed_encoder_is_reported() {
        let batch = flat_batch(4);
        let cfg = LossConfig::new(0.25, 1.0, 1.0, TrainMode::Joint).unwrap();
        let mut tape = Tape::new();
        let enc = scaled_embedding(0.0, 2).bind(&mut tape, true);
        assert!(matches!(
            encoder_loss(&mut tape, &enc, &batch, &cfg),
            Err(Error::CollapsedEncoder { .. })
        ));
    }

    #[test]
    fn empty_batch_and_bad_config_rejected() {
        assert!(Batch::from_triplets(&[]).is_err());
        assert!(LossConfig::new(0.0, 1.0, 1.0, TrainMode::Joint).is_err());
        assert!(LossConfig::new(1.0, -1.0, 1.0, TrainMode::Joint).is_err());
        assert!(LossConfig::new(1.0, 1.0, 0.0, TrainMode::Joint).is_err());
    }

    #[test]
    fn identity_autoencoder_has_zero_recon() {
        let batch = flat_batch(16);
        let mut tape = Tape::new();
        let enc = scaled_embedding(1.0, 2).bind(&mut tape, true);
        let dec = scaled_embedding(1.0, 2).bind(&mut tape, true);
        let r = recon_loss(&mut tape, &enc, &dec, &batch).unwrap();
        assert!(tape.scalar_value(r).abs() < 1e-14);
    }

    #[test]
    fn zero_decoder_recon_is_mean_squared_norm() {
        let batch = flat_batch(16);
        let mut tape = Tape::new();
        let enc = scaled_embedding(1.0, 2).bind(&mut tape, true);
        let dec = Mlp::zeros(MlpSpec::new(vec![2, 2]).unwrap()).bind(&mut tape, true);
        let r = recon_loss(&mut tape, &enc, &dec, &batch).unwrap();
        let expected = (batch.x.data.iter().map(|v| v * v).sum::<f64>()
            + batch.y.data.iter().map(|v| v * v).sum::<f64>())
            / batch.len() as f64;
        assert!((tape.scalar_value(r) - expected).abs() < 1e-12);
    }
}
