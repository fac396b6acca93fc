//! Run configuration and the `gen`, `train`, `verify` and `eval` commands.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::continuum::{
    consistency_rate, AnalyticEmbedding, CircleMap, Cylinder, FlatSquare, RateOutcome, RateReport,
    UnitSphere,
};
use crate::error::{Error, Result};
use crate::eval::{
    export_projection, interp_errors, pca, t_grid, write_pca_stds, InterpCurve, PcaResult,
};
use crate::geometry::ManifoldPoint;
use crate::imaging::{
    generate_triplets, quantize, record_rng, write_dataset, DatasetKind, Image, RendererConfig,
    Triplet,
};
use crate::loss::{total_loss, Batch, LossConfig, TrainMode};
use crate::nn::{Adam, Checkpoint, Matrix, Mlp, MlpSpec, Tape};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "LBLD_SEED";

// Stream salts, so training batches, initialization and evaluation samples
// never share random numbers.
const TRAIN_SALT: u64 = 0x7472_6169_6e00_0001;
const INIT_SALT: u64 = 0x696e_6974_0000_0002;
const EVAL_SALT: u64 = 0x6576_616c_0000_0003;

pub const MODEL_FILE: &str = "model.lblm";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetKind,
    pub resolution: usize,
    pub eps: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub latent_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub mode: TrainMode,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub quantize: bool,
    pub workers: usize,
    /// Training records; on-the-fly generation when absent.
    pub data_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        Self {
            seed: 0,
            dataset,
            resolution: 16,
            eps: dataset.default_epsilon(),
            lambda: 1.0,
            kappa: 1.0,
            latent_dim: dataset.default_latent_dim(),
            hidden: vec![256, 64],
            mode: TrainMode::Joint,
            steps: 20_000,
            batch: 128,
            lr: 1e-4,
            quantize: false,
            workers: 1,
            data_path: None,
        }
    }

    pub fn renderer(&self) -> Result<RendererConfig> {
        RendererConfig::new(self.dataset, self.resolution)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.eps, self.lambda, self.kappa, self.mode)
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![self.renderer()?.image_len()];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        MlpSpec::new(w)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.renderer()?;
        self.loss_config()?;
        self.encoder_spec()?;
        if self.eps > r.manifold().uniqueness_bound() {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} above the uniqueness bound {}",
                self.eps,
                r.manifold().uniqueness_bound()
            )));
        }
        if self.batch == 0 || self.workers == 0 {
            return Err(Error::InvalidArgument(
                "batch and workers must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }

    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dataset = {}", self.dataset.name());
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "eps = {:?}", self.eps);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "kappa = {:?}", self.kappa);
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "quantize = {}", self.quantize);
        let _ = writeln!(s, "workers = {}", self.workers);
        if let Some(p) = &self.data_path {
            let _ = writeln!(s, "data_path = {}", p.display());
        }
        s
    }

    /// Parses `key = value` lines; `#` starts a comment. The dataset key,
    /// when present, sets the dataset defaults before the other keys apply.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected key = value", no + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let dataset = match pairs.iter().find(|(k, _)| k == "dataset") {
            Some((_, v)) => DatasetKind::parse(v)?,
            None => DatasetKind::G,
        };
        let mut cfg = Self::for_dataset(dataset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value '{v}' for {key}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "resolution" => self.resolution = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|h| num(key, h.trim()))
                    .collect::<Result<_>>()?
            }
            "mode" => self.mode = TrainMode::parse(value)?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "quantize" => self.quantize = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "data_path" => self.data_path = Some(PathBuf::from(value)),
            _ => return Err(Error::Format(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `LBLD_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v} is not a u64")))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Writes `count` triplets to `out`, optionally binarized.
#[allow(clippy::too_many_arguments)]
pub fn cmd_gen(
    dataset: DatasetKind,
    resolution: usize,
    eps: f64,
    count: usize,
    seed: u64,
    quantize_images: bool,
    workers: usize,
    out: &Path,
) -> Result<()> {
    let renderer = RendererConfig::new(dataset, resolution)?;
    let m = renderer.manifold();
    if !(eps > 0.0 && eps <= m.uniqueness_bound()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {eps} outside (0, {}]",
            m.uniqueness_bound()
        )));
    }
    let mut ts = generate_triplets(&renderer, eps, count, seed, workers)?;
    if quantize_images {
        ts.iter_mut().for_each(quantize_triplet);
    }
    write_dataset(out, &ts)
}

fn quantize_triplet(t: &mut Triplet) {
    t.img_x = quantize(&t.img_x);
    t.img_y = quantize(&t.img_y);
    t.img_av = quantize(&t.img_av);
}

/// Losses of one optimization step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub isometry: f64,
    pub flatness: f64,
    pub recon: f64,
}

pub fn write_log<W: Write>(w: &mut W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "step,isometry_loss,flatness_loss,reconstruction_loss")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.17e},{:.17e},{:.17e}",
            r.step, r.isometry, r.flatness, r.recon
        )?;
    }
    Ok(())
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Why training stopped early; the checkpoint then holds the last
    /// parameters before the failing step.
    pub aborted: Option<String>,
}

enum Source<'a> {
    Fly {
        renderer: RendererConfig,
        seed: u64,
    },
    Records {
        data: &'a [Triplet],
        order: Vec<usize>,
        rng: ChaCha8Rng,
        pos: usize,
    },
}

impl Source<'_> {
    fn next_batch(&mut self, cfg: &RunConfig, step: usize) -> Result<Batch> {
        match self {
            Source::Fly { renderer, seed } => {
                let base = (step * cfg.batch) as u64;
                let make = |i: usize| -> Result<Triplet> {
                    let mut rng = record_rng(*seed, base + i as u64);
                    let mut t = renderer.make_triplet(cfg.eps, &mut rng)?;
                    if cfg.quantize {
                        quantize_triplet(&mut t);
                    }
                    Ok(t)
                };
                let ts: Vec<Triplet> = if cfg.workers <= 1 {
                    (0..cfg.batch).map(make).collect::<Result<_>>()?
                } else {
                    (0..cfg.batch)
                        .into_par_iter()
                        .map(make)
                        .collect::<Result<_>>()?
                };
                Batch::from_triplets(&ts.iter().collect::<Vec<_>>())
            }
            Source::Records {
                data,
                order,
                rng,
                pos,
            } => {
                let mut picked = Vec::with_capacity(cfg.batch);
                while picked.len() < cfg.batch {
                    if *pos == order.len() {
                        order.shuffle(rng);
                        *pos = 0;
                    }
                    picked.push(&data[order[*pos]]);
                    *pos += 1;
                }
                Batch::from_triplets(&picked)
            }
        }
    }
}

pub fn init_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let spec = cfg.encoder_spec()?;
    let mut rng = record_rng(cfg.seed ^ INIT_SALT, 0);
    let encoder = Mlp::kaiming(spec.clone(), &mut rng);
    let decoder = Mlp::kaiming(spec.mirrored(), &mut rng);
    Ok(Checkpoint {
        encoder_opt: Adam::for_mlp(&encoder, cfg.lr),
        decoder_opt: Adam::for_mlp(&decoder, cfg.lr),
        encoder,
        decoder,
    })
}

/// Adam on the configured objective. Joint mode minimizes `E + kappa R`
/// every step; encoder-first mode spends the first half of the steps on the
/// encoder loss and the second half on the reconstruction loss with the
/// encoder frozen.
pub fn train(cfg: &RunConfig, data: Option<&[Triplet]>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let loss_cfg = cfg.loss_config()?;
    let renderer = cfg.renderer()?;
    let mut source = match data {
        Some(d) => {
            if d.is_empty() {
                return Err(Error::InvalidArgument("empty training data".into()));
            }
            if d[0].img_x.len() != renderer.image_len() {
                return Err(Error::Shape(format!(
                    "records have {} values per image, configuration expects {}",
                    d[0].img_x.len(),
                    renderer.image_len()
                )));
            }
            let mut rng = record_rng(cfg.seed ^ TRAIN_SALT, u64::MAX);
            let mut order: Vec<usize> = (0..d.len()).collect();
            order.shuffle(&mut rng);
            Source::Records {
                data: d,
                order,
                rng,
                pos: 0,
            }
        }
        None => Source::Fly {
            renderer,
            seed: cfg.seed ^ TRAIN_SALT,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut ck = init_checkpoint(cfg)?;
    let mut log = Vec::with_capacity(cfg.steps);
    let switch = match cfg.mode {
        TrainMode::Joint => usize::MAX,
        TrainMode::EncoderFirst => cfg.steps / 2,
    };
    for step in 0..cfg.steps {
        let batch = pool.install(|| source.next_batch(cfg, step))?;
        let encoder_phase = step < switch;
        let decoder_phase = step >= switch;
        let mut tape = Tape::new();
        let be = ck.encoder.bind(&mut tape, !decoder_phase);
        let bd = ck
            .decoder
            .bind(&mut tape, !encoder_phase || cfg.mode == TrainMode::Joint);
        let terms = match total_loss(&mut tape, &be, &bd, &batch, &loss_cfg) {
            Ok(t) => t,
            Err(e @ (Error::CollapsedEncoder { .. } | Error::NonFinite(_))) => {
                return Ok(aborted(ck, log, step, e.to_string()));
            }
            Err(e) => return Err(e),
        };
        let row = LogRow {
            step,
            isometry: terms.isometry,
            flatness: terms.flatness,
            recon: terms.recon,
        };
        if !(row.isometry.is_finite() && row.flatness.is_finite() && row.recon.is_finite()) {
            return Ok(aborted(ck, log, step, "non-finite loss".into()));
        }
        log.push(row);
        let root = match cfg.mode {
            TrainMode::Joint => terms.total,
            TrainMode::EncoderFirst if encoder_phase => terms.encoder,
            TrainMode::EncoderFirst => terms.recon_node,
        };
        let grads = tape.backward(root)?;
        let ge = be.grads(&tape, &grads);
        let gd = bd.grads(&tape, &grads);
        let before = ck.clone();
        let mut result = Ok(());
        if !decoder_phase {
            result = ck.encoder_opt.step_mlp(&mut ck.encoder, &ge);
        }
        if result.is_ok() && (!encoder_phase || cfg.mode == TrainMode::Joint) {
            result = ck.decoder_opt.step_mlp(&mut ck.decoder, &gd);
        }
        if let Err(e) = result {
            return Ok(aborted(before, log, step, e.to_string()));
        }
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        aborted: None,
    })
}

fn aborted(ck: Checkpoint, log: Vec<LogRow>, step: usize, why: String) -> TrainOutcome {
    TrainOutcome {
        checkpoint: ck,
        log,
        aborted: Some(format!("step {step}: {why}")),
    }
}

/// Trains and writes the checkpoint, log and configuration echo into
/// `out_dir`. An aborted run still writes its last good checkpoint and then
/// reports the failure.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = match &cfg.data_path {
        Some(p) => Some(crate::imaging::read_dataset(p)?),
        None => None,
    };
    let outcome = train(cfg, data.as_deref())?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;
    outcome.checkpoint.save(&out_dir.join(MODEL_FILE))?;
    let mut w = BufWriter::new(File::create(out_dir.join(LOG_FILE))?);
    write_log(&mut w, &outcome.log)?;
    w.flush()?;
    if let Some(why) = &outcome.aborted {
        return Err(Error::NonFinite(format!("training aborted at {why}")));
    }
    Ok(outcome)
}

/// Exit status of `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl VerifyStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            VerifyStatus::Pass => 0,
            VerifyStatus::Fail => 2,
            VerifyStatus::Inconclusive => 3,
        }
    }
}

/// Minimal convergence slope accepted by `verify`.
pub const SLOPE_THRESHOLD: f64 = 0.9;

pub fn embedding_for_case(case: &str, rho: f64) -> Result<Box<dyn AnalyticEmbedding>> {
    match case {
        "flat-square" | "flat_square" => Ok(Box::new(FlatSquare)),
        "circle" => {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidArgument(format!("radius {rho}")));
            }
            Ok(Box::new(CircleMap { rho }))
        }
        "sphere" => Ok(Box::new(UnitSphere)),
        "cylinder" => Ok(Box::new(Cylinder { height: 1.0 })),
        other => Err(Error::InvalidArgument(format!("unknown case '{other}'"))),
    }
}

pub fn verify_status(report: &RateReport) -> VerifyStatus {
    match report.outcome {
        RateOutcome::Exact => VerifyStatus::Pass,
        RateOutcome::Inconclusive => VerifyStatus::Inconclusive,
        RateOutcome::Slope { slope, .. } if slope >= SLOPE_THRESHOLD => VerifyStatus::Pass,
        RateOutcome::Slope { .. } => VerifyStatus::Fail,
    }
}

pub fn cmd_verify(
    case: &str,
    rho: f64,
    lambda: f64,
    eps_list: &[f64],
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<(RateReport, VerifyStatus)> {
    let emb = embedding_for_case(case, rho)?;
    let report = consistency_rate(emb.as_ref(), eps_list, samples, lambda, seed, workers)?;
    let status = verify_status(&report);
    Ok((report, status))
}

/// Options of `eval` beyond the run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Number of codes for PCA and the projection.
    pub samples: usize,
    /// Number of test pairs for the interpolation curve.
    pub pairs: usize,
    /// Zero-based principal components for the projection.
    pub dims: [usize; 3],
    /// Number of reconstructions written as images.
    pub recon_images: usize,
    /// Take the codes from the `img_x` of these records instead of fresh
    /// samples.
    pub data_path: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            pairs: 256,
            dims: [0, 1, 2],
            recon_images: 8,
            data_path: None,
        }
    }
}

pub struct EvalOutcome {
    pub pca: PcaResult,
    pub codes: Vec<Vec<f64>>,
    pub points: Vec<ManifoldPoint>,
    pub interp: InterpCurve,
}

fn label_names(kind: DatasetKind) -> Vec<&'static str> {
    match kind {
        DatasetKind::G => vec!["angle", "scale", "tx", "ty"],
        DatasetKind::GRotation => vec!["angle"],
        DatasetKind::S => vec!["elevation", "azimuth"],
        DatasetKind::R => vec!["axis", "angle"],
        DatasetKind::FlatSquare => vec!["u", "v"],
    }
}

/// Per-point labels for coloring projections. Rotations are keyed by the
/// coordinate axis closest to their rotation axis.
fn labels_for(kind: DatasetKind, p: &ManifoldPoint) -> Vec<String> {
    let c = &p.coords;
    match kind {
        DatasetKind::R => {
            let s = if c[0] < 0.0 { -1.0 } else { 1.0 };
            let (w, v) = (s * c[0], [s * c[1], s * c[2], s * c[3]]);
            let angle = 2.0 * w.clamp(-1.0, 1.0).acos();
            let k = (0..3)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
                .unwrap();
            vec![["x", "y", "z"][k].to_string(), format!("{angle:.6}")]
        }
        DatasetKind::S => vec![
            format!("{:.6}", c[2].clamp(-1.0, 1.0).asin()),
            format!("{:.6}", c[1].atan2(c[0])),
        ],
        _ => c.iter().map(|v| format!("{v:.6}")).collect(),
    }
}

fn encode_images(enc: &Mlp, images: &[Image]) -> Result<Vec<Vec<f64>>> {
    let n = enc.spec.input_width();
    let mut data = Vec::with_capacity(images.len() * n);
    for img in images {
        if img.len() != n {
            return Err(Error::Shape(format!(
                "image has {} values, encoder expects {n}",
                img.len()
            )));
        }
        data.extend_from_slice(&img.pixels);
    }
    let codes = enc.forward_values(&Matrix::from_vec(images.len(), n, data)?)?;
    Ok((0..codes.rows).map(|r| codes.row(r).to_vec()).collect())
}

/// Samples points with their rendered images (quantized when configured).
fn sample_points(
    cfg: &RunConfig,
    renderer: &RendererConfig,
    count: usize,
    stream: u64,
) -> Result<(Vec<ManifoldPoint>, Vec<Image>)> {
    let m = renderer.manifold();
    let mut points = Vec::with_capacity(count);
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let p = m.sample_uniform(&mut record_rng(cfg.seed ^ EVAL_SALT, stream + i as u64));
        let img = renderer.render(&p)?;
        images.push(if cfg.quantize { quantize(&img) } else { img });
        points.push(p);
    }
    Ok((points, images))
}

/// Computes codes, PCA and the interpolation curve for a checkpoint.
pub fn evaluate(cfg: &RunConfig, ck: &Checkpoint, opts: &EvalOptions) -> Result<EvalOutcome> {
    let renderer = cfg.renderer()?;
    if ck.encoder.spec.input_width() != renderer.image_len() {
        return Err(Error::Shape(format!(
            "model expects {} values per image, configuration renders {}",
            ck.encoder.spec.input_width(),
            renderer.image_len()
        )));
    }
    let (points, images) = match &opts.data_path {
        Some(p) => {
            let recs = crate::imaging::read_dataset(p)?;
            let n = opts.samples.min(recs.len());
            (
                Vec::new(),
                recs.into_iter().take(n).map(|t| t.img_x).collect(),
            )
        }
        None => sample_points(cfg, &renderer, opts.samples, 0)?,
    };
    let codes = encode_images(&ck.encoder, &images)?;
    let p = pca(&codes)?;
    let pairs = (0..opts.pairs)
        .map(|i| {
            renderer.sample_pair(
                cfg.eps,
                &mut record_rng(cfg.seed ^ EVAL_SALT, (1 << 40) + i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let interp = interp_errors(&ck.encoder, &ck.decoder, &renderer, &pairs, &t_grid(11))?;
    Ok(EvalOutcome {
        pca: p,
        codes,
        points,
        interp,
    })
}

/// Writes `pca_stds.csv`, `projection.csv`, `interp_err.csv` and
/// reconstruction images into `out_dir`.
pub fn cmd_eval(
    cfg: &RunConfig,
    ck: &Checkpoint,
    opts: &EvalOptions,
    out_dir: &Path,
) -> Result<EvalOutcome> {
    let out = evaluate(cfg, ck, opts)?;
    fs::create_dir_all(out_dir)?;
    let mut w = BufWriter::new(File::create(out_dir.join("pca_stds.csv"))?);
    write_pca_stds(&mut w, &out.pca)?;
    w.flush()?;

    let (names, labels): (Vec<&str>, Vec<Vec<String>>) = if out.points.is_empty() {
        (vec![], vec![Vec::new(); out.codes.len()])
    } else {
        (
            label_names(cfg.dataset),
            out.points
                .iter()
                .map(|p| labels_for(cfg.dataset, p))
                .collect(),
        )
    };
    let mut w = BufWriter::new(File::create(out_dir.join("projection.csv"))?);
    export_projection(&mut w, &out.codes, &out.pca, opts.dims, &names, &labels)?;
    w.flush()?;

    let mut w = BufWriter::new(File::create(out_dir.join("interp_err.csv"))?);
    out.interp.write_csv(&mut w)?;
    w.flush()?;

    let renderer = cfg.renderer()?;
    let (h, wd, ch) = renderer.image_shape();
    if ch == 1 || ch == 3 {
        let (_, images) = sample_points(cfg, &renderer, opts.recon_images, 1 << 41)?;
        for (i, img) in images.iter().enumerate() {
            let x = Matrix::from_vec(1, img.len(), img.pixels.clone())?;
            let y = ck.decoder.forward_values(&ck.encoder.forward_values(&x)?)?;
            let rec = Image {
                width: wd,
                height: h,
                channels: ch,
                pixels: y.data,
            };
            img.write_pnm(&out_dir.join(format!("recon_{i:03}_input.{}", ext(ch))))?;
            rec.write_pnm(&out_dir.join(format!("recon_{i:03}_output.{}", ext(ch))))?;
        }
    }
    Ok(out)
}

fn ext(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

/// Trailing moving average over `window` values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
