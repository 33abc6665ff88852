//! Proprioception: a point-cloud autoencoder, then a contour-conditioned
//! network that moves the shape-reference code to the deformed shape.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cloud::{chamfer_points, Point3, PointCloud};
use crate::error::{domain, Error, Result};
use crate::membrane::{bent_cloud, derive_seed, BendDataset, BendScenario, DatasetConfig, Mask, DEFAULT_WIDTH_MM};
use crate::neural::{
    chamfer_loss_grad, max_pool, train_until, Activation, Checkpoint, Evaluation, LossCurve, Mlp, Objective,
    PointEncoder, TrainConfig, TrainState, DEFAULT_GLOBAL_DIM,
};
use crate::par;

pub const DEFAULT_MASK_SIZE: usize = 32;

/// Affine map from millimetres to the unit-scale frame the networks see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudNorm {
    pub center: Point3,
    pub scale: f64,
}

impl CloudNorm {
    /// Centre of the bounding box and half its diagonal.
    pub fn fit(cloud: &PointCloud) -> Result<Self> {
        let (lo, hi) = cloud.bounds();
        let scale = 0.5 * cloud.diagonal();
        if !(scale > 0.0) {
            return domain("cannot normalise a degenerate cloud");
        }
        Ok(Self {
            center: [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])],
            scale,
        })
    }

    pub fn forward(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    pub fn inverse(&self, p: &Point3) -> Point3 {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    pub fn apply(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().map(|p| self.forward(p)).collect()
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.center[0], self.center[1], self.center[2], self.scale]
    }

    fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x, y, z, s] if *s > 0.0 => Ok(Self { center: [*x, *y, *z], scale: *s }),
            _ => Err(Error::Format("cloud normalisation must be 4 values with positive scale".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub encoder_hidden: Vec<usize>,
    pub global_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64, 128],
            global_dim: DEFAULT_GLOBAL_DIM,
            decoder_hidden: vec![256, 256],
            train: TrainConfig {
                epochs: 60,
                batch_size: 16,
                seed: 0,
                optimizer: Default::default(),
            },
        }
    }
}

fn decoder_mlp(global_dim: usize, hidden: &[usize], n_points: usize, seed: u64) -> Result<Mlp> {
    let mut dims = vec![global_dim];
    dims.extend_from_slice(hidden);
    dims.push(3 * n_points);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Identity);
    Mlp::new(&dims, &acts, seed)
}

fn row_points(row: ndarray::ArrayView1<f64>) -> Vec<Point3> {
    row.as_slice()
        .expect("standard layout")
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}

/// Max-pool encoder and a fully connected decoder emitting `n_points` points.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: PointEncoder,
    pub decoder: Mlp,
    pub norm: CloudNorm,
}

impl AutoencoderPair {
    pub fn new(cfg: &AutoencoderConfig, n_points: usize, norm: CloudNorm, seed: u64) -> Result<Self> {
        if n_points == 0 {
            return domain("decoder must emit at least one point");
        }
        let encoder = PointEncoder::new(&cfg.encoder_hidden, cfg.global_dim, derive_seed(seed, 0xae, 1))?;
        let decoder = decoder_mlp(cfg.global_dim, &cfg.decoder_hidden, n_points, derive_seed(seed, 0xae, 2))?;
        Self::from_parts(encoder, decoder, norm)
    }

    pub fn from_parts(encoder: PointEncoder, decoder: Mlp, norm: CloudNorm) -> Result<Self> {
        if decoder.input_dim() != encoder.global_dim() {
            return domain(format!(
                "decoder takes {} features, encoder emits {}",
                decoder.input_dim(),
                encoder.global_dim()
            ));
        }
        if !decoder.output_dim().is_multiple_of(3) {
            return domain("decoder output must be a multiple of 3");
        }
        Ok(Self { encoder, decoder, norm })
    }

    pub fn n_points(&self) -> usize {
        self.decoder.output_dim() / 3
    }

    pub fn global_dim(&self) -> usize {
        self.encoder.global_dim()
    }

    /// Global feature of a cloud given in millimetres.
    pub fn global_feature(&self, points: &[Point3]) -> Result<Array1<f64>> {
        Ok(self.encoder.encode(&self.norm.apply(points))?.global)
    }

    /// Decode global features (one per row) to clouds in millimetres.
    pub fn decode(&self, g: &Array2<f64>) -> Result<Vec<PointCloud>> {
        let out = self.decoder.forward(g)?;
        out.rows()
            .into_iter()
            .map(|r| PointCloud::new(row_points(r).iter().map(|p| self.norm.inverse(p)).collect()))
            .collect()
    }

    pub fn reconstruct(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let g = self.global_feature(cloud.points())?;
        let n = g.len();
        Ok(self.decode(&g.into_shape_with_order((1, n)).expect("row"))?.remove(0))
    }

    pub fn to_checkpoint(&self, shape_ref: &PointCloud) -> Checkpoint {
        Checkpoint::new("autoencoder")
            .with_meta("n_points", self.n_points())
            .with_mlp("encoder", &self.encoder.mlp)
            .with_mlp("decoder", &self.decoder)
            .with_tensor("norm", self.norm.to_vec())
            .with_tensor("shape_ref", shape_ref.points().iter().flatten().copied().collect())
    }

    /// The pair and its shape-reference cloud.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, PointCloud)> {
        if ck.kind != "autoencoder" && ck.kind != "proprio" {
            return Err(Error::Format(format!("checkpoint kind '{}' holds no autoencoder", ck.kind)));
        }
        let pair = Self::from_parts(
            PointEncoder::from_mlp(ck.mlp("encoder")?.clone())?,
            ck.mlp("decoder")?.clone(),
            CloudNorm::from_slice(ck.tensor("norm")?)?,
        )?;
        let flat = ck.tensor("shape_ref")?;
        if flat.len() % 3 != 0 || flat.is_empty() {
            return Err(Error::Format("shape_ref tensor must hold whole points".into()));
        }
        let shape_ref = PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
        Ok((pair, shape_ref))
    }
}

/// Chamfer loss per decoded row against normalised targets; returns the mean
/// loss and `dL/d(decoder output)`.
fn decoded_chamfer(out: &Array2<f64>, targets: &[&[Point3]]) -> Result<(f64, Array2<f64>)> {
    let b = out.nrows();
    let per = par::map_range(b, |i| chamfer_loss_grad(&row_points(out.row(i)), targets[i]));
    let mut dy = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for (i, r) in per.into_iter().enumerate() {
        let (l, g) = r?;
        loss += l;
        for (k, p) in g.iter().enumerate() {
            for c in 0..3 {
                dy[[i, 3 * k + c]] = p[c] / b as f64;
            }
        }
    }
    Ok((loss / b as f64, dy))
}

struct AutoencoderObjective {
    pair: AutoencoderPair,
    clouds: Vec<Vec<Point3>>,
}

impl AutoencoderObjective {
    fn split(&self) -> usize {
        self.pair.encoder.mlp.n_params()
    }
}

impl Objective for AutoencoderObjective {
    fn n_samples(&self) -> usize {
        self.clouds.len()
    }
    fn params(&self) -> Vec<f64> {
        let mut p = self.pair.encoder.mlp.params();
        p.extend(self.pair.decoder.params());
        p
    }
    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let ne = self.split();
        if p.len() != ne + self.pair.decoder.n_params() {
            return domain("autoencoder parameter count mismatch");
        }
        self.pair.encoder.mlp.set_params(&p[..ne])?;
        self.pair.decoder.set_params(&p[ne..])
    }
    fn evaluate(&self, batch: &[usize]) -> Result<Evaluation> {
        let encoder = &self.pair.encoder;
        let taped = par::map_slice(batch, |&i| encoder.encode_taped(&self.clouds[i]));
        let taped = taped.into_iter().collect::<Result<Vec<_>>>()?;
        let gd = encoder.global_dim();
        let mut g = Array2::zeros((batch.len(), gd));
        for (r, (enc, _)) in taped.iter().enumerate() {
            g.row_mut(r).assign(&enc.global);
        }
        let (out, tape) = self.pair.decoder.forward_taped(&g)?;
        let targets: Vec<&[Point3]> = batch.iter().map(|&i| self.clouds[i].as_slice()).collect();
        let (loss, dy) = decoded_chamfer(&out, &targets)?;
        let dec = self.pair.decoder.backward(&tape, &dy)?;
        let enc_grads = par::map_range(batch.len(), |r| {
            let (enc, t) = &taped[r];
            encoder.backward(t, enc, &dec.input.row(r).to_owned())
        });
        let mut grad = vec![0.0; self.split()];
        for eg in enc_grads {
            for (a, v) in grad.iter_mut().zip(eg?) {
                *a += v;
            }
        }
        grad.extend(dec.params);
        Ok(Evaluation {
            loss,
            parts: vec![loss],
            grad,
        })
    }
    fn part_names(&self) -> Vec<String> {
        vec!["chamfer".into()]
    }
}

/// Resumable autoencoder training run.
pub struct AutoencoderTraining {
    obj: AutoencoderObjective,
    pub state: TrainState,
    pub config: TrainConfig,
}

impl AutoencoderTraining {
    pub fn new(pair: AutoencoderPair, clouds: &[PointCloud], config: TrainConfig) -> Result<Self> {
        if clouds.is_empty() {
            return domain("autoencoder training needs at least one cloud");
        }
        let obj = AutoencoderObjective {
            clouds: clouds.iter().map(|c| pair.norm.apply(c.points())).collect(),
            pair,
        };
        let state = TrainState::start(&obj, &config);
        Ok(Self { obj, state, config })
    }

    pub fn resume(pair: AutoencoderPair, clouds: &[PointCloud], config: TrainConfig, state: TrainState) -> Result<Self> {
        let mut run = Self::new(pair, clouds, config)?;
        run.state = state;
        Ok(run)
    }

    pub fn run_until(&mut self, end_epoch: usize) -> Result<()> {
        train_until(&mut self.obj, &self.config, None, &mut self.state, end_epoch)
    }

    pub fn pair(&self) -> &AutoencoderPair {
        &self.obj.pair
    }

    pub fn into_parts(self) -> (AutoencoderPair, LossCurve) {
        (self.obj.pair, self.state.curve)
    }
}

/// Fit the autoencoder on deformed clouds with the Chamfer reconstruction loss.
/// The normalisation is fitted on `shape_ref`.
pub fn pretrain_autoencoder(
    clouds: &[PointCloud],
    shape_ref: &PointCloud,
    cfg: &AutoencoderConfig,
) -> Result<(AutoencoderPair, LossCurve)> {
    let n = clouds.first().map(PointCloud::len).unwrap_or(0);
    let pair = AutoencoderPair::new(cfg, n, CloudNorm::fit(shape_ref)?, cfg.train.seed)?;
    let mut run = AutoencoderTraining::new(pair, clouds, cfg.train)?;
    run.run_until(cfg.train.epochs)?;
    Ok(run.into_parts())
}

/// Mean Chamfer (mm^2) between every cloud and its reconstruction.
pub fn reconstruction_chamfer(pair: &AutoencoderPair, clouds: &[PointCloud]) -> Result<f64> {
    mean_chamfer(clouds.iter().map(|c| Ok((pair.reconstruct(c)?, c))))
}

fn mean_chamfer<'a>(pairs: impl Iterator<Item = Result<(PointCloud, &'a PointCloud)>>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in pairs {
        let (a, b) = p?;
        sum += chamfer_points(a.points(), b.points())?.squared_mm();
        n += 1;
    }
    if n == 0 {
        return domain("no clouds to compare");
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProprioConfig {
    pub mask_size: usize,
    pub mask_hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ProprioConfig {
    fn default() -> Self {
        Self {
            mask_size: DEFAULT_MASK_SIZE,
            mask_hidden: vec![256, 128],
            train: TrainConfig {
                epochs: 60,
                batch_size: 16,
                seed: 0,
                optimizer: Default::default(),
            },
        }
    }
}

/// Contour-conditioned shape predictor. The frozen encoder's per-point
/// features of the shape reference are shifted by the mask latent `v` and
/// max-pooled into `g`, which the decoder maps to the deformed cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ProprioNet {
    pub pair: AutoencoderPair,
    pub mask_mlp: Mlp,
    pub shape_ref: PointCloud,
    pub mask_resolution: usize,
    pub mask_size: usize,
    ref_features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapePrediction {
    pub cloud: PointCloud,
    pub global: Array1<f64>,
}

impl ProprioNet {
    pub fn new(pair: AutoencoderPair, shape_ref: PointCloud, mask_resolution: usize, cfg: &ProprioConfig, seed: u64) -> Result<Self> {
        let mut dims = vec![cfg.mask_size * cfg.mask_size];
        dims.extend_from_slice(&cfg.mask_hidden);
        dims.push(pair.global_dim());
        let mut acts = vec![Activation::Relu; cfg.mask_hidden.len()];
        acts.push(Activation::Identity);
        let mask_mlp = Mlp::new(&dims, &acts, derive_seed(seed, 0x6d61, 1))?;
        Self::from_parts(pair, mask_mlp, shape_ref, mask_resolution, cfg.mask_size)
    }

    pub fn from_parts(
        pair: AutoencoderPair,
        mask_mlp: Mlp,
        shape_ref: PointCloud,
        mask_resolution: usize,
        mask_size: usize,
    ) -> Result<Self> {
        if mask_size == 0 || !mask_resolution.is_multiple_of(mask_size) {
            return domain(format!("mask resolution {mask_resolution} is not a multiple of {mask_size}"));
        }
        if mask_mlp.input_dim() != mask_size * mask_size {
            return domain(format!(
                "mask encoder takes {} inputs, a {mask_size}x{mask_size} mask has {}",
                mask_mlp.input_dim(),
                mask_size * mask_size
            ));
        }
        if mask_mlp.output_dim() != pair.global_dim() {
            return domain(format!(
                "mask latent has {} entries, reference features have {}",
                mask_mlp.output_dim(),
                pair.global_dim()
            ));
        }
        let ref_features = pair.encoder.encode(&pair.norm.apply(shape_ref.points()))?.per_point;
        Ok(Self {
            pair,
            mask_mlp,
            shape_ref,
            mask_resolution,
            mask_size,
            ref_features,
        })
    }

    pub fn n_points(&self) -> usize {
        self.pair.n_points()
    }

    pub fn mask_input(&self, mask: &Mask) -> Result<Vec<f64>> {
        if mask.width != self.mask_resolution || mask.height != self.mask_resolution {
            return domain(format!(
                "mask is {}x{}, network expects {r}x{r}",
                mask.width,
                mask.height,
                r = self.mask_resolution
            ));
        }
        mask.downsample(self.mask_size)
    }

    /// Max-pool of the reference per-point features shifted by each row of `v`.
    pub fn fuse(&self, v: &Array2<f64>) -> Result<Array2<f64>> {
        if v.ncols() != self.ref_features.ncols() {
            return domain(format!(
                "latent has {} entries, reference features have {}",
                v.ncols(),
                self.ref_features.ncols()
            ));
        }
        let mut g = Array2::zeros(v.dim());
        for (r, row) in v.rows().into_iter().enumerate() {
            let shifted = &self.ref_features + &row;
            g.row_mut(r).assign(&max_pool(&shifted).0);
        }
        Ok(g)
    }

    pub fn predict_batch(&self, masks: &[&Mask]) -> Result<Vec<ShapePrediction>> {
        let k = self.mask_size * self.mask_size;
        let mut x = Array2::zeros((masks.len(), k));
        for (r, m) in masks.iter().enumerate() {
            x.row_mut(r).assign(&Array1::from(self.mask_input(m)?));
        }
        let g = self.fuse(&self.mask_mlp.forward(&x)?)?;
        let clouds = self.pair.decode(&g)?;
        Ok(clouds
            .into_iter()
            .zip(g.rows())
            .map(|(cloud, row)| ShapePrediction {
                cloud,
                global: row.to_owned(),
            })
            .collect())
    }

    pub fn predict_shape(&self, mask: &Mask) -> Result<ShapePrediction> {
        Ok(self.predict_batch(&[mask])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.pair
            .to_checkpoint(&self.shape_ref)
            .with_mlp("mask", &self.mask_mlp)
            .with_meta("mask_resolution", self.mask_resolution)
            .with_meta("mask_size", self.mask_size)
            .renamed("proprio")
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "proprio" {
            return Err(Error::Format(format!("checkpoint kind '{}' is not a proprio network", ck.kind)));
        }
        let (pair, shape_ref) = AutoencoderPair::from_checkpoint(ck)?;
        Self::from_parts(
            pair,
            ck.mlp("mask")?.clone(),
            shape_ref,
            ck.meta_parse("mask_resolution")?,
            ck.meta_parse("mask_size")?,
        )
    }
}

/// Training sample for the proprio network.
#[derive(Debug, Clone)]
struct ProprioItem {
    mask: Array1<f64>,
    target: Vec<Point3>,
    g_pre: Array1<f64>,
}

struct ProprioObjective {
    net: ProprioNet,
    items: Vec<ProprioItem>,
}

impl ProprioObjective {
    fn split(&self) -> usize {
        self.net.mask_mlp.n_params()
    }
}

impl Objective for ProprioObjective {
    fn n_samples(&self) -> usize {
        self.items.len()
    }
    fn params(&self) -> Vec<f64> {
        let mut p = self.net.mask_mlp.params();
        p.extend(self.net.pair.decoder.params());
        p
    }
    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let nm = self.split();
        if p.len() != nm + self.net.pair.decoder.n_params() {
            return domain("proprio parameter count mismatch");
        }
        self.net.mask_mlp.set_params(&p[..nm])?;
        self.net.pair.decoder.set_params(&p[nm..])
    }
    /// `L = CD(decoded, truth) + |g - g_pre|^2 / G`, batch-averaged.
    fn evaluate(&self, batch: &[usize]) -> Result<Evaluation> {
        let net = &self.net;
        let b = batch.len();
        let gd = net.pair.global_dim();
        let mut x = Array2::zeros((b, net.mask_mlp.input_dim()));
        let mut g_pre = Array2::zeros((b, gd));
        for (r, &i) in batch.iter().enumerate() {
            x.row_mut(r).assign(&self.items[i].mask);
            g_pre.row_mut(r).assign(&self.items[i].g_pre);
        }
        let (v, mtape) = net.mask_mlp.forward_taped(&x)?;
        let g = net.fuse(&v)?;
        let (out, dtape) = net.pair.decoder.forward_taped(&g)?;
        let targets: Vec<&[Point3]> = batch.iter().map(|&i| self.items[i].target.as_slice()).collect();
        let (cd, dy) = decoded_chamfer(&out, &targets)?;
        let dec = net.pair.decoder.backward(&dtape, &dy)?;
        let diff = &g - &g_pre;
        let feat = diff.iter().map(|d| d * d).sum::<f64>() / (gd * b) as f64;
        // g = g_ref + v exactly, so dL/dv = dL/dg.
        let dv = dec.input + &(diff * (2.0 / (gd * b) as f64));
        let mgrad = net.mask_mlp.backward(&mtape, &dv)?;
        let mut grad = mgrad.params;
        grad.extend(dec.params);
        Ok(Evaluation {
            loss: cd + feat,
            parts: vec![cd, feat],
            grad,
        })
    }
    fn part_names(&self) -> Vec<String> {
        vec!["chamfer".into(), "feature".into()]
    }
}

/// Resumable proprio training run. The encoder is not a training parameter.
pub struct ProprioTraining {
    obj: ProprioObjective,
    pub state: TrainState,
    pub config: TrainConfig,
}

impl ProprioTraining {
    pub fn new(net: ProprioNet, data: &[(&Mask, &PointCloud)], config: TrainConfig) -> Result<Self> {
        if data.is_empty() {
            return domain("proprio training needs at least one sample");
        }
        let items = data
            .iter()
            .map(|(m, c)| {
                if c.len() != net.n_points() {
                    return domain(format!("target cloud has {} points, decoder emits {}", c.len(), net.n_points()));
                }
                let target = net.pair.norm.apply(c.points());
                Ok(ProprioItem {
                    mask: Array1::from(net.mask_input(m)?),
                    g_pre: net.pair.encoder.encode(&target)?.global,
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let obj = ProprioObjective { net, items };
        let state = TrainState::start(&obj, &config);
        Ok(Self { obj, state, config })
    }

    pub fn resume(net: ProprioNet, data: &[(&Mask, &PointCloud)], config: TrainConfig, state: TrainState) -> Result<Self> {
        let mut run = Self::new(net, data, config)?;
        run.state = state;
        Ok(run)
    }

    pub fn run_until(&mut self, end_epoch: usize) -> Result<()> {
        train_until(&mut self.obj, &self.config, None, &mut self.state, end_epoch)
    }

    pub fn net(&self) -> &ProprioNet {
        &self.obj.net
    }

    pub fn into_parts(self) -> (ProprioNet, LossCurve) {
        (self.obj.net, self.state.curve)
    }

    /// Loss, Chamfer term and feature term over the given samples.
    pub fn evaluate(&self, batch: &[usize]) -> Result<Evaluation> {
        self.obj.evaluate(batch)
    }
}

/// Train mask encoder and decoder (initialised from `pair`) on
/// `(mask, deformed cloud)` samples against `shape_ref`.
pub fn train_proprio(
    pair: &AutoencoderPair,
    shape_ref: &PointCloud,
    data: &[(&Mask, &PointCloud)],
    mask_resolution: usize,
    cfg: &ProprioConfig,
) -> Result<(ProprioNet, LossCurve)> {
    let net = ProprioNet::new(pair.clone(), shape_ref.clone(), mask_resolution, cfg, cfg.train.seed)?;
    let mut run = ProprioTraining::new(net, data, cfg.train)?;
    run.run_until(cfg.train.epochs)?;
    Ok(run.into_parts())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProprioMetrics {
    /// Mean predicted-vs-truth Chamfer, mm^2.
    pub predicted: f64,
    /// Mean shape-ref-vs-truth Chamfer, mm^2.
    pub baseline: f64,
}

impl ProprioMetrics {
    pub fn ratio(&self) -> f64 {
        self.predicted / self.baseline
    }
}

pub fn evaluate_proprio(net: &ProprioNet, data: &[(&Mask, &PointCloud)]) -> Result<ProprioMetrics> {
    let masks: Vec<&Mask> = data.iter().map(|d| d.0).collect();
    let preds = net.predict_batch(&masks)?;
    let predicted = mean_chamfer(preds.into_iter().zip(data).map(|(p, d)| Ok((p.cloud, d.1))))?;
    let baseline = mean_chamfer(data.iter().map(|d| Ok((net.shape_ref.clone(), d.1))))?;
    Ok(ProprioMetrics { predicted, baseline })
}

/// Median wall time of `reps` single-mask predictions.
pub fn measure_latency(net: &ProprioNet, mask: &Mask, reps: usize) -> Result<Duration> {
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        net.predict_shape(mask)?;
        times.push(t.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

/// Free bending plus plate presses from below, split by frame count.
pub fn desk_dataset_config(frames: usize, n_points: usize, seed: u64) -> DatasetConfig {
    let kmax = std::f64::consts::FRAC_PI_2 / DEFAULT_WIDTH_MM;
    let free = frames - frames / 4;
    DatasetConfig::new(
        vec![
            BendScenario {
                name: "free".into(),
                frames: free,
                kappa_long_per_mm: [0.0, kmax],
                kappa_lat_per_mm: [-0.002, 0.002],
                plane: None,
            },
            BendScenario {
                name: "plate".into(),
                frames: frames - free,
                kappa_long_per_mm: [0.25 * kmax, kmax],
                kappa_lat_per_mm: [0.0, 0.0],
                plane: Some(crate::membrane::PlaneContactSpec {
                    normal: [0.0, 0.0, 1.0],
                    depth_mm: [0.0, 4.0],
                }),
            },
        ],
        n_points,
        seed,
    )
}

/// Conditioning for tactile training: the frozen encoder's code of the
/// membrane sampled at `sites` under each bend.
pub fn bend_condition<'a>(
    pair: &'a AutoencoderPair,
    sites: &'a [[f64; 2]],
    width_mm: f64,
    height_mm: f64,
) -> impl Fn(&crate::membrane::BendParams) -> Result<Array1<f64>> + Sync + 'a {
    move |bend| pair.global_feature(bent_cloud(sites, width_mm, height_mm, bend)?.points())
}

/// `(mask, deformed)` pairs of a dataset.
pub fn mask_cloud_pairs(data: &BendDataset) -> Vec<(&Mask, &PointCloud)> {
    data.samples.iter().map(|s| (&s.mask, &s.deformed)).collect()
}

pub fn frozen_encoder_bytes(pair: &AutoencoderPair) -> Vec<u8> {
    pair.encoder.mlp.params().iter().flat_map(|v| v.to_le_bytes()).collect()
}
