//! Contact geometry from a single image: colour-difference features, a
//! conditional per-pixel normal regressor, Poisson integration to depth and
//! the tactile error metrics.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{chamfer_points, Point3};
use crate::contact::{
    estimate_lights_with, predict_background, ring_pixels, select_contact, ContactSelection, PixelBox,
    ProposalConfig,
};
use crate::error::{domain, Error, Result};
use crate::membrane::{
    apply_indenter, compute_normals, derive_seed, BendParams, HeightField, Indenter, MembraneSurface, NormalMap,
    DEFAULT_GEL_THICKNESS_MM,
};
use crate::neural::{mse, Activation, Checkpoint, Evaluation, LossCurve, Mlp, Objective, TrainConfig, TrainState};
use crate::optics::{render_field, LightRig, LinearImage};
use crate::par;

pub const FEATURE_DIM: usize = 29;
pub const DEFAULT_PIXELS: usize = 2000;
/// Denominator floor of the relative colour difference.
/// Image pitch used for tactile data and reconstruction.
pub const DEFAULT_PIXEL_MM: f64 = 0.25;
pub const DEFAULT_PAD_PX: usize = 12;
pub const DIFF_FLOOR: f64 = 1e-4;

/// Background colours inside `region`, predicted from fiber intensities fitted
/// on the ring around it.
pub fn region_background(
    img: &LinearImage,
    region: &PixelBox,
    rig: &LightRig,
    surface: &MembraneSurface,
    cfg: &ProposalConfig,
) -> Result<LinearImage> {
    let ring = ring_pixels(region, img.width, img.height, cfg);
    let est = estimate_lights_with(img, &ring, rig, surface, cfg.lambda, cfg.solver)?;
    predict_background(&est, region, (img.width, img.height), rig, surface)
}

/// Relative colour difference `(I - B) / max(B, DIFF_FLOOR)` inside `region`,
/// zero elsewhere.
pub fn color_diff_map(
    img: &LinearImage,
    region: &PixelBox,
    rig: &LightRig,
    surface: &MembraneSurface,
    cfg: &ProposalConfig,
) -> Result<LinearImage> {
    let bg = region_background(img, region, rig, surface, cfg)?;
    let mut out = LinearImage::zeros(img.width, img.height);
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            let i = img.get(x, y);
            let b = bg.get(x - region.x0, y - region.y0);
            let k = y * img.width + x;
            for c in 0..3 {
                out.data[k][c] = (i[c] - b[c]) / b[c].max(DIFF_FLOOR);
            }
        }
    }
    Ok(out)
}

/// `m x 29` feature rows and the pixel each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    pub rows: Array2<f64>,
    pub pixels: Vec<usize>,
}

/// 3x3 neighbourhood (clamp-padded, row-major, RGB interleaved) then the
/// normalised pixel position.
pub fn feature_row(diff: &LinearImage, k: usize) -> [f64; FEATURE_DIM] {
    let (w, h) = (diff.width, diff.height);
    let (x, y) = ((k % w) as i64, (k / w) as i64);
    let mut row = [0.0; FEATURE_DIM];
    let mut n = 0;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
            let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
            let v = diff.get(xx, yy);
            row[n..n + 3].copy_from_slice(&v);
            n += 3;
        }
    }
    row[27] = x as f64 / (w - 1).max(1) as f64;
    row[28] = y as f64 / (h - 1).max(1) as f64;
    row
}

pub fn extract_features_at(diff: &LinearImage, pixels: &[usize]) -> Result<PixelFeatures> {
    if let Some(&k) = pixels.iter().find(|&&k| k >= diff.data.len()) {
        return domain(format!("pixel {k} outside the diff map"));
    }
    let rows = par::map_slice(pixels, |&k| feature_row(diff, k));
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(PixelFeatures {
        rows: Array2::from_shape_vec((pixels.len(), FEATURE_DIM), flat).expect("row length is fixed"),
        pixels: pixels.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub pixels: usize,
    pub outside_fraction: f64,
    /// Outside rows come from this band around the region.
    pub outside_band_px: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            pixels: DEFAULT_PIXELS,
            outside_fraction: 0.2,
            outside_band_px: DEFAULT_PAD_PX,
        }
    }
}

fn sample_pool(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() + pool.len() <= count {
        out.extend_from_slice(pool);
    }
    let rest = count - out.len();
    out.extend(rand::seq::index::sample(rng, pool.len(), rest).into_iter().map(|i| pool[i]));
    out
}

/// Pixel sample of `m` rows: `(1 - outside_fraction) m` from `region`, the
/// rest from a band around it. Pools smaller than their share are repeated.
pub fn sample_pixels(
    width: usize,
    height: usize,
    region: &PixelBox,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    if region.area() == 0 || region.x1 > width || region.y1 > height {
        return domain("feature region must cover at least one pixel inside the image");
    }
    if cfg.pixels == 0 || !(0.0..1.0).contains(&cfg.outside_fraction) {
        return domain("need m >= 1 and an outside fraction in [0, 1)");
    }
    let band = region.dilate(cfg.outside_band_px, width, height);
    let inside = region.pixels(width);
    let outside: Vec<usize> = band
        .pixels(width)
        .into_iter()
        .filter(|&k| !region.contains(k % width, k / width))
        .collect();
    let m_out = if outside.is_empty() {
        0
    } else {
        (cfg.outside_fraction * cfg.pixels as f64).round() as usize
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = sample_pool(&inside, cfg.pixels - m_out, &mut rng);
    px.extend(sample_pool(&outside, m_out, &mut rng));
    Ok(px)
}

pub fn extract_features(
    diff: &LinearImage,
    region: &PixelBox,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<PixelFeatures> {
    let px = sample_pixels(diff.width, diff.height, region, cfg, seed)?;
    extract_features_at(diff, &px)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalModelConfig {
    pub hidden: usize,
    pub cond_dim: usize,
}

impl Default for NormalModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            cond_dim: crate::neural::DEFAULT_GLOBAL_DIM,
        }
    }
}

/// Encoder over the 29 features; the decoder sees the colour code
/// concatenated with the conditioning feature and emits a raw normal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl NormalModel {
    pub fn new(cfg: &NormalModelConfig, seed: u64) -> Result<Self> {
        let h = cfg.hidden;
        let encoder = Mlp::new(&[FEATURE_DIM, h, h, h], &[Activation::Relu; 3], derive_seed(seed, 1, 0))?;
        let decoder = Mlp::new(
            &[h + cfg.cond_dim, h, h, 3],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            derive_seed(seed, 2, 0),
        )?;
        Self::from_parts(encoder, decoder)
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.input_dim() != FEATURE_DIM || decoder.output_dim() != 3 {
            return domain("normal model needs 29 inputs and 3 outputs");
        }
        if decoder.input_dim() < encoder.output_dim() {
            return domain("decoder is narrower than the encoder code");
        }
        Ok(Self { encoder, decoder })
    }

    pub fn cond_dim(&self) -> usize {
        self.decoder.input_dim() - self.encoder.output_dim()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("normals")
            .with_mlp("encoder", &self.encoder)
            .with_mlp("decoder", &self.decoder)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "normals" {
            return Err(Error::Format(format!("checkpoint kind '{}' is not a normal model", ck.kind)));
        }
        Self::from_parts(ck.mlp("encoder")?.clone(), ck.mlp("decoder")?.clone())
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let ne = self.encoder.n_params();
        if p.len() != self.n_params() {
            return domain(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        self.encoder.set_params(&p[..ne])?;
        self.decoder.set_params(&p[ne..])
    }

    fn joined(&self, code: Array2<f64>, cond: &Array2<f64>) -> Result<Array2<f64>> {
        if cond.dim() != (code.nrows(), self.cond_dim()) {
            return domain(format!(
                "conditioning has shape {:?}, expected ({}, {})",
                cond.dim(),
                code.nrows(),
                self.cond_dim()
            ));
        }
        Ok(ndarray::concatenate(Axis(1), &[code.view(), cond.view()]).expect("row counts match"))
    }

    /// Raw (unnormalised) normals, one row per feature row.
    pub fn forward(&self, rows: &Array2<f64>, cond: &Array2<f64>) -> Result<Array2<f64>> {
        let code = self.encoder.forward(rows)?;
        self.decoder.forward(&self.joined(code, cond)?)
    }

    /// MSE between raw outputs and `targets`, with the gradient of every parameter.
    pub fn loss_grad(&self, rows: &Array2<f64>, cond: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
        let (code, etape) = self.encoder.forward_taped(rows)?;
        let (out, dtape) = self.decoder.forward_taped(&self.joined(code, cond)?)?;
        let (loss, dy) = mse(&out, targets)?;
        let gd = self.decoder.backward(&dtape, &dy)?;
        let dcode = gd.input.slice(s![.., ..self.encoder.output_dim()]).to_owned();
        let ge = self.encoder.backward(&etape, &dcode)?;
        let mut grad = ge.params;
        grad.extend(gd.params);
        Ok((loss, grad))
    }
}

fn broadcast(g: &Array1<f64>, n: usize) -> Array2<f64> {
    g.broadcast((n, g.len())).expect("1-D broadcast").to_owned()
}

/// Unit normal from a raw output, `None` if it cannot be normalised or faces away.
pub fn normalize_output(raw: [f64; 3]) -> Option<[f64; 3]> {
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    if !(n > 1e-8) || !n.is_finite() || raw[2] <= 0.0 {
        return None;
    }
    Some([raw[0] / n, raw[1] / n, raw[2] / n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalPrediction {
    pub map: NormalMap,
    /// Region pixels whose raw output could not be used.
    pub flagged: Vec<usize>,
}

/// Predict unit normals for every pixel of `region`; other pixels stay `(0, 0, 1)`.
pub fn predict_normals(
    model: &NormalModel,
    diff: &LinearImage,
    region: &PixelBox,
    condition: &Array1<f64>,
) -> Result<NormalPrediction> {
    if condition.len() != model.cond_dim() {
        return domain(format!("condition has {} entries, model expects {}", condition.len(), model.cond_dim()));
    }
    if region.area() == 0 || region.x1 > diff.width || region.y1 > diff.height {
        return domain("prediction region must lie inside the image");
    }
    let pixels = region.pixels(diff.width);
    let feats = extract_features_at(diff, &pixels)?;
    let raw = model.forward(&feats.rows, &broadcast(condition, pixels.len()))?;
    let mut map = NormalMap::flat(diff.width, diff.height);
    let mut flagged = Vec::new();
    for (r, &k) in pixels.iter().enumerate() {
        let (i, j) = (k % diff.width, k / diff.width);
        match normalize_output([raw[[r, 0]], raw[[r, 1]], raw[[r, 2]]]) {
            Some(n) => map.set(i, j, n, true),
            None => {
                map.set(i, j, [0.0, 0.0, 1.0], false);
                flagged.push(k);
            }
        }
    }
    Ok(NormalPrediction { map, flagged })
}

pub fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (d / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Synthetic press data: random sphere presses on randomly bent membranes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TactileDataConfig {
    pub n_samples: usize,
    /// Each press uses one of these, drawn uniformly.
    pub indenters: Vec<Indenter>,
    pub depth_mm: [f64; 2],
    pub kappa_long_per_mm: [f64; 2],
    /// Reconstruction region = contact box grown by this many pixels.
    pub pad_px: usize,
    pub pixel_mm: f64,
    pub sampling: SamplingConfig,
    pub background: ProposalConfig,
    pub seed: u64,
}

/// Background fits inside a known region use the unmodified ridge weight.
pub fn background_config() -> ProposalConfig {
    ProposalConfig {
        lambda: 1e-6,
        ..ProposalConfig::default()
    }
}

impl Default for TactileDataConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            indenters: [2.0, 3.0, 5.0, 8.0].map(Indenter::sphere).to_vec(),
            depth_mm: [0.5, 1.5],
            kappa_long_per_mm: [0.0, std::f64::consts::FRAC_PI_2 / crate::membrane::DEFAULT_WIDTH_MM],
            pad_px: DEFAULT_PAD_PX,
            pixel_mm: DEFAULT_PIXEL_MM,
            sampling: SamplingConfig::default(),
            background: background_config(),
            seed: 0,
        }
    }
}

/// Image size for a rig at `pixel_mm` pitch.
pub fn image_dims(rig: &LightRig, pixel_mm: f64) -> Result<(usize, usize)> {
    if !(pixel_mm > 0.0) {
        return domain("pixel pitch must be positive");
    }
    Ok((
        (rig.width_mm / pixel_mm).round() as usize + 1,
        (rig.height_mm / pixel_mm).round() as usize + 1,
    ))
}

/// Bounding box of the pixels with non-zero depth.
pub fn contact_box(field: &HeightField) -> Option<PixelBox> {
    let mut b: Option<PixelBox> = None;
    for j in 0..field.ny() {
        for i in 0..field.nx() {
            if field.get(i, j) > 0.0 {
                let e = b.get_or_insert(PixelBox { x0: i, y0: j, x1: i + 1, y1: j + 1 });
                e.x0 = e.x0.min(i);
                e.y0 = e.y0.min(j);
                e.x1 = e.x1.max(i + 1);
                e.y1 = e.y1.max(j + 1);
            }
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileSample {
    pub bend: BendParams,
    pub center_mm: [f64; 2],
    pub depth_mm: f64,
    pub region: PixelBox,
    pub features: PixelFeatures,
    pub targets: Array2<f64>,
    pub condition: Array1<f64>,
}

/// Conditioning feature for a bend state.
pub type ConditionFn<'a> = dyn Fn(&BendParams) -> Result<Array1<f64>> + Sync + 'a;

/// Render one press and cut its training rows. `cfg.sampling` decides which
/// pixels are kept; labels are the exact normals of the indented field.
pub fn make_sample(
    rig: &LightRig,
    cfg: &TactileDataConfig,
    indenter: &Indenter,
    bend: &BendParams,
    center_mm: [f64; 2],
    depth_mm: f64,
    condition: &ConditionFn,
    seed: u64,
) -> Result<TactileSample> {
    let (nx, ny) = image_dims(rig, cfg.pixel_mm)?;
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm)?;
    let field = apply_indenter(&flat, indenter, center_mm, depth_mm)?;
    let img = render_field(&field, bend, rig)?;
    let surface = MembraneSurface::new(rig.width_mm, rig.height_mm, bend)?;
    let tight = contact_box(&field).ok_or_else(|| Error::Domain("press does not touch the membrane".into()))?;
    let region = tight.dilate(cfg.pad_px, nx, ny);
    let diff = color_diff_map(&img, &region, rig, &surface, &cfg.background)?;
    let features = extract_features(&diff, &tight, &cfg.sampling, seed)?;
    let normals = compute_normals(&field);
    let targets = Array2::from_shape_fn((features.pixels.len(), 3), |(r, c)| normals.normals()[features.pixels[r]][c]);
    Ok(TactileSample {
        bend: *bend,
        center_mm,
        depth_mm,
        region,
        features,
        targets,
        condition: condition(bend)?,
    })
}

pub fn generate_tactile_dataset(
    rig: &LightRig,
    cfg: &TactileDataConfig,
    condition: &ConditionFn,
) -> Result<Vec<TactileSample>> {
    if cfg.indenters.is_empty() {
        return domain("press data needs at least one indenter");
    }
    let mut radius: f64 = 0.0;
    for ind in &cfg.indenters {
        ind.validate()?;
        radius = radius.max(
            ind.contact_radius(cfg.depth_mm[1])
                .ok_or_else(|| Error::Domain("press indenters must have a bounded footprint".into()))?,
        );
    }
    let inset = cfg.background.margin_px as f64 * cfg.pixel_mm + radius;
    if 2.0 * inset >= rig.width_mm.min(rig.height_mm) || cfg.depth_mm[0] <= 0.0 || cfg.depth_mm[0] > cfg.depth_mm[1] {
        return domain("press ranges leave no valid placements");
    }
    let jobs: Vec<usize> = (0..cfg.n_samples).collect();
    let out = par::map_slice(&jobs, |&n| -> Result<TactileSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7461_6374, n as u64));
        let k = cfg.kappa_long_per_mm;
        let kappa = if k[1] > k[0] { rng.random_range(k[0]..k[1]) } else { k[0] };
        let c = [
            rng.random_range(inset..rig.width_mm - inset),
            rng.random_range(inset..rig.height_mm - inset),
        ];
        let d = if cfg.depth_mm[1] > cfg.depth_mm[0] {
            rng.random_range(cfg.depth_mm[0]..cfg.depth_mm[1])
        } else {
            cfg.depth_mm[0]
        };
        let ind = &cfg.indenters[rng.random_range(0..cfg.indenters.len())];
        make_sample(rig, cfg, ind, &BendParams::longitudinal(kappa), c, d, condition, rng.random())
    });
    out.into_iter().collect()
}

struct NormalObjective<'a> {
    model: NormalModel,
    samples: &'a [TactileSample],
    /// `(sample, row)` for every training row.
    index: Vec<(u32, u32)>,
}

impl Objective for NormalObjective<'_> {
    fn n_samples(&self) -> usize {
        self.index.len()
    }
    fn params(&self) -> Vec<f64> {
        self.model.params()
    }
    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        self.model.set_params(p)
    }
    fn evaluate(&self, batch: &[usize]) -> Result<Evaluation> {
        let g = self.model.cond_dim();
        let n = batch.len();
        let mut rows = Array2::zeros((n, FEATURE_DIM));
        let mut cond = Array2::zeros((n, g));
        let mut targets = Array2::zeros((n, 3));
        for (b, &i) in batch.iter().enumerate() {
            let (s, r) = self.index[i];
            let smp = &self.samples[s as usize];
            rows.row_mut(b).assign(&smp.features.rows.row(r as usize));
            cond.row_mut(b).assign(&smp.condition);
            targets.row_mut(b).assign(&smp.targets.row(r as usize));
        }
        let (loss, grad) = self.model.loss_grad(&rows, &cond, &targets)?;
        Ok(Evaluation {
            loss,
            parts: Vec::new(),
            grad,
        })
    }
}

/// Fit the normal regressor to raw unit-normal targets under MSE.
pub fn train_normal_model(
    samples: &[TactileSample],
    model_cfg: &NormalModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(NormalModel, LossCurve)> {
    let model = NormalModel::new(model_cfg, train_cfg.seed)?;
    train_normal_model_from(model, samples, train_cfg)
}

pub fn train_normal_model_from(
    model: NormalModel,
    samples: &[TactileSample],
    train_cfg: &TrainConfig,
) -> Result<(NormalModel, LossCurve)> {
    let mut run = NormalTraining::new(model, samples, *train_cfg)?;
    run.run_until(train_cfg.epochs)?;
    Ok(run.into_parts())
}

/// Resumable normal-regressor training run.
pub struct NormalTraining<'a> {
    obj: NormalObjective<'a>,
    pub state: TrainState,
    pub config: TrainConfig,
}

impl<'a> NormalTraining<'a> {
    pub fn new(model: NormalModel, samples: &'a [TactileSample], config: TrainConfig) -> Result<Self> {
        if samples.is_empty() {
            return domain("normal training needs at least one sample");
        }
        if let Some(s) = samples.iter().find(|s| s.condition.len() != model.cond_dim()) {
            return domain(format!("sample condition has {} entries, model expects {}", s.condition.len(), model.cond_dim()));
        }
        let index = samples
            .iter()
            .enumerate()
            .flat_map(|(s, smp)| (0..smp.features.rows.nrows()).map(move |r| (s as u32, r as u32)))
            .collect();
        let obj = NormalObjective { model, samples, index };
        let state = TrainState::start(&obj, &config);
        Ok(Self { obj, state, config })
    }

    pub fn resume(model: NormalModel, samples: &'a [TactileSample], config: TrainConfig, state: TrainState) -> Result<Self> {
        let mut run = Self::new(model, samples, config)?;
        run.state = state;
        Ok(run)
    }

    pub fn run_until(&mut self, end_epoch: usize) -> Result<()> {
        crate::neural::train_until(&mut self.obj, &self.config, None, &mut self.state, end_epoch)
    }

    pub fn model(&self) -> &NormalModel {
        &self.obj.model
    }

    pub fn into_parts(self) -> (NormalModel, LossCurve) {
        (self.obj.model, self.state.curve)
    }
}

/// Mean angle between renormalised predictions and labels over all rows.
pub fn mean_angular_error_deg(model: &NormalModel, samples: &[TactileSample]) -> Result<f64> {
    let errs = par::map_slice(samples, |s| -> Result<(f64, usize)> {
        let n = s.features.rows.nrows();
        let raw = model.forward(&s.features.rows, &broadcast(&s.condition, n))?;
        let mut sum = 0.0;
        for r in 0..n {
            let p = normalize_output([raw[[r, 0]], raw[[r, 1]], raw[[r, 2]]]).unwrap_or([0.0, 0.0, 1.0]);
            sum += angle_deg(&p, &[s.targets[[r, 0]], s.targets[[r, 1]], s.targets[[r, 2]]]);
        }
        Ok((sum, n))
    });
    let (mut sum, mut count) = (0.0, 0);
    for e in errs {
        let (s, n) = e?;
        sum += s;
        count += n;
    }
    if count == 0 {
        return domain("no rows to evaluate");
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonReport {
    pub iterations: usize,
    pub residual: f64,
}

pub const POISSON_TOL: f64 = 1e-10;

/// Solve `L z = rhs` with the 5-point Laplacian on an `nx x ny` node grid and
/// `z = 0` on the outer ring of nodes, by conjugate gradients. The residual is
/// relative to `||rhs||` on the interior.
pub fn solve_poisson_dirichlet(
    rhs: &[f64],
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
) -> Result<(Vec<f64>, PoissonReport)> {
    if rhs.len() != nx * ny || nx < 3 || ny < 3 || !(dx > 0.0 && dy > 0.0) {
        return domain("poisson grid needs at least 3x3 nodes, positive pitch and a matching rhs");
    }
    let (ax, ay) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    let (mx, my) = (nx - 2, ny - 2);
    let n = mx * my;
    // Operator -L restricted to the interior, which is SPD.
    let apply = |v: &[f64], out: &mut [f64]| {
        for j in 0..my {
            for i in 0..mx {
                let k = j * mx + i;
                let mut s = 2.0 * (ax + ay) * v[k];
                if i > 0 {
                    s -= ax * v[k - 1];
                }
                if i + 1 < mx {
                    s -= ax * v[k + 1];
                }
                if j > 0 {
                    s -= ay * v[k - mx];
                }
                if j + 1 < my {
                    s -= ay * v[k + mx];
                }
                out[k] = s;
            }
        }
    };
    let b: Vec<f64> = (0..n).map(|k| -rhs[(k / mx + 1) * nx + k % mx + 1]).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut report = PoissonReport {
        iterations: 0,
        residual: 0.0,
    };
    if bnorm > 0.0 {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let max_iter = 20 * n + 100;
        loop {
            report.residual = rr.sqrt() / bnorm;
            if report.residual < POISSON_TOL {
                break;
            }
            if report.iterations >= max_iter {
                return Err(Error::Solver(format!(
                    "poisson CG stopped after {} iterations at relative residual {:e}",
                    report.iterations, report.residual
                )));
            }
            apply(&p, &mut ap);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
            report.iterations += 1;
        }
    }
    let mut z = vec![0.0; nx * ny];
    for k in 0..n {
        z[(k / mx + 1) * nx + k % mx + 1] = x[k];
    }
    Ok((z, report))
}

/// Divergence of the gradient field `p = -Nx/Nz`, `q = -Ny/Nz` by central
/// differences over the nodes of `region`, one-sided on its border.
fn divergence(normals: &NormalMap, region: &PixelBox, dx: f64, dy: f64) -> Result<Vec<f64>> {
    let (w, h) = (region.width(), region.height());
    let mut p = vec![0.0; w * h];
    let mut q = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            let n = normals.get(region.x0 + i, region.y0 + j);
            if !(n[2] > 0.0) {
                return domain(format!(
                    "normal at ({}, {}) has N_z <= 0",
                    region.x0 + i,
                    region.y0 + j
                ));
            }
            p[j * w + i] = -n[0] / n[2];
            q[j * w + i] = -n[1] / n[2];
        }
    }
    let d = |f: &[f64], a: usize, b: usize, step: f64| (f[a] - f[b]) / step;
    let mut div = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            let px = if i == 0 {
                d(&p, k + 1, k, dx)
            } else if i == w - 1 {
                d(&p, k, k - 1, dx)
            } else {
                d(&p, k + 1, k - 1, 2.0 * dx)
            };
            let qy = if j == 0 {
                d(&q, k + w, k, dy)
            } else if j == h - 1 {
                d(&q, k, k - w, dy)
            } else {
                d(&q, k + w, k - w, 2.0 * dy)
            };
            div[k] = px + qy;
        }
    }
    Ok(div)
}

/// Depth over `region` (zero on its border) from the normals inside it; the
/// result covers the whole map and is zero outside the region.
pub fn poisson_integrate_region(
    normals: &NormalMap,
    region: &PixelBox,
    pixel_mm: f64,
) -> Result<(Vec<f64>, PoissonReport)> {
    if region.x1 > normals.nx() || region.y1 > normals.ny() {
        return domain("integration region outside the normal map");
    }
    if region.width() < 3 || region.height() < 3 {
        return domain("integration region needs at least 3x3 pixels");
    }
    let div = divergence(normals, region, pixel_mm, pixel_mm)?;
    let (zr, report) = solve_poisson_dirichlet(&div, region.width(), region.height(), pixel_mm, pixel_mm)?;
    let mut z = vec![0.0; normals.nx() * normals.ny()];
    for j in 0..region.height() {
        for i in 0..region.width() {
            z[(region.y0 + j) * normals.nx() + region.x0 + i] = zr[j * region.width() + i];
        }
    }
    Ok((z, report))
}

/// Height field whose border is pinned to zero; negative depths (outward
/// bulges the membrane cannot make) are clamped to zero.
pub fn poisson_integrate(normals: &NormalMap, pixel_mm: f64) -> Result<HeightField> {
    let full = PixelBox {
        x0: 0,
        y0: 0,
        x1: normals.nx(),
        y1: normals.ny(),
    };
    let (z, _) = poisson_integrate_region(normals, &full, pixel_mm)?;
    depth_field(normals.nx(), normals.ny(), pixel_mm, z)
}

pub fn depth_field(nx: usize, ny: usize, pixel_mm: f64, z: Vec<f64>) -> Result<HeightField> {
    HeightField::from_depths(
        (nx - 1) as f64 * pixel_mm,
        (ny - 1) as f64 * pixel_mm,
        nx,
        ny,
        DEFAULT_GEL_THICKNESS_MM,
        z.into_iter().map(|v| v.max(0.0)).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TactileMetrics {
    /// Chamfer distance in mm^2 between the surface samples over the contact.
    pub chamfer_mm2: f64,
    pub max_depth_error_mm: f64,
    pub contact_pixels: usize,
}

impl TactileMetrics {
    /// Square root of the Chamfer distance.
    pub fn chamfer_rms_mm(&self) -> f64 {
        self.chamfer_mm2.sqrt()
    }
}

/// Compare a reconstruction with the true field over the true contact pixels.
pub fn evaluate_tactile(reconstructed: &HeightField, truth: &HeightField) -> Result<TactileMetrics> {
    if reconstructed.nx() != truth.nx() || reconstructed.ny() != truth.ny() {
        return domain("reconstruction and truth grids differ");
    }
    let mut rec: Vec<Point3> = Vec::new();
    let mut tru: Vec<Point3> = Vec::new();
    let mut max_err: f64 = 0.0;
    for j in 0..truth.ny() {
        for i in 0..truth.nx() {
            let zt = truth.get(i, j);
            if zt > 0.0 {
                let zr = reconstructed.get(i, j);
                let (x, y) = (truth.x(i), truth.y(j));
                rec.push([x, y, zr]);
                tru.push([x, y, zt]);
                max_err = max_err.max((zr - zt).abs());
            }
        }
    }
    if tru.is_empty() {
        return domain("truth field has no contact");
    }
    Ok(TactileMetrics {
        chamfer_mm2: chamfer_points(&rec, &tru)?.0,
        max_depth_error_mm: max_err,
        contact_pixels: tru.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub proposal: ProposalConfig,
    pub background: ProposalConfig,
    pub pad_px: usize,
    /// Best-box `sum |I - B| / sum I` below this means no contact.
    pub no_contact_ratio: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            proposal: ProposalConfig::default(),
            background: background_config(),
            pad_px: DEFAULT_PAD_PX,
            no_contact_ratio: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub selection: ContactSelection,
    /// `None` when the image shows no contact.
    pub region: Option<PixelBox>,
    pub normals: NormalMap,
    pub field: HeightField,
    pub flagged: usize,
}

impl Reconstruction {
    pub fn has_contact(&self) -> bool {
        self.region.is_some()
    }
}

/// Box selection, background, features, normals, then Poisson integration.
pub fn reconstruct(
    img: &LinearImage,
    rig: &LightRig,
    surface: &MembraneSurface,
    model: &NormalModel,
    condition: &Array1<f64>,
    cfg: &ReconstructConfig,
) -> Result<Reconstruction> {
    let (w, h) = (img.width, img.height);
    let pixel_mm = rig.width_mm / (w - 1) as f64;
    let selection = select_contact(img, rig, surface, &cfg.proposal)?;
    let best = selection.best_proposal().bbox;
    let level: f64 = best
        .pixels(w)
        .iter()
        .map(|&k| img.data[k].iter().sum::<f64>())
        .sum();
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, w, h, rig.gel_thickness_mm)?;
    if !(selection.max_delta_c() > 0.0) || selection.max_delta_c() < cfg.no_contact_ratio * level {
        return Ok(Reconstruction {
            selection,
            region: None,
            normals: NormalMap::flat(w, h),
            field: flat,
            flagged: 0,
        });
    }
    let region = best.dilate(cfg.pad_px, w, h);
    let diff = color_diff_map(img, &region, rig, surface, &cfg.background)?;
    let pred = predict_normals(model, &diff, &region, condition)?;
    let (z, _) = poisson_integrate_region(&pred.map, &region, pixel_mm)?;
    let field = flat.with_depths(z.into_iter().map(|v| v.max(0.0)).collect())?;
    Ok(Reconstruction {
        selection,
        region: Some(region),
        normals: pred.map,
        field,
        flagged: pred.flagged.len(),
    })
}

/// One cell of the location x bend-level error grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub bend_level: usize,
    pub kappa_long_per_mm: f64,
    pub location: usize,
    pub x_mm: f64,
    pub contact: bool,
    pub chamfer_mm: f64,
    pub max_depth_error_mm: f64,
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("bend_level,kappa_long_per_mm,location,x_mm,contact,chamfer_mm,max_depth_error_mm\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{},{},{},{:.6},{:.6}\n",
            r.bend_level,
            r.kappa_long_per_mm,
            r.location,
            r.x_mm,
            if r.contact { "contact" } else { "no-contact" },
            r.chamfer_mm,
            r.max_depth_error_mm
        ));
    }
    s
}

/// Held-out indenter pressed at evenly spaced locations along the midline
/// under evenly spaced longitudinal bends `kmax * b / (levels - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub indenter: Indenter,
    pub depth_mm: f64,
    pub locations: usize,
    pub bend_levels: usize,
    pub kappa_max_per_mm: f64,
    pub pixel_mm: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            indenter: Indenter::hex_pyramid(8.0, 2.0),
            depth_mm: 1.0,
            locations: 6,
            bend_levels: 11,
            kappa_max_per_mm: std::f64::consts::FRAC_PI_2 / crate::membrane::DEFAULT_WIDTH_MM,
            pixel_mm: DEFAULT_PIXEL_MM,
        }
    }
}

impl SweepConfig {
    pub fn kappa(&self, level: usize) -> f64 {
        if self.bend_levels <= 1 {
            0.0
        } else {
            self.kappa_max_per_mm * level as f64 / (self.bend_levels - 1) as f64
        }
    }

    pub fn x_mm(&self, width_mm: f64, location: usize) -> f64 {
        width_mm * (location as f64 + 0.5) / self.locations as f64
    }
}

/// Whether `x_mm` lies in the middle half of the membrane length.
pub fn is_central(x_mm: f64, width_mm: f64) -> bool {
    (x_mm - 0.5 * width_mm).abs() <= 0.25 * width_mm + 1e-9
}

#[derive(Debug, Clone)]
pub struct SweepCase {
    pub row: GridRow,
    pub truth: HeightField,
    pub reconstruction: Reconstruction,
}

/// Render, reconstruct and score every (bend level, location) cell, bend-major.
pub fn pyramid_sweep(
    rig: &LightRig,
    model: &NormalModel,
    condition: &ConditionFn,
    sweep: &SweepConfig,
    cfg: &ReconstructConfig,
) -> Result<Vec<SweepCase>> {
    if sweep.locations == 0 || sweep.bend_levels == 0 {
        return domain("sweep needs at least one location and one bend level");
    }
    let (nx, ny) = image_dims(rig, sweep.pixel_mm)?;
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm)?;
    let cells: Vec<(usize, usize)> = (0..sweep.bend_levels)
        .flat_map(|b| (0..sweep.locations).map(move |l| (b, l)))
        .collect();
    let out = par::map_slice(&cells, |&(b, l)| -> Result<SweepCase> {
        let kappa = sweep.kappa(b);
        let bend = BendParams::longitudinal(kappa);
        let surface = MembraneSurface::new(rig.width_mm, rig.height_mm, &bend)?;
        let x_mm = sweep.x_mm(rig.width_mm, l);
        let truth = apply_indenter(&flat, &sweep.indenter, [x_mm, 0.5 * rig.height_mm], sweep.depth_mm)?;
        let img = render_field(&truth, &bend, rig)?;
        let g = condition(&bend)?;
        let rec = reconstruct(&img, rig, &surface, model, &g, cfg)?;
        let (chamfer_mm, max_depth_error_mm) = match evaluate_tactile(&rec.field, &truth) {
            Ok(m) => (m.chamfer_rms_mm(), m.max_depth_error_mm),
            Err(Error::Domain(_)) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        Ok(SweepCase {
            row: GridRow {
                bend_level: b,
                kappa_long_per_mm: kappa,
                location: l,
                x_mm,
                contact: rec.has_contact(),
                chamfer_mm,
                max_depth_error_mm,
            },
            truth,
            reconstruction: rec,
        })
    });
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_diff(w: usize, h: usize, v: [f64; 3]) -> LinearImage {
        LinearImage {
            width: w,
            height: h,
            data: vec![v; w * h],
        }
    }

    #[test]
    fn uniform_map_gives_equal_neighbourhoods() {
        let d = uniform_diff(20, 10, [0.1, -0.2, 0.3]);
        let region = PixelBox { x0: 0, y0: 0, x1: 5, y1: 5 };
        let f = extract_features(&d, &region, &SamplingConfig { pixels: 50, ..SamplingConfig::default() }, 1).unwrap();
        assert_eq!(f.rows.nrows(), 50);
        for row in f.rows.rows() {
            for n in 0..9 {
                assert_eq!(row[3 * n], 0.1);
                assert_eq!(row[3 * n + 1], -0.2);
                assert_eq!(row[3 * n + 2], 0.3);
            }
            assert!((0.0..=1.0).contains(&row[27]) && (0.0..=1.0).contains(&row[28]));
        }
    }

    #[test]
    fn feature_rows_match_direct_lookup() {
        let (w, h) = (13, 9);
        let data = (0..w * h).map(|k| [k as f64, -(k as f64), 0.5 * k as f64]).collect();
        let d = LinearImage { width: w, height: h, data };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<usize> = (0..100).map(|_| rng.random_range(0..w * h)).collect();
        let f = extract_features_at(&d, &pixels).unwrap();
        for (r, &k) in pixels.iter().enumerate() {
            let (x, y) = ((k % w) as i64, (k / w) as i64);
            let mut col = 0;
            for dy in [-1i64, 0, 1] {
                for dx in [-1i64, 0, 1] {
                    let xx = (x + dx).max(0).min(w as i64 - 1);
                    let yy = (y + dy).max(0).min(h as i64 - 1);
                    let idx = (yy * w as i64 + xx) as f64;
                    assert_eq!(f.rows[[r, col]], idx);
                    assert_eq!(f.rows[[r, col + 1]], -idx);
                    assert_eq!(f.rows[[r, col + 2]], 0.5 * idx);
                    col += 3;
                }
            }
            assert_eq!(f.rows[[r, 27]], x as f64 / 12.0);
            assert_eq!(f.rows[[r, 28]], y as f64 / 8.0);
        }
    }

    #[test]
    fn sampling_split_and_errors() {
        let region = PixelBox { x0: 10, y0: 10, x1: 20, y1: 20 };
        let px = sample_pixels(40, 40, &region, &SamplingConfig::default(), 2).unwrap();
        assert_eq!(px.len(), DEFAULT_PIXELS);
        let inside = px.iter().filter(|&&k| region.contains(k % 40, k / 40)).count();
        assert_eq!(inside, 1600);
        assert_eq!(px, sample_pixels(40, 40, &region, &SamplingConfig::default(), 2).unwrap());
        let empty = PixelBox { x0: 3, y0: 3, x1: 3, y1: 5 };
        assert!(sample_pixels(40, 40, &empty, &SamplingConfig::default(), 0).is_err());
    }

    #[test]
    fn predictions_are_unit_or_flagged() {
        let model = NormalModel::new(&NormalModelConfig { hidden: 16, cond_dim: 4 }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (30, 20);
        let data = (0..w * h)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let d = LinearImage { width: w, height: h, data };
        let region = PixelBox { x0: 2, y0: 3, x1: 25, y1: 17 };
        let p = predict_normals(&model, &d, &region, &Array1::from(vec![0.5, -1.0, 2.0, 0.0])).unwrap();
        for (k, n) in p.map.normals().iter().enumerate() {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
            if !region.contains(k % w, k / w) {
                assert_eq!(*n, [0.0, 0.0, 1.0]);
            }
        }
        assert!(predict_normals(&model, &d, &region, &Array1::zeros(3)).is_err());
    }

    #[test]
    fn normal_model_gradient() {
        use crate::neural::check_gradient;
        let model = NormalModel::new(&NormalModelConfig { hidden: 5, cond_dim: 2 }, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = Array2::from_shape_fn((4, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
        let cond = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (_, g) = model.loss_grad(&rows, &cond, &t).unwrap();
        let f = |p: &[f64]| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            mse(&m.forward(&rows, &cond).unwrap(), &t).unwrap().0
        };
        let c = check_gradient(f, &model.params(), &g, 1e-6);
        assert!(c.passes(1e-4), "{c:?}");
    }

    #[test]
    fn flat_normals_integrate_to_zero() {
        let f = poisson_integrate(&NormalMap::flat(9, 7), 0.5).unwrap();
        assert!(f.depths().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn poisson_reproduces_known_field() {
        let (nx, ny, h) = (24, 17, 0.3);
        let z: Vec<f64> = (0..nx * ny)
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    0.0
                } else {
                    ((i * 7 + j * 3) % 11) as f64 * 0.1 - 0.4
                }
            })
            .collect();
        let mut rhs = vec![0.0; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                rhs[k] = (z[k + 1] + z[k - 1] - 2.0 * z[k]) / (h * h) + (z[k + nx] + z[k - nx] - 2.0 * z[k]) / (h * h);
            }
        }
        let (sol, rep) = solve_poisson_dirichlet(&rhs, nx, ny, h, h).unwrap();
        assert!(rep.residual < POISSON_TOL);
        let err = sol.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_inward_facing_normals() {
        let mut n = NormalMap::flat(6, 6);
        n.set(2, 2, [1.0, 0.0, 0.0], true);
        assert!(poisson_integrate(&n, 1.0).is_err());
    }

    #[test]
    fn metrics_of_truth_and_offset() {
        let flat = HeightField::flat(20.0, 20.0, 41, 41, 3.0).unwrap();
        let truth = apply_indenter(&flat, &Indenter::sphere(5.0), [10.0, 10.0], 1.0).unwrap();
        let m = evaluate_tactile(&truth, &truth).unwrap();
        assert_eq!((m.chamfer_mm2, m.max_depth_error_mm), (0.0, 0.0));
        let shifted = truth
            .with_depths(truth.depths().iter().map(|&z| if z > 0.0 { z + 0.1 } else { z }).collect())
            .unwrap();
        let m = evaluate_tactile(&shifted, &truth).unwrap();
        assert!((m.max_depth_error_mm - 0.1).abs() < 1e-12);
        assert!(evaluate_tactile(&flat, &flat).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let rows = [GridRow {
            bend_level: 1,
            kappa_long_per_mm: 0.01,
            location: 2,
            x_mm: 30.0,
            contact: true,
            chamfer_mm: 0.2,
            max_depth_error_mm: 0.05,
        }];
        let csv = grid_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,1e-2,2,30,contact,"));
    }
}
