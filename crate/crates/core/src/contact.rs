//! Contact pre-selection: tile the image into candidate boxes, estimate fiber
//! intensities from a ring of pixels around each box, predict the uncontacted
//! background inside it and score the colour residual.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::membrane::MembraneSurface;
use crate::optics::{build_coefficient_matrix, LightRig, LinearImage};
use crate::par;

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
    /// Row-major pixel indices in an image of width `w`.
    pub fn pixels(&self, w: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.area());
        for y in self.y0..self.y1 {
            for x in self.x0..self.x1 {
                out.push(y * w + x);
            }
        }
        out
    }
    /// Box grown by `pad` on every side, clipped to a `w x h` image.
    pub fn dilate(&self, pad: usize, w: usize, h: usize) -> PixelBox {
        PixelBox {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: (self.x1 + pad).min(w),
            y1: (self.y1 + pad).min(h),
        }
    }
    /// Chebyshev distance from pixel `(x, y)` to the box (0 inside).
    fn distance(&self, x: usize, y: usize) -> usize {
        let dx = if x < self.x0 {
            self.x0 - x
        } else if x >= self.x1 {
            x + 1 - self.x1
        } else {
            0
        };
        let dy = if y < self.y0 {
            self.y0 - y
        } else if y >= self.y1 {
            y + 1 - self.y1
        } else {
            0
        };
        dx.max(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub rows: usize,
    pub cols: usize,
    /// Border excluded from the sensing area.
    pub margin_px: usize,
    /// Each box extends its tile by this much on every side.
    pub overlap_px: usize,
    /// Ring pixels lie at Chebyshev distance `(ring_offset_px, ring_offset_px + ring_width_px]`.
    pub ring_offset_px: usize,
    pub ring_width_px: usize,
    pub ring_samples: usize,
    pub lambda: f64,
    #[serde(default)]
    pub solver: LightSolver,
    /// Refits without ring pixels whose residual is an outlier.
    #[serde(default = "default_trim_passes")]
    pub trim_passes: usize,
}

fn default_trim_passes() -> usize {
    0
}

/// How per-light intensities are recovered from the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightSolver {
    /// Unconstrained ridge solve, negative values clamped afterwards.
    RidgeClamp,
    /// Ridge objective under `x >= 0`.
    #[default]
    NonNegative,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 6,
            margin_px: 4,
            overlap_px: 0,
            ring_offset_px: 2,
            ring_width_px: 2,
            ring_samples: 256,
            lambda: 1e-3,
            solver: LightSolver::default(),
            trim_passes: default_trim_passes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactProposal {
    pub index: usize,
    pub tile: PixelBox,
    pub bbox: PixelBox,
    pub ring: Vec<usize>,
    pub delta_c: f64,
}

/// Sensing area of a `w x h` image.
pub fn sensing_area(w: usize, h: usize, cfg: &ProposalConfig) -> Result<PixelBox> {
    if 2 * cfg.margin_px >= w || 2 * cfg.margin_px >= h {
        return domain("margin leaves no sensing area");
    }
    Ok(PixelBox {
        x0: cfg.margin_px,
        y0: cfg.margin_px,
        x1: w - cfg.margin_px,
        y1: h - cfg.margin_px,
    })
}

fn split(lo: usize, hi: usize, n: usize, k: usize) -> (usize, usize) {
    let len = hi - lo;
    (lo + k * len / n, lo + (k + 1) * len / n)
}

/// Tile the sensing area into `rows x cols` overlapping boxes with rings.
pub fn propose_regions(w: usize, h: usize, cfg: &ProposalConfig) -> Result<Vec<ContactProposal>> {
    let area = sensing_area(w, h, cfg)?;
    if cfg.rows == 0 || cfg.cols == 0 || cfg.rows > area.height() || cfg.cols > area.width() {
        return domain(format!(
            "{}x{} grid does not fit a {}x{} sensing area",
            cfg.rows,
            cfg.cols,
            area.height(),
            area.width()
        ));
    }
    if cfg.ring_width_px == 0 || cfg.ring_samples < 24 {
        return domain("ring needs width >= 1 and at least 24 samples");
    }
    let mut out = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        let (ty0, ty1) = split(area.y0, area.y1, cfg.rows, r);
        for c in 0..cfg.cols {
            let (tx0, tx1) = split(area.x0, area.x1, cfg.cols, c);
            let tile = PixelBox {
                x0: tx0,
                y0: ty0,
                x1: tx1,
                y1: ty1,
            };
            let bbox = PixelBox {
                x0: tx0.saturating_sub(cfg.overlap_px),
                y0: ty0.saturating_sub(cfg.overlap_px),
                x1: (tx1 + cfg.overlap_px).min(w),
                y1: (ty1 + cfg.overlap_px).min(h),
            };
            let ring = ring_pixels(&bbox, w, h, cfg);
            if ring.len() < 24 {
                return domain(format!("box {} has only {} ring pixels", out.len(), ring.len()));
            }
            out.push(ContactProposal {
                index: out.len(),
                tile,
                bbox,
                ring,
                delta_c: 0.0,
            });
        }
    }
    Ok(out)
}

/// Evenly subsampled ring of pixels around `b`, clipped to the image.
pub fn ring_pixels(b: &PixelBox, w: usize, h: usize, cfg: &ProposalConfig) -> Vec<usize> {
    let reach = cfg.ring_offset_px + cfg.ring_width_px;
    let x0 = b.x0.saturating_sub(reach);
    let y0 = b.y0.saturating_sub(reach);
    let x1 = (b.x1 + reach).min(w);
    let y1 = (b.y1 + reach).min(h);
    let mut band = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let d = b.distance(x, y);
            if d > cfg.ring_offset_px && d <= reach {
                band.push(y * w + x);
            }
        }
    }
    if band.len() <= cfg.ring_samples {
        return band;
    }
    let n = cfg.ring_samples;
    (0..n).map(|k| band[k * band.len() / n]).collect()
}

/// Membrane coordinate of pixel index `k` in a `w x h` image spanning the rig.
pub fn pixel_uv(k: usize, w: usize, h: usize, rig: &LightRig) -> [f64; 2] {
    let (x, y) = (k % w, k / w);
    [
        x as f64 * rig.width_mm / (w - 1) as f64,
        y as f64 * rig.height_mm / (h - 1) as f64,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightEstimate {
    /// Per-light, per-channel intensity.
    pub x: Vec<[f64; 3]>,
    /// Frobenius norm of `A x - b` for the returned (clamped) estimate.
    pub residual: f64,
    pub clamped: usize,
}

/// Regularised least squares `min ||A x - b||^2 + lambda ||x||^2` per channel.
///
/// Columns of `A` are scaled to unit norm before the solve, so `lambda` acts
/// on the equilibrated problem. Negative intensities are clamped to zero.
pub fn solve_lights(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<LightEstimate> {
    if a.nrows() != b.nrows() || b.ncols() != 3 {
        return domain("observation matrix must be n x 3 and match the coefficient rows");
    }
    if !(lambda >= 0.0) {
        return domain("lambda must be >= 0");
    }
    let m = a.ncols();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    let mut ae = a.clone();
    for j in 0..m {
        ae.column_mut(j).scale_mut(scale[j]);
    }
    let svd = ae.svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let smin = sigma.min();
    if lambda == 0.0 && (a.nrows() < m || !(smin > 1e-12 * smax)) {
        return Err(Error::Solver(format!(
            "coefficient matrix is rank deficient (sigma_min/sigma_max = {:.3e}); use lambda > 0",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let u = svd.u.as_ref().expect("u computed");
    let vt = svd.v_t.as_ref().expect("v_t computed");
    let utb = u.transpose() * b;
    let mut y = DMatrix::zeros(sigma.len(), 3);
    for k in 0..sigma.len() {
        let s = sigma[k];
        let f = if s > 0.0 { s / (s * s + lambda) } else { 0.0 };
        for c in 0..3 {
            y[(k, c)] = f * utb[(k, c)];
        }
    }
    let mut x = vt.transpose() * y;
    let mut clamped = 0;
    for j in 0..m {
        for c in 0..3 {
            let v = x[(j, c)] * scale[j];
            x[(j, c)] = if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            };
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative light estimates to zero");
    }
    let residual = (a * &x - b).norm();
    Ok(LightEstimate {
        x: (0..m).map(|j| [x[(j, 0)], x[(j, 1)], x[(j, 2)]]).collect(),
        residual,
        clamped,
    })
}

/// Estimate fiber intensities from the image values at `ring` pixels.
pub fn estimate_lights(
    img: &LinearImage,
    ring: &[usize],
    rig: &LightRig,
    surface: &MembraneSurface,
    lambda: f64,
) -> Result<LightEstimate> {
    estimate_lights_with(img, ring, rig, surface, lambda, LightSolver::RidgeClamp)
}

pub fn estimate_lights_with(
    img: &LinearImage,
    ring: &[usize],
    rig: &LightRig,
    surface: &MembraneSurface,
    lambda: f64,
    solver: LightSolver,
) -> Result<LightEstimate> {
    if ring.len() < 24 {
        return domain(format!("need at least 24 ring pixels, got {}", ring.len()));
    }
    let (w, h) = (img.width, img.height);
    if let Some(&k) = ring.iter().find(|&&k| k >= w * h) {
        return domain(format!("ring pixel {k} outside the image"));
    }
    let pixels: Vec<[f64; 2]> = ring.iter().map(|&k| pixel_uv(k, w, h, rig)).collect();
    let a = build_coefficient_matrix(&pixels, rig, surface)?.to_dmatrix();
    let b = DMatrix::from_fn(ring.len(), 3, |i, c| img.data[ring[i]][c]);
    match solver {
        LightSolver::RidgeClamp => solve_lights(&a, &b, lambda),
        LightSolver::NonNegative => solve_lights_nonneg(&a, &b, lambda),
    }
}

/// Ridge least squares under `x >= 0`, per channel, on the column-equilibrated
/// matrix (Lawson-Hanson active set on the stacked system `[A; sqrt(lambda) I]`).
pub fn solve_lights_nonneg(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<LightEstimate> {
    if a.nrows() != b.nrows() || b.ncols() != 3 {
        return domain("observation matrix must be n x 3 and match the coefficient rows");
    }
    if !(lambda >= 0.0) {
        return domain("lambda must be >= 0");
    }
    let (n, m) = (a.nrows(), a.ncols());
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let c = a.column(j).norm();
            if c > 0.0 {
                1.0 / c
            } else {
                0.0
            }
        })
        .collect();
    let sl = lambda.sqrt();
    let aug = DMatrix::from_fn(n + m, m, |i, j| {
        if i < n {
            a[(i, j)] * scale[j]
        } else if i - n == j {
            sl
        } else {
            0.0
        }
    });
    let mut x = DMatrix::zeros(m, 3);
    for c in 0..3 {
        let rhs = nalgebra::DVector::from_fn(n + m, |i, _| if i < n { b[(i, c)] } else { 0.0 });
        let y = nnls(&aug, &rhs)?;
        for j in 0..m {
            x[(j, c)] = y[j] * scale[j];
        }
    }
    let residual = (a * &x - b).norm();
    Ok(LightEstimate {
        x: (0..m).map(|j| [x[(j, 0)], x[(j, 1)], x[(j, 2)]]).collect(),
        residual,
        clamped: 0,
    })
}

/// Lawson-Hanson non-negative least squares.
pub fn nnls(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>> {
    use nalgebra::DVector;
    let m = a.ncols();
    let mut x = DVector::zeros(m);
    let mut passive = vec![false; m];
    let at = a.transpose();
    let tol = 1e-12 * (a.norm() * b.norm()).max(f64::MIN_POSITIVE);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&cols);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(cols.len()));
        let mut full = DVector::zeros(m);
        for (k, &j) in cols.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };
    // A column whose unconstrained value comes back non-positive right after
    // entering is blocked until the iterate moves, which prevents cycling.
    let mut blocked = vec![false; m];
    for _outer in 0..10 * m + 10 {
        let w = &at * (b - a * &x);
        let mut pick = None;
        for j in 0..m {
            if !passive[j] && !blocked[j] && w[j] > tol && pick.is_none_or(|p: usize| w[j] > w[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else {
            return Ok(x);
        };
        passive[j] = true;
        let first = solve_passive(&passive);
        if first[j] <= 0.0 {
            passive[j] = false;
            blocked[j] = true;
            continue;
        }
        blocked.iter_mut().for_each(|b| *b = false);
        let mut s = first;
        loop {
            if (0..m).all(|i| !passive[i] || s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..m {
                if passive[i] && s[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s[i]));
                }
            }
            x += (&s - &x) * alpha;
            for i in 0..m {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
            s = solve_passive(&passive);
        }
    }
    log::warn!("non-negative least squares hit its iteration cap; returning the last feasible iterate");
    Ok(x)
}

/// [`estimate_lights_with`] followed by refits that drop ring pixels whose
/// residual exceeds three times the median; ring pixels on a contact do not
/// follow the uncontacted model.
pub fn estimate_lights_trimmed(
    img: &LinearImage,
    ring: &[usize],
    rig: &LightRig,
    surface: &MembraneSurface,
    cfg: &ProposalConfig,
) -> Result<LightEstimate> {
    let mut est = estimate_lights_with(img, ring, rig, surface, cfg.lambda, cfg.solver)?;
    if cfg.trim_passes == 0 {
        return Ok(est);
    }
    let (w, h) = (img.width, img.height);
    let pixels: Vec<[f64; 2]> = ring.iter().map(|&k| pixel_uv(k, w, h, rig)).collect();
    let a = build_coefficient_matrix(&pixels, rig, surface)?;
    let level = ring.iter().map(|&k| img.data[k].iter().sum::<f64>()).sum::<f64>() / ring.len() as f64;
    let mut keep: Vec<usize> = ring.to_vec();
    for _ in 0..cfg.trim_passes {
        let res: Vec<f64> = (0..ring.len())
            .map(|i| {
                let obs = img.data[ring[i]];
                (0..3)
                    .map(|c| {
                        let p: f64 = a.row(i).iter().zip(&est.x).map(|(a, x)| a * x[c]).sum();
                        (p - obs[c]).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let mut sorted = res.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut = 3.0 * sorted[sorted.len() / 2] + 1e-9 * level;
        let next: Vec<usize> = (0..ring.len()).filter(|&i| res[i] <= cut).map(|i| ring[i]).collect();
        if next == keep || next.len() < 48.max(ring.len() / 2) {
            break;
        }
        keep = next;
        est = estimate_lights_with(img, &keep, rig, surface, cfg.lambda, cfg.solver)?;
    }
    Ok(est)
}

/// Predicted uncontacted colours inside `bbox`: `b' = A' x`.
pub fn predict_background(
    est: &LightEstimate,
    bbox: &PixelBox,
    image_dims: (usize, usize),
    rig: &LightRig,
    surface: &MembraneSurface,
) -> Result<LinearImage> {
    let (w, h) = image_dims;
    if bbox.x1 > w || bbox.y1 > h || bbox.area() == 0 {
        return domain("box outside the image");
    }
    if est.x.len() != rig.len() {
        return domain("estimate does not match the rig");
    }
    let pixels: Vec<[f64; 2]> = bbox.pixels(w).iter().map(|&k| pixel_uv(k, w, h, rig)).collect();
    let a = build_coefficient_matrix(&pixels, rig, surface)?;
    let mut patch = LinearImage::zeros(bbox.width(), bbox.height());
    for (i, px) in patch.data.iter_mut().enumerate() {
        let row = a.row(i);
        for (j, &c) in row.iter().enumerate() {
            for ch in 0..3 {
                px[ch] += c * est.x[j][ch];
            }
        }
    }
    Ok(patch)
}

/// `sum |I - B|` over the box pixels and channels.
pub fn color_difference(img: &LinearImage, background: &LinearImage, bbox: &PixelBox) -> Result<f64> {
    if background.width != bbox.width() || background.height != bbox.height() {
        return domain("background patch does not match the box");
    }
    if bbox.x1 > img.width || bbox.y1 > img.height {
        return domain("box outside the image");
    }
    let mut s = 0.0;
    for y in 0..bbox.height() {
        for x in 0..bbox.width() {
            let a = img.get(bbox.x0 + x, bbox.y0 + y);
            let b = background.get(x, y);
            for c in 0..3 {
                s += (a[c] - b[c]).abs();
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSelection {
    pub best: usize,
    pub proposals: Vec<ContactProposal>,
}

impl ContactSelection {
    pub fn best_proposal(&self) -> &ContactProposal {
        &self.proposals[self.best]
    }

    pub fn max_delta_c(&self) -> f64 {
        self.best_proposal().delta_c
    }
}

/// Score every proposal and return the one with the largest colour residual
/// (first index on ties).
pub fn select_contact(
    img: &LinearImage,
    rig: &LightRig,
    surface: &MembraneSurface,
    cfg: &ProposalConfig,
) -> Result<ContactSelection> {
    let mut proposals = propose_regions(img.width, img.height, cfg)?;
    let scores = par::map_slice(&proposals, |p| -> Result<f64> {
        let est = estimate_lights_trimmed(img, &p.ring, rig, surface, cfg)?;
        let bg = predict_background(&est, &p.bbox, (img.width, img.height), rig, surface)?;
        color_difference(img, &bg, &p.bbox)
    });
    for (p, s) in proposals.iter_mut().zip(scores) {
        p.delta_c = s?;
    }
    let mut best = 0;
    for (k, p) in proposals.iter().enumerate() {
        if p.delta_c > proposals[best].delta_c {
            best = k;
        }
    }
    Ok(ContactSelection { best, proposals })
}

/// Proposal scores as CSV rows `index,x0,y0,x1,y1,delta_c`.
pub fn proposals_csv(sel: &ContactSelection) -> String {
    let mut out = String::from("index,x0,y0,x1,y1,delta_c,selected\n");
    for p in &sel.proposals {
        out.push_str(&format!(
            "{},{},{},{},{},{:e},{}\n",
            p.index,
            p.bbox.x0,
            p.bbox.y0,
            p.bbox.x1,
            p.bbox.y1,
            p.delta_c,
            (p.index == sel.best) as u8
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membrane::{BendParams, HeightField};
    use crate::optics::{render, Geometry};

    fn flat_image(rig: &LightRig) -> LinearImage {
        let f = HeightField::flat(rig.width_mm, rig.height_mm, 221, 81, rig.gel_thickness_mm).unwrap();
        render(&Geometry::flat(&f).unwrap(), rig).unwrap()
    }

    #[test]
    fn grid_gives_expected_box_count_and_coverage() {
        let cfg = ProposalConfig::default();
        let props = propose_regions(221, 81, &cfg).unwrap();
        assert_eq!(props.len(), 36);
        let area = sensing_area(221, 81, &cfg).unwrap();
        for y in area.y0..area.y1 {
            for x in area.x0..area.x1 {
                assert!(props.iter().any(|p| p.bbox.contains(x, y)));
            }
        }
        for p in &props {
            assert!(p.ring.len() >= 24 && p.ring.len() <= 256);
            for &k in &p.ring {
                assert!(!p.bbox.contains(k % 221, k / 221));
            }
        }
        let one = ProposalConfig { rows: 1, cols: 1, overlap_px: 0, ..cfg };
        let props = propose_regions(221, 81, &one).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].bbox, area);
        let too_many = ProposalConfig { rows: 100, ..cfg };
        assert!(propose_regions(221, 81, &too_many).is_err());
    }

    #[test]
    fn zero_image_gives_zero_estimate() {
        let rig = LightRig::reference();
        let img = LinearImage::zeros(221, 81);
        let props = propose_regions(221, 81, &ProposalConfig::default()).unwrap();
        let s = MembraneSurface::flat(rig.width_mm, rig.height_mm);
        let est = estimate_lights(&img, &props[0].ring, &rig, &s, 1e-6).unwrap();
        assert!(est.x.iter().all(|v| *v == [0.0; 3]));
        assert_eq!(est.residual, 0.0);
        let bg = predict_background(&est, &props[0].bbox, (221, 81), &rig, &s).unwrap();
        assert!(bg.data.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn uncontacted_background_is_predicted_from_ring() {
        let rig = LightRig::reference();
        let img = flat_image(&rig);
        let s = MembraneSurface::flat(rig.width_mm, rig.height_mm);
        let props = propose_regions(221, 81, &ProposalConfig::default()).unwrap();
        for p in [&props[0], &props[14], &props[35]] {
            let est = estimate_lights(&img, &p.ring, &rig, &s, 1e-9).unwrap();
            let bg = predict_background(&est, &p.bbox, (221, 81), &rig, &s).unwrap();
            let dc = color_difference(&img, &bg, &p.bbox).unwrap();
            let total: f64 = p
                .bbox
                .pixels(221)
                .iter()
                .map(|&k| img.data[k].iter().sum::<f64>())
                .sum();
            assert!(dc / total < 0.01, "box {}: {}", p.index, dc / total);
        }
    }

    #[test]
    fn color_difference_examples() {
        let mut a = LinearImage::zeros(3, 2);
        let b = LinearImage::zeros(3, 2);
        let bx = PixelBox { x0: 0, y0: 0, x1: 3, y1: 2 };
        assert_eq!(color_difference(&a, &b, &bx).unwrap(), 0.0);
        a.data[4] = [0.1, 0.0, 0.0];
        assert_eq!(color_difference(&a, &b, &bx).unwrap(), 0.1);
        let small = PixelBox { x0: 0, y0: 0, x1: 2, y1: 2 };
        assert!(color_difference(&a, &b, &small).is_err());
    }

    #[test]
    fn rank_deficient_without_lambda_errors() {
        let a = DMatrix::from_fn(30, 4, |i, j| if j < 2 { (i + 1) as f64 } else { 1.0 });
        let b = DMatrix::zeros(30, 3);
        assert!(matches!(solve_lights(&a, &b, 0.0), Err(Error::Solver(_))));
        assert!(solve_lights(&a, &b, 1e-6).is_ok());
    }

    #[test]
    fn bent_background_uses_bent_geometry() {
        let rig = LightRig::reference();
        let bend = BendParams::longitudinal(0.01);
        let f = HeightField::flat(rig.width_mm, rig.height_mm, 221, 81, rig.gel_thickness_mm).unwrap();
        let img = render(&Geometry::new(&f, &bend).unwrap(), &rig).unwrap();
        let s = MembraneSurface::new(rig.width_mm, rig.height_mm, &bend).unwrap();
        let sel = select_contact(&img, &rig, &s, &ProposalConfig::default()).unwrap();
        let total: f64 = img.data.iter().map(|p| p.iter().sum::<f64>()).sum();
        assert!(sel.max_delta_c() / total < 1e-3);
    }
}
