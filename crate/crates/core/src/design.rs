//! Fiber colour assignment search driven by the contact-region colour variance.
//!
//! Because rendering is linear in fiber intensity, every candidate image is a
//! channel placement of per-fiber basis images. The grid search goes one step
//! further: with centred basis vectors `b_j` over the contact region, the
//! variance of a candidate is `sum_{j,k same colour} <b_j, b_k> / |A|`, so each
//! candidate costs one pass over a small Gram matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::membrane::{apply_indenter, BendParams, HeightField, Indenter};
use crate::optics::{
    linear_to_srgb, pattern_string, render, render_basis, Geometry, LightColor, LightRig,
    LinearImage,
};
use crate::par;

/// Largest number of candidates the grid search will enumerate.
pub const DEFAULT_BUDGET: u128 = 2_000_000;

/// Relative gap below which two aggregate scores count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `sigma^2 = (1/|A|) sum_i ||C_i - mu||^2`, summed over channels.
pub fn contact_variance(img: &LinearImage, region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return domain("contact region is empty");
    }
    if let Some(&k) = region.iter().find(|&&k| k >= img.data.len()) {
        return domain(format!("region pixel {k} outside the image"));
    }
    let n = region.len() as f64;
    let mut mu = [0.0; 3];
    for &k in region {
        for c in 0..3 {
            mu[c] += img.data[k][c];
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut s = 0.0;
    for &k in region {
        for c in 0..3 {
            let d = img.data[k][c] - mu[c];
            s += d * d;
        }
    }
    Ok(s / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Linear,
    Srgb,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesignCandidate {
    pub colors: Vec<LightColor>,
    pub group_size: usize,
}

impl DesignCandidate {
    pub fn new(colors: Vec<LightColor>, group_size: usize) -> Result<Self> {
        if group_size == 0 || colors.is_empty() || !colors.len().is_multiple_of(group_size) {
            return domain(format!(
                "group size {group_size} does not divide {} lights",
                colors.len()
            ));
        }
        for g in colors.chunks(group_size) {
            if g.iter().any(|&c| c != g[0]) {
                return domain("assignment is not constant within groups");
            }
        }
        Ok(Self { colors, group_size })
    }

    pub fn from_pattern(s: &str) -> Result<Self> {
        Self::new(crate::optics::parse_pattern(s)?, 1)
    }

    /// Candidate number `index` in lexicographic order (group 0 most
    /// significant, R < G < B).
    pub fn from_index(index: u64, n_lights: usize, group_size: usize) -> Self {
        let groups = n_lights / group_size;
        let mut digits = vec![LightColor::R; groups];
        let mut k = index;
        for g in (0..groups).rev() {
            digits[g] = LightColor::from_index((k % 3) as usize).unwrap();
            k /= 3;
        }
        let colors = digits
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, group_size))
            .collect();
        Self { colors, group_size }
    }

    pub fn pattern(&self) -> String {
        pattern_string(&self.colors)
    }
}

/// One evaluation case: a bend state and a sphere press location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignScenario {
    pub bend: BendParams,
    pub center_mm: [f64; 2],
}

impl DesignScenario {
    /// 3 curvatures x 3 press locations along the membrane centre line.
    pub fn default_set(width_mm: f64, height_mm: f64) -> Vec<Self> {
        let kmax = std::f64::consts::FRAC_PI_2 / width_mm;
        let mut out = Vec::new();
        for k in [0.0, 0.5 * kmax, kmax] {
            for fx in [0.25, 0.5, 0.75] {
                out.push(Self {
                    bend: BendParams::longitudinal(k),
                    center_mm: [fx * width_mm, 0.5 * height_mm],
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSetup {
    pub rig: LightRig,
    pub nx: usize,
    pub ny: usize,
    pub indenter: Indenter,
    pub depth_mm: f64,
    #[serde(default)]
    pub color_space: ColorSpace,
}

impl DesignSetup {
    /// 0.5 mm pixels, radius-5 sphere pressed 1 mm.
    pub fn new(rig: LightRig) -> Self {
        let nx = (rig.width_mm / 0.5).round() as usize + 1;
        let ny = (rig.height_mm / 0.5).round() as usize + 1;
        Self {
            rig,
            nx,
            ny,
            indenter: Indenter::sphere(5.0),
            depth_mm: 1.0,
            color_space: ColorSpace::Linear,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioBasis {
    pub scenario: DesignScenario,
    pub region: Vec<usize>,
    /// `values[j][r]`: unit-intensity response of fiber `j` at region pixel `r`.
    pub values: Vec<Vec<f64>>,
    /// Gram matrix of intensity-weighted, mean-centred responses.
    gram: Vec<f64>,
    geometry: Geometry,
}

/// Per-scenario basis renders restricted to the contact region.
#[derive(Debug, Clone)]
pub struct BasisCache {
    pub setup: DesignSetup,
    pub entries: Vec<ScenarioBasis>,
}

impl BasisCache {
    pub fn build(setup: &DesignSetup, scenarios: &[DesignScenario]) -> Result<Self> {
        setup.rig.validate()?;
        let rig = &setup.rig;
        let base = HeightField::flat(rig.width_mm, rig.height_mm, setup.nx, setup.ny, rig.gel_thickness_mm)?;
        let intensities = rig.intensities();
        let entries = par::map_slice(scenarios, |sc| -> Result<ScenarioBasis> {
            let field = apply_indenter(&base, &setup.indenter, sc.center_mm, setup.depth_mm)?;
            let region: Vec<usize> = (0..field.depths().len())
                .filter(|&k| field.depths()[k] > 0.0)
                .collect();
            if region.is_empty() {
                return domain("indentation produced an empty contact region");
            }
            let geometry = Geometry::new(&field, &sc.bend)?;
            let basis = render_basis(&geometry, rig)?;
            let values: Vec<Vec<f64>> = basis
                .images
                .iter()
                .map(|img| region.iter().map(|&k| img[k]).collect())
                .collect();
            let n = region.len() as f64;
            let centred: Vec<Vec<f64>> = values
                .iter()
                .zip(&intensities)
                .map(|(v, &w)| {
                    let m = v.iter().sum::<f64>() / n;
                    v.iter().map(|x| w * (x - m)).collect()
                })
                .collect();
            let m = centred.len();
            let mut gram = vec![0.0; m * m];
            for a in 0..m {
                for b in a..m {
                    let g: f64 = centred[a].iter().zip(&centred[b]).map(|(x, y)| x * y).sum();
                    gram[a * m + b] = g;
                    gram[b * m + a] = g;
                }
            }
            Ok(ScenarioBasis {
                scenario: *sc,
                region,
                values,
                gram,
                geometry,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            setup: setup.clone(),
            entries,
        })
    }

    pub fn n_lights(&self) -> usize {
        self.setup.rig.len()
    }

    fn check(&self, cand: &DesignCandidate) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Precondition("no scenario basis has been rendered".into()));
        }
        if cand.colors.len() != self.n_lights() {
            return Err(Error::Precondition(format!(
                "candidate has {} lights, basis has {}",
                cand.colors.len(),
                self.n_lights()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignScore {
    pub per_scenario: Vec<f64>,
    pub aggregate: f64,
}

impl DesignScore {
    fn from_values(per_scenario: Vec<f64>) -> Self {
        let aggregate = per_scenario.iter().sum::<f64>() / per_scenario.len() as f64;
        Self {
            per_scenario,
            aggregate,
        }
    }
}

fn region_image(entry: &ScenarioBasis, colors: &[LightColor], intensities: &[f64]) -> LinearImage {
    let n = entry.region.len();
    let mut img = LinearImage::zeros(n, 1);
    for (r, px) in img.data.iter_mut().enumerate() {
        for j in 0..colors.len() {
            px[colors[j].channel()] += entry.values[j][r] * intensities[j];
        }
    }
    img
}

fn variance_in(img: &LinearImage, region: &[usize], space: ColorSpace) -> Result<f64> {
    match space {
        ColorSpace::Linear => contact_variance(img, region),
        ColorSpace::Srgb => {
            let mut enc = LinearImage::zeros(img.width, img.height);
            for &k in region {
                for c in 0..3 {
                    enc.data[k][c] = linear_to_srgb(img.data[k][c].clamp(0.0, 1.0))?;
                }
            }
            contact_variance(&enc, region)
        }
    }
}

/// Score through channel placement of the cached basis.
pub fn score_design(cand: &DesignCandidate, cache: &BasisCache) -> Result<DesignScore> {
    cache.check(cand)?;
    let intensities = cache.setup.rig.intensities();
    let mut per = Vec::with_capacity(cache.entries.len());
    for e in &cache.entries {
        let img = region_image(e, &cand.colors, &intensities);
        let all: Vec<usize> = (0..e.region.len()).collect();
        per.push(variance_in(&img, &all, cache.setup.color_space)?);
    }
    Ok(DesignScore::from_values(per))
}

/// Score through full renders of every scenario (oracle path).
pub fn score_design_direct(cand: &DesignCandidate, cache: &BasisCache) -> Result<DesignScore> {
    cache.check(cand)?;
    let rig = cache.setup.rig.with_colors(&cand.colors)?;
    let mut per = Vec::with_capacity(cache.entries.len());
    for e in &cache.entries {
        let img = render(&e.geometry, &rig)?;
        per.push(variance_in(&img, &e.region, cache.setup.color_space)?);
    }
    Ok(DesignScore::from_values(per))
}

/// Group-reduced Gram matrices, one per scenario.
struct GroupGram {
    groups: usize,
    mats: Vec<(f64, Vec<f64>)>,
}

impl GroupGram {
    fn new(cache: &BasisCache, group_size: usize) -> Self {
        let m = cache.n_lights();
        let groups = m / group_size;
        let mats = cache
            .entries
            .iter()
            .map(|e| {
                let mut g = vec![0.0; groups * groups];
                for a in 0..m {
                    for b in 0..m {
                        g[(a / group_size) * groups + b / group_size] += e.gram[a * m + b];
                    }
                }
                (1.0 / e.region.len() as f64, g)
            })
            .collect();
        Self { groups, mats }
    }

    fn score(&self, digits: &[u8], out: &mut [f64]) {
        let n = self.groups;
        for (s, (inv, g)) in self.mats.iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..n {
                acc += g[a * n + a];
                for b in a + 1..n {
                    if digits[a] == digits[b] {
                        acc += 2.0 * g[a * n + b];
                    }
                }
            }
            out[s] = acc * inv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Gram-matrix evaluation (linear colour space only).
    #[default]
    Fast,
    /// Channel placement of the cached basis per candidate.
    Basis,
    /// Full render per candidate and scenario.
    Direct,
}

#[derive(Debug, Clone)]
pub struct SearchTable {
    pub n_lights: usize,
    pub group_size: usize,
    pub n_scenarios: usize,
    /// `scores[k * n_scenarios + s]`.
    pub scores: Vec<f64>,
    pub aggregate: Vec<f64>,
    /// Selected candidate; listed first in the ranking.
    pub best: usize,
}

impl SearchTable {
    pub fn len(&self) -> usize {
        self.aggregate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregate.is_empty()
    }

    pub fn candidate(&self, k: usize) -> DesignCandidate {
        DesignCandidate::from_index(k as u64, self.n_lights, self.group_size)
    }

    /// Candidate indices by descending aggregate, ties in lexicographic order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            (b == self.best)
                .cmp(&(a == self.best))
                .then(
                    self.aggregate[b]
                        .partial_cmp(&self.aggregate[a])
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(a.cmp(&b))
        });
        idx
    }

    /// `assignment,s0,...,aggregate` rows sorted by descending aggregate.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.n_lights + 24 * (self.n_scenarios + 1)));
        out.push_str("assignment");
        for s in 0..self.n_scenarios {
            let _ = write!(out, ",sigma2_s{s}");
        }
        out.push_str(",aggregate\n");
        for k in self.ranking() {
            out.push_str(&self.candidate(k).pattern());
            for s in 0..self.n_scenarios {
                let _ = write!(out, ",{:e}", self.scores[k * self.n_scenarios + s]);
            }
            let _ = writeln!(out, ",{:e}", self.aggregate[k]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: DesignCandidate,
    pub best_index: usize,
    pub best_score: DesignScore,
    pub table: SearchTable,
}

/// Number of grouped assignments, `3^(n / g)`.
pub fn candidate_count(n_lights: usize, group_size: usize) -> Result<u128> {
    if group_size == 0 || !n_lights.is_multiple_of(group_size) {
        return domain(format!("group size {group_size} does not divide {n_lights} lights"));
    }
    let groups = (n_lights / group_size) as u32;
    3u128
        .checked_pow(groups)
        .ok_or(Error::Budget {
            required: u128::MAX,
            budget: DEFAULT_BUDGET,
        })
}

/// Argmax with lexicographic tie-break: a later candidate wins only if it
/// beats the current best by more than [`TIE_TOLERANCE`] relative.
pub fn argmax_lexicographic(values: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..values.len() {
        if values[k] > values[best] + TIE_TOLERANCE * values[best].abs().max(f64::MIN_POSITIVE) {
            best = k;
        }
    }
    best
}

/// Exhaustive search over all grouped colour assignments.
pub fn grid_search(
    cache: &BasisCache,
    group_size: usize,
    budget: u128,
    mode: SearchMode,
) -> Result<SearchResult> {
    if cache.entries.is_empty() {
        return Err(Error::Precondition("no scenario basis has been rendered".into()));
    }
    let n_lights = cache.n_lights();
    let count = candidate_count(n_lights, group_size)?;
    if count > budget {
        return Err(Error::Budget {
            required: count,
            budget,
        });
    }
    let mode = if mode == SearchMode::Fast && cache.setup.color_space == ColorSpace::Srgb {
        SearchMode::Basis
    } else {
        mode
    };
    let count = count as usize;
    let ns = cache.entries.len();
    let groups = n_lights / group_size;
    let gram = (mode == SearchMode::Fast).then(|| GroupGram::new(cache, group_size));
    const CHUNK: usize = 4096;
    let n_chunks = count.div_ceil(CHUNK);
    let chunks = par::map_range(n_chunks, |c| -> Result<Vec<f64>> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(count);
        let mut out = vec![0.0; (hi - lo) * ns];
        let mut digits = vec![0u8; groups];
        for k in lo..hi {
            let row = &mut out[(k - lo) * ns..(k - lo + 1) * ns];
            match (&gram, mode) {
                (Some(g), _) => {
                    let mut x = k;
                    for d in digits.iter_mut().rev() {
                        *d = (x % 3) as u8;
                        x /= 3;
                    }
                    g.score(&digits, row);
                }
                (None, SearchMode::Direct) => {
                    let cand = DesignCandidate::from_index(k as u64, n_lights, group_size);
                    row.copy_from_slice(&score_design_direct(&cand, cache)?.per_scenario);
                }
                (None, _) => {
                    let cand = DesignCandidate::from_index(k as u64, n_lights, group_size);
                    row.copy_from_slice(&score_design(&cand, cache)?.per_scenario);
                }
            }
        }
        Ok(out)
    });
    let mut scores = Vec::with_capacity(count * ns);
    for c in chunks {
        scores.extend(c?);
    }
    let aggregate: Vec<f64> = scores
        .chunks(ns)
        .map(|r| r.iter().sum::<f64>() / ns as f64)
        .collect();
    let best_index = argmax_lexicographic(&aggregate);
    let table = SearchTable {
        n_lights,
        group_size,
        n_scenarios: ns,
        scores,
        aggregate,
        best: best_index,
    };
    let best = table.candidate(best_index);
    let best_score = DesignScore::from_values(
        table.scores[best_index * ns..(best_index + 1) * ns].to_vec(),
    );
    Ok(SearchResult {
        best,
        best_index,
        best_score,
        table,
    })
}
