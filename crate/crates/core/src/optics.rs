//! Colour space conversion, the point-light fiber model and the renderer.
//!
//! Each fiber sits on the membrane border and shines across the gel from a
//! height of one gel thickness above its foot point. The per-pixel, per-light
//! geometric factor is
//!
//! `A_ij = cos(theta_ij) * max(0, cos(phi_ij))^alpha / max(d_ij, eps)^2`
//!
//! with `d` the pixel-to-fiber distance, `theta` the angle between the pixel
//! normal and the direction to the light and `phi` the in-plane angle between
//! the beam axis and the pixel. On a flat membrane `cos(theta) = z / sqrt(d^2 + z^2)`,
//! i.e. `theta = arctan(d / z)`. Rendering the indented surface evaluates the same
//! expression with the displaced point and its tilted normal.

use serde::{Deserialize, Serialize};

use crate::cloud::Point3;
use crate::error::{domain, Result};
use crate::membrane::{
    dot, norm, scale, sub, BendParams, HeightField, MembraneSurface, NormalMap,
    DEFAULT_GEL_THICKNESS_MM, DEFAULT_HEIGHT_MM, DEFAULT_WIDTH_MM,
};
use crate::par;

pub const SRGB_TAU1: f64 = 0.04045;
pub const SRGB_TAU2: f64 = 0.0031308;
/// Distance clamp for the inverse-square term (one fiber radius).
pub const DISTANCE_EPS_MM: f64 = 0.5;

pub fn srgb_to_linear(c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return domain(format!("sRGB value {c} outside [0, 1]"));
    }
    Ok(if c <= SRGB_TAU1 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    })
}

pub fn linear_to_srgb(c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return domain(format!("linear value {c} outside [0, 1]"));
    }
    Ok(if c <= SRGB_TAU2 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LightColor {
    R,
    G,
    B,
}

impl LightColor {
    pub const ALL: [LightColor; 3] = [LightColor::R, LightColor::G, LightColor::B];

    pub fn channel(self) -> usize {
        match self {
            LightColor::R => 0,
            LightColor::G => 1,
            LightColor::B => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            LightColor::R => 'R',
            LightColor::G => 'G',
            LightColor::B => 'B',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'R' => Some(LightColor::R),
            'G' => Some(LightColor::G),
            'B' => Some(LightColor::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Light {
    pub position_mm: [f64; 2],
    pub beam_axis: [f64; 2],
    pub color: LightColor,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightRig {
    pub lights: Vec<Light>,
    pub alpha: f64,
    pub gel_thickness_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
}

/// Order used by the reference arrangement: 6 green, 7 blue, 7 red, 4 blue.
pub const REFERENCE_PATTERN: &str = "GGGGGGBBBBBBBRRRRRRRBBBB";

impl LightRig {
    /// `n` fibers evenly spaced along the border, clockwise from the corner
    /// at the origin, each aimed along the inward edge normal.
    pub fn perimeter(
        n: usize,
        width_mm: f64,
        height_mm: f64,
        gel_thickness_mm: f64,
        alpha: f64,
        intensity: f64,
        colors: &[LightColor],
    ) -> Result<Self> {
        if n == 0 || colors.len() != n {
            return domain(format!("need one colour per light ({n} lights, {} colours)", colors.len()));
        }
        let perim = 2.0 * (width_mm + height_mm);
        let step = perim / n as f64;
        let lights = (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) * step;
                let (position_mm, beam_axis) = if s < width_mm {
                    ([s, 0.0], [0.0, 1.0])
                } else if s < width_mm + height_mm {
                    ([width_mm, s - width_mm], [-1.0, 0.0])
                } else if s < 2.0 * width_mm + height_mm {
                    ([width_mm - (s - width_mm - height_mm), height_mm], [0.0, -1.0])
                } else {
                    ([0.0, height_mm - (s - 2.0 * width_mm - height_mm)], [1.0, 0.0])
                };
                Light {
                    position_mm,
                    beam_axis,
                    color: colors[k],
                    intensity,
                }
            })
            .collect();
        let rig = Self {
            lights,
            alpha,
            gel_thickness_mm,
            width_mm,
            height_mm,
        };
        rig.validate()?;
        Ok(rig)
    }

    /// 24-fiber rig on the default membrane with the reference colours.
    pub fn reference() -> Self {
        Self::perimeter(
            24,
            DEFAULT_WIDTH_MM,
            DEFAULT_HEIGHT_MM,
            DEFAULT_GEL_THICKNESS_MM,
            2.0,
            DEFAULT_INTENSITY,
            &parse_pattern(REFERENCE_PATTERN).expect("valid pattern"),
        )
        .expect("reference rig is valid")
    }

    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    pub fn colors(&self) -> Vec<LightColor> {
        self.lights.iter().map(|l| l.color).collect()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.lights.iter().map(|l| l.intensity).collect()
    }

    pub fn with_colors(&self, colors: &[LightColor]) -> Result<Self> {
        if colors.len() != self.lights.len() {
            return domain("colour assignment length does not match the rig");
        }
        let mut rig = self.clone();
        for (l, &c) in rig.lights.iter_mut().zip(colors) {
            l.color = c;
        }
        Ok(rig)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut rig = self.clone();
        for l in &mut rig.lights {
            l.intensity *= s;
        }
        rig
    }

    pub fn validate(&self) -> Result<()> {
        if self.lights.is_empty() {
            return domain("rig has no lights");
        }
        if !(self.alpha >= 0.0) || !(self.gel_thickness_mm > 0.0) {
            return domain("alpha must be >= 0 and gel thickness > 0");
        }
        let tol = 1e-9 * (self.width_mm + self.height_mm);
        for (j, l) in self.lights.iter().enumerate() {
            if !(l.intensity >= 0.0) || !l.intensity.is_finite() {
                return domain(format!("light {j}: intensity must be finite and >= 0"));
            }
            let [x, y] = l.position_mm;
            let inside = x >= -tol && x <= self.width_mm + tol && y >= -tol && y <= self.height_mm + tol;
            let on_edge = x.abs() <= tol
                || (x - self.width_mm).abs() <= tol
                || y.abs() <= tol
                || (y - self.height_mm).abs() <= tol;
            if !(inside && on_edge) {
                return domain(format!("light {j} at ({x}, {y}) is not on the membrane border"));
            }
            let len = (l.beam_axis[0].powi(2) + l.beam_axis[1].powi(2)).sqrt();
            if (len - 1.0).abs() > 1e-9 {
                return domain(format!("light {j}: beam axis must be a unit vector"));
            }
        }
        Ok(())
    }
}

/// Fiber intensity of the reference rig. The membrane centre lands near 0.05
/// linear; pixels within a few mm of a fiber exceed 1.
pub const DEFAULT_INTENSITY: f64 = 60.0;

pub fn parse_pattern(s: &str) -> Result<Vec<LightColor>> {
    s.chars()
        .map(|c| {
            LightColor::from_letter(c)
                .ok_or_else(|| crate::Error::Domain(format!("bad colour letter '{c}'")))
        })
        .collect()
}

pub fn pattern_string(colors: &[LightColor]) -> String {
    colors.iter().map(|c| c.letter()).collect()
}

/// H x W x 3 image of linear-light values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl LinearImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn max_abs_diff(&self, other: &LinearImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect(),
        }
    }

    /// Per-pixel sRGB encoding with values clamped into [0, 1] first.
    pub fn to_srgb(&self) -> Self {
        let enc = |c: f64| linear_to_srgb(c.clamp(0.0, 1.0)).expect("clamped");
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| [enc(p[0]), enc(p[1]), enc(p[2])]).collect(),
        }
    }

    pub fn from_srgb(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for p in &self.data {
            data.push([srgb_to_linear(p[0])?, srgb_to_linear(p[1])?, srgb_to_linear(p[2])?]);
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

/// Fiber placed on a (possibly bent) membrane.
#[derive(Debug, Clone, Copy)]
struct PlacedLight {
    foot: Point3,
    pos: Point3,
    uv: [f64; 2],
    axis: [f64; 2],
}

fn place_lights(rig: &LightRig, surface: &MembraneSurface) -> Vec<PlacedLight> {
    rig.lights
        .iter()
        .map(|l| {
            let f = surface.frame(l.position_mm[0], l.position_mm[1]);
            PlacedLight {
                foot: f.origin,
                pos: [
                    f.origin[0] + rig.gel_thickness_mm * f.n[0],
                    f.origin[1] + rig.gel_thickness_mm * f.n[1],
                    f.origin[2] + rig.gel_thickness_mm * f.n[2],
                ],
                uv: l.position_mm,
                axis: l.beam_axis,
            }
        })
        .collect()
}

#[inline]
fn term(p: &Point3, n: &Point3, uv: [f64; 2], l: &PlacedLight, alpha: f64) -> f64 {
    let d = norm(&sub(p, &l.foot));
    let to_light = sub(&l.pos, p);
    let tl = norm(&to_light);
    let cos_theta = if tl > 0.0 {
        (dot(n, &to_light) / tl).max(0.0)
    } else {
        1.0
    };
    let du = [uv[0] - l.uv[0], uv[1] - l.uv[1]];
    let r = (du[0] * du[0] + du[1] * du[1]).sqrt();
    let cos_phi = if r > 0.0 {
        ((du[0] * l.axis[0] + du[1] * l.axis[1]) / r).max(0.0)
    } else {
        1.0
    };
    let beam = if alpha == 0.0 { 1.0 } else { cos_phi.powf(alpha) };
    let dc = d.max(DISTANCE_EPS_MM);
    cos_theta * beam / (dc * dc)
}

/// Geometric factor of light `j` at membrane point `pixel` on a flat membrane.
pub fn light_coefficient(pixel: [f64; 2], j: usize, rig: &LightRig) -> Result<f64> {
    light_coefficient_on(pixel, j, rig, &MembraneSurface::flat(rig.width_mm, rig.height_mm))
}

/// Same as [`light_coefficient`] on a bent membrane.
pub fn light_coefficient_on(
    pixel: [f64; 2],
    j: usize,
    rig: &LightRig,
    surface: &MembraneSurface,
) -> Result<f64> {
    check_pixel(pixel, rig)?;
    let Some(light) = rig.lights.get(j) else {
        return domain(format!("light index {j} out of range"));
    };
    let placed = place_lights(
        &LightRig {
            lights: vec![*light],
            ..rig.clone()
        },
        surface,
    )[0];
    let f = surface.frame(pixel[0], pixel[1]);
    Ok(term(&f.origin, &f.n, pixel, &placed, rig.alpha))
}

fn check_pixel(pixel: [f64; 2], rig: &LightRig) -> Result<()> {
    if !(pixel[0] >= 0.0 && pixel[0] <= rig.width_mm && pixel[1] >= 0.0 && pixel[1] <= rig.height_mm) {
        return domain(format!("pixel ({}, {}) outside the membrane", pixel[0], pixel[1]));
    }
    Ok(())
}

/// Row-major `n x m` matrix of light coefficients for a pixel list.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub pixels: Vec<[f64; 2]>,
}

impl CoefficientMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn build_coefficient_matrix(
    pixels: &[[f64; 2]],
    rig: &LightRig,
    surface: &MembraneSurface,
) -> Result<CoefficientMatrix> {
    if pixels.is_empty() {
        return domain("coefficient matrix needs at least one pixel");
    }
    for p in pixels {
        check_pixel(*p, rig)?;
    }
    let placed = place_lights(rig, surface);
    let mut data = Vec::with_capacity(pixels.len() * placed.len());
    for &p in pixels {
        let f = surface.frame(p[0], p[1]);
        for l in &placed {
            data.push(term(&f.origin, &f.n, p, l, rig.alpha));
        }
    }
    Ok(CoefficientMatrix {
        rows: pixels.len(),
        cols: placed.len(),
        data,
        pixels: pixels.to_vec(),
    })
}

/// Per-pixel world position, world normal and membrane coordinate of an
/// (indented, bent) membrane, one pixel per height-field node.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub surface: MembraneSurface,
    positions: Vec<Point3>,
    normals: Vec<Point3>,
    uv: Vec<[f64; 2]>,
}

impl Geometry {
    pub fn new(field: &HeightField, bend: &BendParams) -> Result<Self> {
        let normals = crate::membrane::compute_normals(field);
        Self::with_normals(field, &normals, bend)
    }

    pub fn flat(field: &HeightField) -> Result<Self> {
        Self::new(field, &BendParams::default())
    }

    /// Geometry from an explicit normal map (depths still taken from `field`).
    pub fn with_normals(field: &HeightField, normals: &NormalMap, bend: &BendParams) -> Result<Self> {
        if normals.nx() != field.nx() || normals.ny() != field.ny() {
            return domain("normal map does not match the height field");
        }
        let surface = MembraneSurface::for_field(field, bend)?;
        let (nx, ny) = (field.nx(), field.ny());
        let mut positions = Vec::with_capacity(nx * ny);
        let mut wn = Vec::with_capacity(nx * ny);
        let mut uv = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (u, v) = (field.x(i), field.y(j));
                let f = surface.frame(u, v);
                let z = field.get(i, j);
                positions.push(if z == 0.0 {
                    f.origin
                } else {
                    crate::membrane::add(&f.origin, &scale(&f.n, z))
                });
                let local = normals.get(i, j);
                wn.push(if local == [0.0, 0.0, 1.0] { f.n } else { f.to_world(&local) });
                uv.push([u, v]);
            }
        }
        Ok(Self {
            width: nx,
            height: ny,
            surface,
            positions,
            normals: wn,
            uv,
        })
    }

    pub fn uv(&self, k: usize) -> [f64; 2] {
        self.uv[k]
    }

    fn check(&self, rig: &LightRig) -> Result<()> {
        rig.validate()?;
        if (rig.width_mm - self.surface.width_mm()).abs() > 1e-9
            || (rig.height_mm - self.surface.height_mm()).abs() > 1e-9
        {
            return domain("rig and membrane dimensions differ");
        }
        Ok(())
    }
}

/// Per-light unit-intensity images, channel agnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBasis {
    pub width: usize,
    pub height: usize,
    /// `images[j][pixel]`.
    pub images: Vec<Vec<f64>>,
}

impl RenderBasis {
    pub fn n_lights(&self) -> usize {
        self.images.len()
    }

    /// Place every basis image into its colour channel, scaled by intensity.
    pub fn compose(&self, colors: &[LightColor], intensities: &[f64]) -> Result<LinearImage> {
        if colors.len() != self.images.len() || intensities.len() != self.images.len() {
            return domain("assignment length does not match the basis");
        }
        let mut img = LinearImage::zeros(self.width, self.height);
        for (k, px) in img.data.iter_mut().enumerate() {
            for j in 0..self.images.len() {
                px[colors[j].channel()] += self.images[j][k] * intensities[j];
            }
        }
        Ok(img)
    }

    pub fn compose_rig(&self, rig: &LightRig) -> Result<LinearImage> {
        self.compose(&rig.colors(), &rig.intensities())
    }
}

pub fn render(geom: &Geometry, rig: &LightRig) -> Result<LinearImage> {
    geom.check(rig)?;
    let placed = place_lights(rig, &geom.surface);
    let w = geom.width;
    let rows = par::map_range(geom.height, |y| {
        let mut row = vec![[0.0; 3]; w];
        for (x, px) in row.iter_mut().enumerate() {
            let k = y * w + x;
            for (j, l) in placed.iter().enumerate() {
                let a = term(&geom.positions[k], &geom.normals[k], geom.uv[k], l, rig.alpha);
                px[rig.lights[j].color.channel()] += a * rig.lights[j].intensity;
            }
        }
        row
    });
    Ok(LinearImage {
        width: w,
        height: geom.height,
        data: rows.into_iter().flatten().collect(),
    })
}

pub fn render_basis(geom: &Geometry, rig: &LightRig) -> Result<RenderBasis> {
    geom.check(rig)?;
    let placed = place_lights(rig, &geom.surface);
    let n = geom.width * geom.height;
    let images = par::map_slice(&placed, |l| {
        (0..n)
            .map(|k| term(&geom.positions[k], &geom.normals[k], geom.uv[k], l, rig.alpha))
            .collect()
    });
    Ok(RenderBasis {
        width: geom.width,
        height: geom.height,
        images,
    })
}

/// Render a height field on a flat membrane.
pub fn render_field(field: &HeightField, bend: &BendParams, rig: &LightRig) -> Result<LinearImage> {
    render(&Geometry::new(field, bend)?, rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membrane::{apply_indenter, Indenter};

    fn small_field() -> HeightField {
        HeightField::flat(110.0, 40.0, 45, 17, 3.0).unwrap()
    }

    #[test]
    fn srgb_examples() {
        assert_eq!(srgb_to_linear(0.0).unwrap(), 0.0);
        assert!((srgb_to_linear(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((srgb_to_linear(0.5).unwrap() - 0.2140).abs() < 1e-4);
        assert!((linear_to_srgb(0.2140).unwrap() - 0.5).abs() < 1e-4);
        assert!(srgb_to_linear(1.1).is_err());
        assert!(linear_to_srgb(-0.1).is_err());
    }

    #[test]
    fn srgb_is_monotone() {
        let mut prev = -1.0;
        for k in 0..=1000 {
            let v = srgb_to_linear(k as f64 / 1000.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn coefficient_on_beam_axis() {
        let rig = LightRig::reference();
        // Light 2 sits on the y = 0 edge aimed along +y.
        let l = rig.lights[2];
        let z = rig.gel_thickness_mm;
        let a = light_coefficient([l.position_mm[0], z], 2, &rig).unwrap();
        assert!((a - (0.5f64.sqrt()) / (z * z)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_at_right_angle_is_zero() {
        let rig = LightRig::reference();
        let l = rig.lights[2];
        let a = light_coefficient([l.position_mm[0] + 5.0, 0.0], 2, &rig).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn coefficient_falls_faster_than_inverse_square() {
        let rig = LightRig::reference();
        let l = rig.lights[2];
        let a1 = light_coefficient([l.position_mm[0], 15.0], 2, &rig).unwrap();
        let a2 = light_coefficient([l.position_mm[0], 30.0], 2, &rig).unwrap();
        assert!(a2 < a1 / 4.0);
    }

    #[test]
    fn single_light_render_is_coefficient_map() {
        let f = small_field();
        let mut rig = LightRig::reference();
        for (j, l) in rig.lights.iter_mut().enumerate() {
            if j != 7 {
                l.intensity = 0.0;
            }
        }
        let img = render(&Geometry::flat(&f).unwrap(), &rig).unwrap();
        let ch = rig.lights[7].color.channel();
        for j in 0..f.ny() {
            for i in 0..f.nx() {
                let a = light_coefficient([f.x(i), f.y(j)], 7, &rig).unwrap();
                let px = img.get(i, j);
                assert!((px[ch] - a * rig.lights[7].intensity).abs() < 1e-12);
                for c in 0..3 {
                    if c != ch {
                        assert_eq!(px[c], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn basis_composes_to_direct_render() {
        let f = apply_indenter(&small_field(), &Indenter::sphere(5.0), [40.0, 20.0], 1.0).unwrap();
        let bend = BendParams::longitudinal(0.01);
        let geom = Geometry::new(&f, &bend).unwrap();
        let rig = LightRig::reference();
        let basis = render_basis(&geom, &rig).unwrap();
        assert_eq!(basis.n_lights(), 24);
        let direct = render(&geom, &rig).unwrap();
        assert!(basis.compose_rig(&rig).unwrap().max_abs_diff(&direct) < 1e-12);
        let zero = render_basis(&geom, &rig.scaled(0.0)).unwrap();
        assert!(zero.compose_rig(&rig.scaled(0.0)).unwrap().data.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn intensity_scaling_is_exact() {
        let f = small_field();
        let geom = Geometry::flat(&f).unwrap();
        let rig = LightRig::reference();
        let a = render(&geom, &rig).unwrap();
        let b = render(&geom, &rig.scaled(2.0)).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            for c in 0..3 {
                assert_eq!(q[c], 2.0 * p[c]);
            }
        }
    }

    #[test]
    fn coefficient_matrix_rows() {
        let rig = LightRig::reference();
        let s = MembraneSurface::flat(110.0, 40.0);
        let m = build_coefficient_matrix(&[[30.0, 12.0]], &rig, &s).unwrap();
        for j in 0..24 {
            assert_eq!(m.get(0, j), light_coefficient([30.0, 12.0], j, &rig).unwrap());
        }
        let same = build_coefficient_matrix(&[[30.0, 12.0]; 5], &rig, &s).unwrap();
        for i in 1..5 {
            assert_eq!(same.row(i), same.row(0));
        }
        assert!(build_coefficient_matrix(&[], &rig, &s).is_err());
        assert!(build_coefficient_matrix(&[[200.0, 0.0]], &rig, &s).is_err());
    }

    #[test]
    fn rig_validation() {
        let rig = LightRig::reference();
        assert_eq!(rig.len(), 24);
        assert_eq!(pattern_string(&rig.colors()), REFERENCE_PATTERN);
        let mut bad = rig.clone();
        bad.lights[0].position_mm = [50.0, 20.0];
        assert!(bad.validate().is_err());
        let mut bad = rig.clone();
        bad.lights[0].intensity = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = rig;
        bad.alpha = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rig_roundtrips_through_toml() {
        let rig = LightRig::reference();
        let s = toml::to_string(&rig).unwrap();
        let back: LightRig = toml::from_str(&s).unwrap();
        assert_eq!(rig, back);
    }
}
