//! The sensing membrane: indentation height fields, surface normals and the
//! constant-curvature bending model used for proprioception data.
//!
//! Membrane coordinates `(u, v)` run over `[0, width_mm] x [0, height_mm]`.
//! At rest the membrane lies in the plane `z = 0` and its interior side (where
//! the camera and the illumination sit) is `+z`. Indentation depth is measured
//! from the rest surface toward the interior.

use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{domain, Result};

pub const DEFAULT_WIDTH_MM: f64 = 110.0;
pub const DEFAULT_HEIGHT_MM: f64 = 40.0;
pub const DEFAULT_GEL_THICKNESS_MM: f64 = 3.0;

/// Indentation depth sampled on a regular node grid.
///
/// Node `(i, j)` sits at `(i * dx, j * dy)` with `dx = width / (nx - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightField {
    width_mm: f64,
    height_mm: f64,
    nx: usize,
    ny: usize,
    gel_thickness_mm: f64,
    z_mm: Vec<f64>,
}

impl HeightField {
    pub fn flat(
        width_mm: f64,
        height_mm: f64,
        nx: usize,
        ny: usize,
        gel_thickness_mm: f64,
    ) -> Result<Self> {
        Self::from_depths(
            width_mm,
            height_mm,
            nx,
            ny,
            gel_thickness_mm,
            vec![0.0; nx.saturating_mul(ny)],
        )
    }

    pub fn from_depths(
        width_mm: f64,
        height_mm: f64,
        nx: usize,
        ny: usize,
        gel_thickness_mm: f64,
        z_mm: Vec<f64>,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return domain(format!("height field needs nx, ny >= 2 (got {nx}x{ny})"));
        }
        if !(width_mm > 0.0 && height_mm > 0.0 && gel_thickness_mm > 0.0) {
            return domain("membrane dimensions and gel thickness must be positive");
        }
        if z_mm.len() != nx * ny {
            return domain(format!(
                "depth buffer has {} cells, expected {}",
                z_mm.len(),
                nx * ny
            ));
        }
        if z_mm.iter().any(|z| !z.is_finite() || *z < 0.0) {
            return domain("depths must be finite and non-negative");
        }
        Ok(Self {
            width_mm,
            height_mm,
            nx,
            ny,
            gel_thickness_mm,
            z_mm,
        })
    }

    /// Field with the same geometry as `self` and the given depths.
    pub fn with_depths(&self, z_mm: Vec<f64>) -> Result<Self> {
        Self::from_depths(
            self.width_mm,
            self.height_mm,
            self.nx,
            self.ny,
            self.gel_thickness_mm,
            z_mm,
        )
    }

    pub fn width_mm(&self) -> f64 {
        self.width_mm
    }
    pub fn height_mm(&self) -> f64 {
        self.height_mm
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn gel_thickness_mm(&self) -> f64 {
        self.gel_thickness_mm
    }
    pub fn depths(&self) -> &[f64] {
        &self.z_mm
    }
    pub fn dx(&self) -> f64 {
        self.width_mm / (self.nx - 1) as f64
    }
    pub fn dy(&self) -> f64 {
        self.height_mm / (self.ny - 1) as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z_mm[j * self.nx + i]
    }
    pub fn max_depth(&self) -> f64 {
        self.z_mm.iter().cloned().fold(0.0, f64::max)
    }
    pub fn is_flat(&self) -> bool {
        self.z_mm.iter().all(|&z| z == 0.0)
    }
}

/// Rigid indenter shapes. Every indenter is lowered along `-z` onto the
/// membrane; its lowest point touches the rest surface at depth 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Indenter {
    Sphere {
        radius_mm: f64,
    },
    /// Regular `n_faces`-sided pyramid, apex down. `base_diameter_mm` is the
    /// circumscribed diameter of the base polygon.
    Pyramid {
        base_diameter_mm: f64,
        apex_height_mm: f64,
        n_faces: usize,
    },
    /// Flat plate with surface slope `tilt` (dz/dx, dz/dy).
    Plane {
        #[serde(default)]
        tilt: [f64; 2],
    },
}

impl Indenter {
    pub fn sphere(radius_mm: f64) -> Self {
        Indenter::Sphere { radius_mm }
    }

    pub fn hex_pyramid(base_diameter_mm: f64, apex_height_mm: f64) -> Self {
        Indenter::Pyramid {
            base_diameter_mm,
            apex_height_mm,
            n_faces: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Indenter::Sphere { radius_mm } if !(radius_mm > 0.0) => {
                domain("sphere radius must be positive")
            }
            Indenter::Pyramid {
                base_diameter_mm,
                apex_height_mm,
                n_faces,
            } => {
                if !(base_diameter_mm > 0.0 && apex_height_mm > 0.0) {
                    domain("pyramid dimensions must be positive")
                } else if n_faces < 3 {
                    domain("pyramid needs at least 3 faces")
                } else {
                    Ok(())
                }
            }
            Indenter::Plane { tilt } if !(tilt[0].is_finite() && tilt[1].is_finite()) => {
                domain("plane tilt must be finite")
            }
            _ => Ok(()),
        }
    }

    /// Height of the indenter surface above its lowest point at planar
    /// offset `(dx, dy)` from its axis.
    pub fn profile(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            Indenter::Sphere { radius_mm } => {
                let r2 = dx * dx + dy * dy;
                if r2 >= radius_mm * radius_mm {
                    f64::INFINITY
                } else {
                    radius_mm - (radius_mm * radius_mm - r2).sqrt()
                }
            }
            Indenter::Pyramid {
                base_diameter_mm,
                apex_height_mm,
                n_faces,
            } => {
                let n = n_faces as f64;
                let apothem = 0.5 * base_diameter_mm * (std::f64::consts::PI / n).cos();
                let mut gauge = f64::NEG_INFINITY;
                for k in 0..n_faces {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / n;
                    gauge = gauge.max(dx * a.cos() + dy * a.sin());
                }
                // Beyond the base the pyramid ends in a flat shoulder.
                apex_height_mm * (gauge / apothem).min(1.0)
            }
            Indenter::Plane { tilt } => tilt[0] * dx + tilt[1] * dy,
        }
    }

    /// Radius of a disc enclosing the contact region at the given depth
    /// (exact for spheres, circumscribed for pyramids, `None` for planes).
    pub fn contact_radius(&self, depth_mm: f64) -> Option<f64> {
        match *self {
            Indenter::Sphere { radius_mm } => {
                let d = depth_mm.min(radius_mm);
                Some((2.0 * radius_mm * d - d * d).max(0.0).sqrt())
            }
            Indenter::Pyramid {
                base_diameter_mm,
                apex_height_mm,
                ..
            } if depth_mm < apex_height_mm => Some(0.5 * base_diameter_mm * depth_mm / apex_height_mm),
            _ => None,
        }
    }
}

/// Press `indenter` into the membrane at `center` (mm) down to `depth_mm`.
///
/// Each cell becomes `max(existing, depth - profile)`, so repeated presses
/// compose as a union of imprints.
pub fn apply_indenter(
    field: &HeightField,
    indenter: &Indenter,
    center: [f64; 2],
    depth_mm: f64,
) -> Result<HeightField> {
    indenter.validate()?;
    if !(depth_mm >= 0.0) || !depth_mm.is_finite() {
        return domain("indentation depth must be finite and >= 0");
    }
    if !(center[0] >= 0.0
        && center[0] <= field.width_mm
        && center[1] >= 0.0
        && center[1] <= field.height_mm)
    {
        return domain(format!(
            "indenter center ({}, {}) outside the {}x{} mm membrane",
            center[0], center[1], field.width_mm, field.height_mm
        ));
    }
    let mut z = field.z_mm.clone();
    if depth_mm > 0.0 {
        for j in 0..field.ny {
            let y = field.y(j);
            for i in 0..field.nx {
                let x = field.x(i);
                let pen = depth_mm - indenter.profile(x - center[0], y - center[1]);
                let cell = &mut z[j * field.nx + i];
                if pen > *cell {
                    *cell = pen;
                }
            }
        }
    }
    field.with_depths(z)
}

/// Per-node unit surface normals, `(0, 0, 1)` on flat membrane, plus an
/// optional contact mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    nx: usize,
    ny: usize,
    normals: Vec<[f64; 3]>,
    contact: Vec<bool>,
}

impl NormalMap {
    pub fn flat(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            normals: vec![[0.0, 0.0, 1.0]; nx * ny],
            contact: vec![false; nx * ny],
        }
    }

    pub fn from_parts(
        nx: usize,
        ny: usize,
        normals: Vec<[f64; 3]>,
        contact: Vec<bool>,
    ) -> Result<Self> {
        if normals.len() != nx * ny || contact.len() != nx * ny {
            return domain("normal map buffers do not match dimensions");
        }
        Ok(Self {
            nx,
            ny,
            normals,
            contact,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }
    pub fn contact(&self) -> &[bool] {
        &self.contact
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        self.normals[j * self.nx + i]
    }
    pub fn set(&mut self, i: usize, j: usize, n: [f64; 3], in_contact: bool) {
        let k = j * self.nx + i;
        self.normals[k] = n;
        self.contact[k] = in_contact;
    }
}

pub(crate) fn normal_from_slopes(zx: f64, zy: f64) -> [f64; 3] {
    if zx == 0.0 && zy == 0.0 {
        return [0.0, 0.0, 1.0];
    }
    let inv = 1.0 / (zx * zx + zy * zy + 1.0).sqrt();
    [-zx * inv, -zy * inv, inv]
}

/// Normals of the indented surface from central differences (one-sided at
/// the border). Cells with non-zero depth are flagged as contact.
pub fn compute_normals(field: &HeightField) -> NormalMap {
    let (nx, ny) = (field.nx, field.ny);
    let (dx, dy) = (field.dx(), field.dy());
    let mut normals = Vec::with_capacity(nx * ny);
    let mut contact = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let zx = if i == 0 {
                (field.get(1, j) - field.get(0, j)) / dx
            } else if i == nx - 1 {
                (field.get(nx - 1, j) - field.get(nx - 2, j)) / dx
            } else {
                (field.get(i + 1, j) - field.get(i - 1, j)) / (2.0 * dx)
            };
            let zy = if j == 0 {
                (field.get(i, 1) - field.get(i, 0)) / dy
            } else if j == ny - 1 {
                (field.get(i, ny - 1) - field.get(i, ny - 2)) / dy
            } else {
                (field.get(i, j + 1) - field.get(i, j - 1)) / (2.0 * dy)
            };
            normals.push(normal_from_slopes(zx, zy));
            contact.push(field.get(i, j) > 0.0);
        }
    }
    NormalMap {
        nx,
        ny,
        normals,
        contact,
    }
}

/// Flat plate constraint. Points with `(p - point) . normal < 0` are
/// projected onto the plane; `normal` points into the allowed half-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPlane {
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

impl ContactPlane {
    pub fn new(point: [f64; 3], normal: [f64; 3]) -> Result<Self> {
        let len = norm(&normal);
        if !(len > 0.0) || !len.is_finite() {
            return domain("contact plane normal must be non-zero");
        }
        Ok(Self {
            point,
            normal: scale(&normal, 1.0 / len),
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        dot(&sub(p, &self.point), &self.normal)
    }

    pub fn clamp(&self, p: Point3) -> Point3 {
        let s = self.signed_distance(&p);
        if s < 0.0 {
            [
                p[0] - s * self.normal[0],
                p[1] - s * self.normal[1],
                p[2] - s * self.normal[2],
            ]
        } else {
            p
        }
    }
}

/// Constant-curvature bending of the membrane.
///
/// `kappa_long` bends along `u` (positive curls the ends toward the interior),
/// `kappa_lat` bends along `v` in the same sense.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendParams {
    #[serde(rename = "kappa_long_per_mm", default)]
    pub kappa_long: f64,
    #[serde(rename = "kappa_lat_per_mm", default)]
    pub kappa_lat: f64,
    #[serde(default)]
    pub contact_plane: Option<ContactPlane>,
}

impl BendParams {
    pub fn straight() -> Self {
        Self::default()
    }

    pub fn longitudinal(kappa_long: f64) -> Self {
        Self {
            kappa_long,
            ..Self::default()
        }
    }

    pub fn validate(&self, width_mm: f64, height_mm: f64) -> Result<()> {
        let pi = std::f64::consts::PI;
        if !self.kappa_long.is_finite() || !self.kappa_lat.is_finite() {
            return domain("curvatures must be finite");
        }
        if self.kappa_long.abs() * width_mm > pi * (1.0 + 1e-12) {
            return domain(format!(
                "|kappa_long| * length = {:.4} exceeds pi",
                self.kappa_long.abs() * width_mm
            ));
        }
        if self.kappa_lat.abs() * height_mm > pi * (1.0 + 1e-12) {
            return domain(format!(
                "|kappa_lat| * width = {:.4} exceeds pi",
                self.kappa_lat.abs() * height_mm
            ));
        }
        Ok(())
    }
}

/// Local orthonormal frame of the bent mid-surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point3,
    pub tu: Point3,
    pub tv: Point3,
    pub n: Point3,
}

impl Frame {
    /// Map a local vector `(a, b, c)` in `(tu, tv, n)` coordinates to world.
    #[inline]
    pub fn to_world(&self, v: &[f64; 3]) -> Point3 {
        [
            v[0] * self.tu[0] + v[1] * self.tv[0] + v[2] * self.n[0],
            v[0] * self.tu[1] + v[1] * self.tv[1] + v[2] * self.n[1],
            v[0] * self.tu[2] + v[1] * self.tv[2] + v[2] * self.n[2],
        ]
    }
}

/// The bent mid-surface `(u, v) -> R^3` (curvature only, no plane clamp).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembraneSurface {
    width_mm: f64,
    height_mm: f64,
    kappa_long: f64,
    kappa_lat: f64,
}

impl MembraneSurface {
    pub fn flat(width_mm: f64, height_mm: f64) -> Self {
        Self {
            width_mm,
            height_mm,
            kappa_long: 0.0,
            kappa_lat: 0.0,
        }
    }

    pub fn new(width_mm: f64, height_mm: f64, bend: &BendParams) -> Result<Self> {
        bend.validate(width_mm, height_mm)?;
        Ok(Self {
            width_mm,
            height_mm,
            kappa_long: bend.kappa_long,
            kappa_lat: bend.kappa_lat,
        })
    }

    pub fn for_field(field: &HeightField, bend: &BendParams) -> Result<Self> {
        Self::new(field.width_mm, field.height_mm, bend)
    }

    pub fn is_flat(&self) -> bool {
        self.kappa_long == 0.0 && self.kappa_lat == 0.0
    }

    pub fn width_mm(&self) -> f64 {
        self.width_mm
    }

    pub fn height_mm(&self) -> f64 {
        self.height_mm
    }

    pub fn frame(&self, u: f64, v: f64) -> Frame {
        let (cx, cz, tu, n0) = if self.kappa_long == 0.0 {
            (u, 0.0, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        } else {
            let k = self.kappa_long;
            let a = k * (u - 0.5 * self.width_mm);
            let (sa, ca) = a.sin_cos();
            (
                0.5 * self.width_mm + sa / k,
                (1.0 - ca) / k,
                [ca, 0.0, sa],
                [-sa, 0.0, ca],
            )
        };
        let (y, w, sb, cb) = if self.kappa_lat == 0.0 {
            (v, 0.0, 0.0, 1.0)
        } else {
            let l = self.kappa_lat;
            let b = l * (v - 0.5 * self.height_mm);
            let (sb, cb) = b.sin_cos();
            (0.5 * self.height_mm + sb / l, (1.0 - cb) / l, sb, cb)
        };
        let origin = [cx + w * n0[0], y, cz + w * n0[2]];
        let tv = [sb * n0[0], cb, sb * n0[2]];
        let n = [cb * n0[0], -sb, cb * n0[2]];
        Frame { origin, tu, tv, n }
    }

    pub fn point(&self, u: f64, v: f64) -> Point3 {
        self.frame(u, v).origin
    }
}

/// Triangle mesh over the membrane node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Two triangles per grid quad, vertex `(i, j)` at index `j * nx + i`.
    pub fn grid(vertices: Vec<Point3>, nx: usize, ny: usize) -> Self {
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = j * nx + i;
                let b = a + 1;
                let c = a + nx;
                let d = c + 1;
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Self {
            vertices,
            triangles,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeformedMembrane {
    pub mesh: TriMesh,
    pub cloud: PointCloud,
}

/// World position of the (indented, bent, clamped) surface at `(u, v)`.
fn surface_point(surface: &MembraneSurface, bend: &BendParams, u: f64, v: f64, depth: f64) -> Point3 {
    let f = surface.frame(u, v);
    let p = add(&f.origin, &scale(&f.n, depth));
    match &bend.contact_plane {
        Some(plane) => plane.clamp(p),
        None => p,
    }
}

/// Undented membrane sampled at `sites` under `bend`.
pub fn bent_cloud(sites: &[[f64; 2]], width_mm: f64, height_mm: f64, bend: &BendParams) -> Result<PointCloud> {
    let surface = MembraneSurface::new(width_mm, height_mm, bend)?;
    PointCloud::new(sites.iter().map(|p| surface_point(&surface, bend, p[0], p[1], 0.0)).collect())
}

/// Bend the membrane (carrying its indentation along the local normal) and
/// clamp it against the optional contact plane.
pub fn deform_membrane(field: &HeightField, bend: &BendParams) -> Result<DeformedMembrane> {
    let surface = MembraneSurface::for_field(field, bend)?;
    let mut vertices = Vec::with_capacity(field.nx * field.ny);
    for j in 0..field.ny {
        for i in 0..field.nx {
            vertices.push(surface_point(
                &surface,
                bend,
                field.x(i),
                field.y(j),
                field.get(i, j),
            ));
        }
    }
    let mesh = TriMesh::grid(vertices, field.nx, field.ny);
    let cloud = PointCloud::new(mesh.vertices.clone())?;
    Ok(DeformedMembrane { mesh, cloud })
}

/// Fixed pinhole camera looking from the interior toward the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourCamera {
    pub position_mm: [f64; 3],
    pub fov_deg: f64,
    pub resolution: usize,
}

impl ContourCamera {
    /// Camera centred over the membrane, `distance_mm` inside it.
    pub fn centered(width_mm: f64, height_mm: f64, distance_mm: f64) -> Self {
        Self {
            position_mm: [0.5 * width_mm, 0.5 * height_mm, distance_mm],
            fov_deg: 160.0,
            resolution: 256,
        }
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<[f64; 2]> {
        let rel = sub(p, &self.position_mm);
        let depth = -rel[2];
        if depth <= 1e-6 {
            return None;
        }
        let half = (0.5 * self.fov_deg).to_radians().tan();
        let r = self.resolution as f64;
        Some([
            (rel[0] / depth / half + 1.0) * 0.5 * r,
            (rel[1] / depth / half + 1.0) * 0.5 * r,
        ])
    }

    /// Filled silhouette of a mesh.
    pub fn silhouette(&self, mesh: &TriMesh) -> Mask {
        let res = self.resolution;
        let mut data = vec![false; res * res];
        let projected: Vec<Option<[f64; 2]>> =
            mesh.vertices.iter().map(|p| self.project(p)).collect();
        for tri in &mesh.triangles {
            let (Some(a), Some(b), Some(c)) =
                (projected[tri[0]], projected[tri[1]], projected[tri[2]])
            else {
                continue;
            };
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area.abs() < 1e-12 {
                continue;
            }
            let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
            let x1 = (a[0].max(b[0]).max(c[0]).ceil().min(res as f64)) as usize;
            let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
            let y1 = (a[1].max(b[1]).max(c[1]).ceil().min(res as f64)) as usize;
            for py in y0..y1 {
                let sy = py as f64 + 0.5;
                for px in x0..x1 {
                    let sx = px as f64 + 0.5;
                    let w0 = (b[0] - sx) * (c[1] - sy) - (b[1] - sy) * (c[0] - sx);
                    let w1 = (c[0] - sx) * (a[1] - sy) - (c[1] - sy) * (a[0] - sx);
                    let w2 = (a[0] - sx) * (b[1] - sy) - (a[1] - sy) * (b[0] - sx);
                    let inside = if area > 0.0 {
                        w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                    } else {
                        w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                    };
                    if inside {
                        data[py * res + px] = true;
                    }
                }
            }
        }
        Mask {
            width: res,
            height: res,
            data,
        }
    }
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Area-averaged coverage on a `size x size` grid, row-major.
    pub fn downsample(&self, size: usize) -> Result<Vec<f64>> {
        if size == 0 || !self.width.is_multiple_of(size) || !self.height.is_multiple_of(size) {
            return domain(format!(
                "cannot downsample a {}x{} mask to {size}x{size}",
                self.width, self.height
            ));
        }
        let bx = self.width / size;
        let by = self.height / size;
        let norm = 1.0 / (bx * by) as f64;
        let mut out = vec![0.0; size * size];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    out[(y / by) * size + x / bx] += norm;
                }
            }
        }
        Ok(out)
    }
}

/// Plane contact drawn per frame: the plate approaches along `-normal`
/// and pushes `depth_mm` past the first touching point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneContactSpec {
    pub normal: [f64; 3],
    pub depth_mm: [f64; 2],
}

/// One bending scenario: `frames` samples with curvatures drawn uniformly
/// from the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendScenario {
    #[serde(default)]
    pub name: String,
    pub frames: usize,
    pub kappa_long_per_mm: [f64; 2],
    #[serde(default)]
    pub kappa_lat_per_mm: [f64; 2],
    #[serde(default)]
    pub plane: Option<PlaneContactSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenarios: Vec<BendScenario>,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width_mm: f64,
    #[serde(default = "default_height")]
    pub height_mm: f64,
    #[serde(default = "default_camera_distance")]
    pub camera_distance_mm: f64,
    #[serde(default = "default_mask_resolution")]
    pub mask_resolution: usize,
    /// Nodes per mm of the mesh rasterised into the contour mask.
    #[serde(default = "default_mask_mesh_density")]
    pub mask_mesh_per_mm: f64,
}

fn default_points() -> usize {
    512
}
fn default_width() -> f64 {
    DEFAULT_WIDTH_MM
}
fn default_height() -> f64 {
    DEFAULT_HEIGHT_MM
}
fn default_camera_distance() -> f64 {
    20.0
}
fn default_mask_resolution() -> usize {
    256
}
fn default_mask_mesh_density() -> f64 {
    0.5
}

impl DatasetConfig {
    pub fn new(scenarios: Vec<BendScenario>, n_points: usize, seed: u64) -> Self {
        Self {
            scenarios,
            n_points,
            seed,
            width_mm: DEFAULT_WIDTH_MM,
            height_mm: DEFAULT_HEIGHT_MM,
            camera_distance_mm: default_camera_distance(),
            mask_resolution: default_mask_resolution(),
            mask_mesh_per_mm: default_mask_mesh_density(),
        }
    }

    /// 26 scenes of roughly 115 frames each at 4096 points: free bending
    /// sweeps at several pressures plus plate contacts from below, the side
    /// and above.
    pub fn full_scale(seed: u64) -> Self {
        let kmax = std::f64::consts::FRAC_PI_2 / DEFAULT_WIDTH_MM;
        let mut scenarios = Vec::new();
        for p in 0..8 {
            let hi = kmax * (p + 1) as f64 / 8.0;
            scenarios.push(BendScenario {
                name: format!("free-{p}"),
                frames: 115,
                kappa_long_per_mm: [0.0, hi],
                kappa_lat_per_mm: [0.0, 0.0],
                plane: None,
            });
        }
        let dirs: [(&str, [f64; 3]); 3] = [
            ("bottom-up", [0.0, 0.0, 1.0]),
            ("side", [-std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2]),
            ("top-down", [0.0, 0.0, -1.0]),
        ];
        for (d, (label, normal)) in dirs.iter().enumerate() {
            for p in 0..6 {
                let hi = kmax * (p + 1) as f64 / 6.0;
                scenarios.push(BendScenario {
                    name: format!("{label}-{p}"),
                    frames: 115,
                    kappa_long_per_mm: [0.25 * hi, hi],
                    kappa_lat_per_mm: [-0.002 * d as f64, 0.002 * d as f64],
                    plane: Some(PlaneContactSpec {
                        normal: *normal,
                        depth_mm: [0.0, 4.0],
                    }),
                });
            }
        }
        Self::new(scenarios, 4096, seed)
    }

    pub fn total_frames(&self) -> usize {
        self.scenarios.iter().map(|s| s.frames).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return domain("dataset needs at least one bend scenario");
        }
        if self.n_points == 0 {
            return domain("n_points must be >= 1");
        }
        if self.mask_resolution == 0 || !(self.mask_mesh_per_mm > 0.0) {
            return domain("mask resolution and mesh density must be positive");
        }
        for s in &self.scenarios {
            for &k in &s.kappa_long_per_mm {
                BendParams::longitudinal(k).validate(self.width_mm, self.height_mm)?;
            }
            for &k in &s.kappa_lat_per_mm {
                BendParams {
                    kappa_lat: k,
                    ..BendParams::default()
                }
                .validate(self.width_mm, self.height_mm)?;
            }
            if s.kappa_long_per_mm[0] > s.kappa_long_per_mm[1]
                || s.kappa_lat_per_mm[0] > s.kappa_lat_per_mm[1]
            {
                return domain(format!("scenario '{}' has an inverted range", s.name));
            }
            if let Some(p) = &s.plane {
                ContactPlane::new([0.0; 3], p.normal)?;
                if p.depth_mm[0] < 0.0 || p.depth_mm[0] > p.depth_mm[1] {
                    return domain(format!("scenario '{}' has a bad plane depth range", s.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BendSample {
    pub scenario: usize,
    pub bend: BendParams,
    pub mask: Mask,
    pub deformed: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BendDataset {
    /// Undeformed cloud sampled at the same membrane sites as every sample.
    pub shape_ref: PointCloud,
    pub reference_mask: Mask,
    pub samples: Vec<BendSample>,
    pub sites: Vec<[f64; 2]>,
}

impl BendDataset {
    /// `(mask, deformed, undeformed)` triples.
    pub fn triples(&self) -> impl Iterator<Item = (&Mask, &PointCloud, &PointCloud)> {
        self.samples
            .iter()
            .map(move |s| (&s.mask, &s.deformed, &self.shape_ref))
    }
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for item `(a, b)` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b.rotate_left(17))
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, range: [f64; 2]) -> f64 {
    use rand::Rng;
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Resolve a plane contact spec against the bent (unclamped) membrane.
fn place_plane(
    surface: &MembraneSurface,
    normal: [f64; 3],
    depth: f64,
    probe: &[Point3],
) -> Result<ContactPlane> {
    let plane = ContactPlane::new([0.0; 3], normal)?;
    let m = plane.normal;
    let lowest = probe
        .iter()
        .map(|p| dot(p, &m))
        .fold(f64::INFINITY, f64::min);
    let _ = surface;
    let offset = lowest + depth;
    ContactPlane::new(scale(&m, offset), m)
}

fn mask_mesh(surface: &MembraneSurface, bend: &BendParams, cfg: &DatasetConfig) -> TriMesh {
    let nx = ((cfg.width_mm * cfg.mask_mesh_per_mm).round() as usize + 1).max(2);
    let ny = ((cfg.height_mm * cfg.mask_mesh_per_mm).round() as usize + 1).max(2);
    let mut verts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let v = cfg.height_mm * j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let u = cfg.width_mm * i as f64 / (nx - 1) as f64;
            verts.push(surface_point(surface, bend, u, v, 0.0));
        }
    }
    TriMesh::grid(verts, nx, ny)
}

/// Generate `(mask, deformed cloud, shape-ref cloud)` samples for every frame
/// of every scenario. Output is a pure function of the config.
pub fn generate_bend_dataset(cfg: &DatasetConfig) -> Result<BendDataset> {
    use rand::{Rng, SeedableRng};
    cfg.validate()?;
    let mut site_rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0));
    let sites: Vec<[f64; 2]> = (0..cfg.n_points)
        .map(|_| {
            [
                site_rng.random_range(0.0..=cfg.width_mm),
                site_rng.random_range(0.0..=cfg.height_mm),
            ]
        })
        .collect();
    let flat = MembraneSurface::flat(cfg.width_mm, cfg.height_mm);
    let shape_ref = PointCloud::new(sites.iter().map(|s| flat.point(s[0], s[1])).collect())?;
    let camera = ContourCamera {
        resolution: cfg.mask_resolution,
        ..ContourCamera::centered(cfg.width_mm, cfg.height_mm, cfg.camera_distance_mm)
    };
    let reference_mask = camera.silhouette(&mask_mesh(&flat, &BendParams::default(), cfg));

    let jobs: Vec<(usize, usize)> = cfg
        .scenarios
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.frames).map(move |f| (s, f)))
        .collect();
    let results = crate::par::map_slice(&jobs, |&(s, f)| -> Result<BendSample> {
        let sc = &cfg.scenarios[s];
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + s as u64, f as u64));
        let mut bend = BendParams {
            kappa_long: uniform(&mut rng, sc.kappa_long_per_mm),
            kappa_lat: uniform(&mut rng, sc.kappa_lat_per_mm),
            contact_plane: None,
        };
        let surface = MembraneSurface::new(cfg.width_mm, cfg.height_mm, &bend)?;
        if let Some(spec) = &sc.plane {
            let depth = uniform(&mut rng, spec.depth_mm);
            let probe = mask_mesh(&surface, &bend, cfg).vertices;
            bend.contact_plane = Some(place_plane(&surface, spec.normal, depth, &probe)?);
        }
        let mesh = mask_mesh(&surface, &bend, cfg);
        let mask = camera.silhouette(&mesh);
        let deformed = PointCloud::new(
            sites
                .iter()
                .map(|p| surface_point(&surface, &bend, p[0], p[1], 0.0))
                .collect(),
        )?;
        Ok(BendSample {
            scenario: s,
            bend,
            mask,
            deformed,
        })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BendDataset {
        shape_ref,
        reference_mask,
        samples,
        sites,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
pub(crate) fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
pub(crate) fn add(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
pub(crate) fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
pub(crate) fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
