//! File formats: PNG images (sRGB, 16-bit normals and depth, 1-bit masks),
//! raw linear dumps and ASCII PLY meshes.

use std::io::{BufRead, Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::membrane::{BendDataset, BendParams, BendSample, ContactPlane, HeightField, Mask, NormalMap, TriMesh};
use crate::neural::Checkpoint;
use crate::optics::{linear_to_srgb, LinearImage};

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn png_err(e: impl std::fmt::Display) -> Error {
    bad(format!("png: {e}"))
}

fn encode_png(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(data).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8]) -> Result<Decoded> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut data = vec![0; reader.output_buffer_size().ok_or_else(|| bad("png too large"))?];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Precondition(format!("{} does not exist", path.display())));
    }
    Ok(std::fs::read(path)?)
}

/// 8-bit sRGB PNG of `exposure * image`, clipped to [0, 1].
pub fn srgb_png_bytes(img: &LinearImage, exposure: f64) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(3 * img.data.len());
    for px in &img.data {
        for &c in px {
            let v = linear_to_srgb((c * exposure).clamp(0.0, 1.0))?;
            data.push((v * 255.0).round() as u8);
        }
    }
    encode_png(img.width, img.height, ColorType::Rgb, BitDepth::Eight, &data)
}

pub fn write_srgb_png(path: &Path, img: &LinearImage, exposure: f64) -> Result<()> {
    write_file(path, &srgb_png_bytes(img, exposure)?)
}

fn quantize16(v: f64) -> [u8; 2] {
    ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()
}

fn unquantize16(b: &[u8]) -> f64 {
    u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0
}

/// 16-bit RGB PNG with each component mapped from [-1, 1] to [0, 65535].
pub fn normal_png_bytes(normals: &NormalMap) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(6 * normals.normals().len());
    for n in normals.normals() {
        for &c in n {
            data.extend_from_slice(&quantize16(0.5 * (c + 1.0)));
        }
    }
    encode_png(normals.nx(), normals.ny(), ColorType::Rgb, BitDepth::Sixteen, &data)
}

/// Decoded normals (not renormalised) as `(width, height, normals)`.
pub fn read_normal_png(bytes: &[u8]) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let d = decode_png(bytes)?;
    if d.color != ColorType::Rgb || d.depth != BitDepth::Sixteen {
        return Err(bad("normal maps must be 16-bit RGB"));
    }
    let normals = d
        .data
        .chunks_exact(6)
        .map(|c| {
            [
                2.0 * unquantize16(&c[0..2]) - 1.0,
                2.0 * unquantize16(&c[2..4]) - 1.0,
                2.0 * unquantize16(&c[4..6]) - 1.0,
            ]
        })
        .collect();
    Ok((d.width, d.height, normals))
}

pub fn write_normal_png(path: &Path, normals: &NormalMap) -> Result<()> {
    write_file(path, &normal_png_bytes(normals)?)
}

/// 16-bit grayscale PNG with depth mapped from [0, full_scale_mm] to [0, 65535].
pub fn depth_png_bytes(field: &HeightField, full_scale_mm: f64) -> Result<Vec<u8>> {
    if !(full_scale_mm > 0.0) {
        return Err(Error::Domain("depth full scale must be positive".into()));
    }
    let data: Vec<u8> = field.depths().iter().flat_map(|z| quantize16(z / full_scale_mm)).collect();
    encode_png(field.nx(), field.ny(), ColorType::Grayscale, BitDepth::Sixteen, &data)
}

pub fn write_depth_png(path: &Path, field: &HeightField, full_scale_mm: f64) -> Result<()> {
    write_file(path, &depth_png_bytes(field, full_scale_mm)?)
}

/// 1-bit grayscale PNG, white = inside.
pub fn mask_png_bytes(mask: &Mask) -> Result<Vec<u8>> {
    let stride = mask.width.div_ceil(8);
    let mut data = vec![0u8; stride * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.data[y * mask.width + x] {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode_png(mask.width, mask.height, ColorType::Grayscale, BitDepth::One, &data)
}

pub fn read_mask_png(bytes: &[u8]) -> Result<Mask> {
    let d = decode_png(bytes)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::One {
        return Err(bad("masks must be 1-bit grayscale"));
    }
    let stride = d.width.div_ceil(8);
    let mut data = Vec::with_capacity(d.width * d.height);
    for y in 0..d.height {
        for x in 0..d.width {
            data.push(d.data[y * stride + x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(Mask {
        width: d.width,
        height: d.height,
        data,
    })
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    write_file(path, &mask_png_bytes(mask)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    read_mask_png(&read_file(path)?)
}

const LINEAR_MAGIC: &str = "gelsim-linear 1";

/// Text header (`width`, `height`) then little-endian f64 RGB triples.
pub fn linear_raw_bytes(img: &LinearImage) -> Vec<u8> {
    let mut out = format!("{LINEAR_MAGIC}\nwidth {}\nheight {}\nend\n", img.width, img.height).into_bytes();
    for px in &img.data {
        for c in px {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn read_linear_raw(bytes: &[u8]) -> Result<LinearImage> {
    let mut cur = Cursor::new(bytes);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if cur.read_line(&mut line)? == 0 {
            return Err(bad("linear dump header is not terminated"));
        }
        let line = line.trim_end().to_string();
        if line == "end" {
            break;
        }
        header.push(line);
    }
    if header.first().map(String::as_str) != Some(LINEAR_MAGIC) {
        return Err(bad("not a linear image dump"));
    }
    let field = |key: &str| -> Result<usize> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|v| v.trim().parse().ok()))
            .ok_or_else(|| bad(format!("linear dump lacks '{key}'")))
    };
    let (width, height) = (field("width ")?, field("height ")?);
    let payload = &bytes[cur.position() as usize..];
    if payload.len() != 24 * width * height {
        return Err(bad(format!("linear dump payload is {} bytes, expected {}", payload.len(), 24 * width * height)));
    }
    let data = payload
        .chunks_exact(24)
        .map(|c| {
            let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok(LinearImage { width, height, data })
}

pub fn write_linear_raw(path: &Path, img: &LinearImage) -> Result<()> {
    write_file(path, &linear_raw_bytes(img))
}

pub fn read_linear(path: &Path) -> Result<LinearImage> {
    read_linear_raw(&read_file(path)?)
}

/// Triangulate the height field over pixels with positive depth; a quad is
/// kept when all four corners are in contact. Vertices are `(x, y, depth)`.
pub fn contact_mesh(field: &HeightField) -> TriMesh {
    let (nx, ny) = (field.nx(), field.ny());
    let mut index = vec![usize::MAX; nx * ny];
    let mut vertices: Vec<Point3> = Vec::new();
    let inside = |i: usize, j: usize| field.get(i, j) > 0.0;
    for j in 0..ny {
        for i in 0..nx {
            if inside(i, j) {
                index[j * nx + i] = vertices.len();
                vertices.push([field.x(i), field.y(j), field.get(i, j)]);
            }
        }
    }
    let mut triangles = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let q = [
                index[j * nx + i],
                index[j * nx + i + 1],
                index[(j + 1) * nx + i],
                index[(j + 1) * nx + i + 1],
            ];
            if q.iter().all(|&v| v != usize::MAX) {
                triangles.push([q[0], q[1], q[3]]);
                triangles.push([q[0], q[3], q[2]]);
            }
        }
    }
    TriMesh { vertices, triangles }
}

pub fn ply_bytes(mesh: &TriMesh) -> Vec<u8> {
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .expect("write to memory");
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", v[0], v[1], v[2]).expect("write to memory");
    }
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).expect("write to memory");
    }
    out
}

pub fn write_ply(path: &Path, mesh: &TriMesh) -> Result<()> {
    write_file(path, &ply_bytes(mesh))
}

/// Vertex and face counts from an ASCII PLY header.
pub fn ply_counts(bytes: &[u8]) -> Result<(usize, usize)> {
    let text = std::str::from_utf8(bytes).map_err(|_| bad("ply is not UTF-8"))?;
    let count = |name: &str| -> Result<usize> {
        text.lines()
            .take_while(|l| *l != "end_header")
            .find_map(|l| l.strip_prefix(name).and_then(|v| v.trim().parse().ok()))
            .ok_or_else(|| bad(format!("ply lacks '{name}'")))
    };
    Ok((count("element vertex ")?, count("element face ")?))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

fn mask_name(i: usize) -> String {
    format!("{i:05}.png")
}

fn flatten(points: &[Point3]) -> impl Iterator<Item = f64> + '_ {
    points.iter().flatten().copied()
}

fn unflatten(v: &[f64]) -> Result<Vec<Point3>> {
    if !v.len().is_multiple_of(3) {
        return Err(bad("point tensor holds a partial point"));
    }
    Ok(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// `dir/clouds.ckpt` (sites, shape-ref, clouds, bends), `dir/masks/*.png`
/// and `dir/reference_mask.png`.
pub fn save_bend_dataset(dir: &Path, data: &BendDataset) -> Result<()> {
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut clouds = Vec::new();
    let mut bends = Vec::new();
    for s in &data.samples {
        clouds.extend(flatten(s.deformed.points()));
        let plane = s.bend.contact_plane;
        bends.extend([s.scenario as f64, s.bend.kappa_long, s.bend.kappa_lat, plane.is_some() as u8 as f64]);
        let p = plane.unwrap_or(ContactPlane { point: [0.0; 3], normal: [0.0, 0.0, 1.0] });
        bends.extend(p.point.iter().chain(&p.normal));
    }
    let ck = Checkpoint::new("bend-dataset")
        .with_meta("samples", data.samples.len())
        .with_meta("n_points", data.shape_ref.len())
        .with_tensor("sites", data.sites.iter().flatten().copied().collect())
        .with_tensor("shape_ref", flatten(data.shape_ref.points()).collect())
        .with_tensor("clouds", clouds)
        .with_tensor("bends", bends);
    ck.save(&dir.join("clouds.ckpt"))?;
    write_mask_png(&dir.join("reference_mask.png"), &data.reference_mask)?;
    for (i, s) in data.samples.iter().enumerate() {
        write_mask_png(&dir.join("masks").join(mask_name(i)), &s.mask)?;
    }
    Ok(())
}

pub fn load_bend_dataset(dir: &Path) -> Result<BendDataset> {
    let ck = Checkpoint::load(&dir.join("clouds.ckpt"))?;
    if ck.kind != "bend-dataset" {
        return Err(bad(format!("{} is not a bend dataset", dir.display())));
    }
    let n: usize = ck.meta_parse("samples")?;
    let np: usize = ck.meta_parse("n_points")?;
    let sites_flat = ck.tensor("sites")?;
    if sites_flat.len() != 2 * np {
        return Err(bad("site tensor length does not match n_points"));
    }
    let sites = sites_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let shape_ref = PointCloud::new(unflatten(ck.tensor("shape_ref")?)?)?;
    let clouds = ck.tensor("clouds")?;
    let bends = ck.tensor("bends")?;
    if clouds.len() != n * np * 3 || bends.len() != n * 10 {
        return Err(bad("dataset tensors do not match the sample count"));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let b = &bends[10 * i..10 * i + 10];
        let contact_plane = (b[3] != 0.0).then(|| ContactPlane {
            point: [b[4], b[5], b[6]],
            normal: [b[7], b[8], b[9]],
        });
        samples.push(BendSample {
            scenario: b[0] as usize,
            bend: BendParams {
                kappa_long: b[1],
                kappa_lat: b[2],
                contact_plane,
            },
            mask: read_mask(&dir.join("masks").join(mask_name(i)))?,
            deformed: PointCloud::new(unflatten(&clouds[3 * np * i..3 * np * (i + 1)])?)?,
        });
    }
    Ok(BendDataset {
        shape_ref,
        reference_mask: read_mask(&dir.join("reference_mask.png"))?,
        samples,
        sites,
    })
}
