//! File formats: PFM, Middlebury `.flo`, binary PGM/PPM, the `SE3F`
//! transform-field format, KITTI 16-bit PNG readers, and scene directories.
//!
//! `SE3F` layout: magic `SE3F`, little-endian `i32` height and width, then
//! per pixel in row-major order seven little-endian `f64`: quaternion
//! `(w, x, y, z)` followed by translation `(x, y, z)`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::InverseDepthMap;
use crate::error::{Error, Result};
use crate::fieldops::{FlowField3, Se3Field};
use crate::grid::Grid;
use crate::se3::Se3Transform;
use crate::synth::{SceneSpec, SyntheticScene};

const FLO_MAGIC: f32 = 202021.25;
/// Middlebury convention: components above this mark unknown flow.
const FLO_UNKNOWN: f32 = 1e10;
const SE3F_MAGIC: &[u8; 4] = b"SE3F";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            break;
        }
        let ch = byte[0] as char;
        if ch == '#' && token.is_empty() {
            let mut skip = String::new();
            reader.read_line(&mut skip)?;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(ch);
    }
    if token.is_empty() {
        return Err(format_err("unexpected end of header"));
    }
    Ok(token)
}

fn parse<T: std::str::FromStr>(token: &str, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| format_err(format!("bad {what} '{token}'")))
}

/// Single-channel PFM, little-endian.
pub fn write_pfm(path: &Path, grid: &Grid<f32>) -> Result<()> {
    let (h, w) = grid.shape();
    let mut out = Vec::with_capacity(32 + 4 * h * w);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    // PFM stores rows bottom to top
    for r in (0..h).rev() {
        for c in 0..w {
            out.extend_from_slice(&grid.get(r, c).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `Pf` (grey) or `PF` (colour) PFM; returns the grid and channel
/// count, channels interleaved.
pub fn read_pfm_channels(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let channels = match read_token(&mut reader)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format_err(format!("not a PFM file (magic '{other}')"))),
    };
    let w: usize = parse(&read_token(&mut reader)?, "PFM width")?;
    let h: usize = parse(&read_token(&mut reader)?, "PFM height")?;
    let scale: f32 = parse(&read_token(&mut reader)?, "PFM scale")?;
    if scale == 0.0 {
        return Err(format_err("PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; 4 * w * h * channels];
    reader
        .read_exact(&mut raw)
        .map_err(|_| format_err("truncated PFM data"))?;
    let mut data = vec![0f32; w * h * channels];
    let row_len = w * channels;
    for (k, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (file_row, col) = (k / row_len, k % row_len);
        data[(h - 1 - file_row) * row_len + col] = v;
    }
    Ok((h, w, channels, data))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f32>> {
    let (h, w, channels, data) = read_pfm_channels(path)?;
    if channels != 1 {
        return Err(format_err("expected a single-channel PFM"));
    }
    Grid::from_vec(h, w, data)
}

/// Middlebury `.flo`; invalid pixels are written as unknown.
pub fn write_flo(path: &Path, uv: &Grid<[f32; 2]>, valid: &Grid<bool>) -> Result<()> {
    uv.check_shape(valid, "flow validity")?;
    let (h, w) = uv.shape();
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (f, &ok) in uv.iter().zip(valid.iter()) {
        let f = if ok { *f } else { [FLO_UNKNOWN, FLO_UNKNOWN] };
        out.extend_from_slice(&f[0].to_le_bytes());
        out.extend_from_slice(&f[1].to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<(Grid<[f32; 2]>, Grid<bool>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || bytes[..4] != FLO_MAGIC.to_le_bytes() {
        return Err(format_err("missing PIEH magic"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w < 0 || h < 0 {
        return Err(format_err("negative .flo dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(format_err(format!(
            ".flo payload is {} bytes, expected {}",
            bytes.len() - 12,
            8 * w * h
        )));
    }
    let floats: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let uv: Vec<[f32; 2]> = floats.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    let valid = uv
        .iter()
        .map(|f| f[0].abs() < 1e9 && f[1].abs() < 1e9)
        .collect();
    Ok((Grid::from_vec(h, w, uv)?, Grid::from_vec(h, w, valid)?))
}

/// `.flo` as a [`FlowField3`] with a zero inverse-depth channel.
pub fn read_flo_field(path: &Path) -> Result<FlowField3> {
    let (uv, valid) = read_flo(path)?;
    let values = uv.map(|f| Vector3::new(f[0] as f64, f[1] as f64, 0.0));
    Ok(FlowField3 { values, valid })
}

/// Binary 8-bit greyscale (`P5`).
pub fn write_pgm(path: &Path, grid: &Grid<u8>) -> Result<()> {
    let (h, w) = grid.shape();
    let mut out = Vec::with_capacity(20 + h * w);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.extend_from_slice(grid.as_slice());
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Grid<u8>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    if read_token(&mut reader)? != "P5" {
        return Err(format_err("not a binary PGM"));
    }
    let w: usize = parse(&read_token(&mut reader)?, "PGM width")?;
    let h: usize = parse(&read_token(&mut reader)?, "PGM height")?;
    let maxval: usize = parse(&read_token(&mut reader)?, "PGM maxval")?;
    if maxval > 255 {
        return Err(format_err("16-bit PGM is not supported"));
    }
    let mut data = vec![0u8; w * h];
    reader
        .read_exact(&mut data)
        .map_err(|_| format_err("truncated PGM data"))?;
    Grid::from_vec(h, w, data)
}

/// Binary RGB (`P6`).
pub fn write_ppm(path: &Path, grid: &Grid<[u8; 3]>) -> Result<()> {
    let (h, w) = grid.shape();
    let mut out = Vec::with_capacity(20 + 3 * h * w);
    write!(out, "P6\n{w} {h}\n255\n")?;
    for px in grid.iter() {
        out.extend_from_slice(px);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Grid<[u8; 3]>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    if read_token(&mut reader)? != "P6" {
        return Err(format_err("not a binary PPM"));
    }
    let w: usize = parse(&read_token(&mut reader)?, "PPM width")?;
    let h: usize = parse(&read_token(&mut reader)?, "PPM height")?;
    let _maxval: usize = parse(&read_token(&mut reader)?, "PPM maxval")?;
    let mut data = vec![0u8; 3 * w * h];
    reader
        .read_exact(&mut data)
        .map_err(|_| format_err("truncated PPM data"))?;
    Grid::from_vec(h, w, data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
}

pub fn write_se3_field(path: &Path, field: &Se3Field) -> Result<()> {
    let (h, w) = field.shape();
    let mut out = Vec::with_capacity(12 + 56 * h * w);
    out.extend_from_slice(SE3F_MAGIC);
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    for t in field.iter() {
        for v in t.to_components() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_se3_field(path: &Path) -> Result<Se3Field> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != SE3F_MAGIC {
        return Err(format_err("missing SE3F magic"));
    }
    let h = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let w = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if h < 0 || w < 0 {
        return Err(format_err("negative SE3F dimensions"));
    }
    let (h, w) = (h as usize, w as usize);
    if bytes.len() != 12 + 56 * h * w {
        return Err(format_err("SE3F payload size does not match its header"));
    }
    let transforms = bytes[12..]
        .chunks_exact(56)
        .map(|px| {
            let v: Vec<f64> = px
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let q = [v[0], v[1], v[2], v[3]];
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(format_err("SE3F pixel has a degenerate quaternion"));
            }
            // stored quaternions are already unit; keep their bits
            Ok(Se3Transform::new(
                nalgebra::UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
                    q[0], q[1], q[2], q[3],
                )),
                Vector3::new(v[4], v[5], v[6]),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Se3Field::from_grid(Grid::from_vec(h, w, transforms)?))
}

/// KITTI flow PNG: 16-bit RGB with `u = (R − 2¹⁵)/64`, `v = (G − 2¹⁵)/64`,
/// valid where `B > 0`.
pub fn read_kitti_flow_png(path: &Path) -> Result<(Grid<[f32; 2]>, Grid<bool>)> {
    let img = image::open(path)
        .map_err(|e| format_err(format!("KITTI flow PNG: {e}")))?
        .into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut uv = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for px in img.pixels() {
        let [r, g, b] = px.0;
        uv.push([
            (r as f32 - 32768.0) / 64.0,
            (g as f32 - 32768.0) / 64.0,
        ]);
        valid.push(b > 0);
    }
    Ok((Grid::from_vec(h, w, uv)?, Grid::from_vec(h, w, valid)?))
}

/// KITTI disparity PNG: 16-bit grey, `disparity = value / 256`, 0 invalid.
pub fn read_kitti_disparity_png(path: &Path) -> Result<(Grid<f32>, Grid<bool>)> {
    let img = image::open(path)
        .map_err(|e| format_err(format!("KITTI disparity PNG: {e}")))?
        .into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = img.pixels().map(|p| p.0[0]).collect();
    let disp = raw.iter().map(|&v| v as f32 / 256.0).collect();
    let valid = raw.iter().map(|&v| v > 0).collect();
    Ok((Grid::from_vec(h, w, disp)?, Grid::from_vec(h, w, valid)?))
}

pub mod scene_files {
    pub const SPEC: &str = "scene.json";
    pub const INV_DEPTH1: &str = "inv_depth1.pfm";
    pub const INV_DEPTH2: &str = "inv_depth2.pfm";
    pub const FLOW: &str = "flow.flo";
    pub const FLOW_DD: &str = "flow_dd.pfm";
    pub const LABELS: &str = "labels.pgm";
    pub const OCCLUSION: &str = "occlusion.pgm";
    pub const T_GT: &str = "t_gt.se3";
}

fn inverse_depth_to_f32(map: &InverseDepthMap) -> Grid<f32> {
    map.values().map(|&d| if InverseDepthMap::is_valid_value(d) { d as f32 } else { 0.0 })
}

/// Writes every map of `scene` into `dir`, creating it if needed.
pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    use scene_files::*;
    fs::create_dir_all(dir)?;
    let mut spec = scene.spec.clone();
    spec.intrinsics = Some(scene.intrinsics);
    let json = serde_json::to_string_pretty(&spec).map_err(|e| format_err(e.to_string()))?;
    fs::write(dir.join(SPEC), json + "\n")?;
    write_pfm(&dir.join(INV_DEPTH1), &inverse_depth_to_f32(&scene.z1))?;
    write_pfm(&dir.join(INV_DEPTH2), &inverse_depth_to_f32(&scene.z2))?;
    let uv = scene.flow_gt.values.map(|f| [f.x as f32, f.y as f32]);
    write_flo(&dir.join(FLOW), &uv, &scene.flow_gt.valid)?;
    write_pfm(&dir.join(FLOW_DD), &scene.flow_gt.values.map(|f| f.z as f32))?;
    write_pgm(&dir.join(LABELS), &scene.labels)?;
    write_pgm(
        &dir.join(OCCLUSION),
        &scene.occlusion.map(|&o| if o { 255 } else { 0 }),
    )?;
    write_se3_field(&dir.join(T_GT), &scene.t_gt)?;
    Ok(())
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

/// Loads a scene written by [`write_scene`]. Depth and flow come back at
/// `f32` precision.
pub fn read_scene(dir: &Path) -> Result<SyntheticScene> {
    use scene_files::*;
    let spec = read_scene_spec(&dir.join(SPEC))?;
    let z1 = InverseDepthMap::new(read_pfm(&dir.join(INV_DEPTH1))?.map(|&v| v as f64));
    let z2 = InverseDepthMap::new(read_pfm(&dir.join(INV_DEPTH2))?.map(|&v| v as f64));
    let (uv, valid) = read_flo(&dir.join(FLOW))?;
    let dd = read_pfm(&dir.join(FLOW_DD))?;
    uv.check_shape(&dd, "flow inverse-depth channel")?;
    let values = Grid::from_fn(uv.height(), uv.width(), |r, c| {
        let f = uv.get(r, c);
        Vector3::new(f[0] as f64, f[1] as f64, *dd.get(r, c) as f64)
    });
    let flow_gt = FlowField3 { values, valid };
    let labels = read_pgm(&dir.join(LABELS))?;
    let occlusion = read_pgm(&dir.join(OCCLUSION))?.map(|&v| v != 0);
    let t_gt = read_se3_field(&dir.join(T_GT))?;
    if (spec.height, spec.width) != z1.shape() {
        return Err(format_err("scene.json dimensions disagree with the depth maps"));
    }
    SyntheticScene::from_parts(spec, z1, z2, labels, t_gt, flow_gt, occlusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_keeps_row_order_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let g = Grid::from_fn(3, 5, |r, c| r as f32 * 10.0 + c as f32 + 0.125);
        write_pfm(&path, &g).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), g);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n5 3\n-1.0\n"));
        // first stored row is the bottom image row
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 20.125);
    }

    #[test]
    fn pfm_big_endian_and_colour() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pfm");
        let mut bytes = b"PF\n2 1\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let (h, w, ch, data) = read_pfm_channels(&path).unwrap();
        assert_eq!((h, w, ch), (1, 2, 3));
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(read_pfm(&path).is_err());
    }

    #[test]
    fn flo_header_and_unknowns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let uv = Grid::from_fn(2, 3, |r, c| [r as f32 - 0.5, c as f32 * 1.25]);
        let mut valid = Grid::filled(2, 3, true);
        *valid.get_mut(1, 2) = false;
        write_flo(&path, &uv, &valid).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        let (back, back_valid) = read_flo(&path).unwrap();
        assert_eq!(back_valid, valid);
        for i in 0..5 {
            assert_eq!(back[i], uv[i]);
        }
        fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(read_flo(&path), Err(Error::Format(_))));
    }

    #[test]
    fn se3_field_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.se3");
        let field = Se3Field::from_grid(Grid::from_fn(2, 3, |r, c| {
            Se3Transform::exp(&crate::se3::Twist::from_slice(&[
                0.1 * r as f64,
                -0.3,
                c as f64,
                0.2,
                -0.1 * c as f64,
                0.05,
            ]))
        }));
        write_se3_field(&path, &field).unwrap();
        let back = read_se3_field(&path).unwrap();
        for (a, b) in field.iter().zip(back.iter()) {
            assert_eq!(a.to_components(), b.to_components());
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SE3F");
        assert_eq!(bytes.len(), 12 + 6 * 56);
    }

    #[test]
    fn pgm_ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::from_fn(4, 3, |r, c| (r * 3 + c) as u8 * 20);
        write_pgm(&dir.path().join("a.pgm"), &g).unwrap();
        assert_eq!(read_pgm(&dir.path().join("a.pgm")).unwrap(), g);
        let rgb = Grid::from_fn(2, 2, |r, c| [r as u8, c as u8, 200]);
        write_ppm(&dir.path().join("a.ppm"), &rgb).unwrap();
        assert_eq!(read_ppm(&dir.path().join("a.ppm")).unwrap(), rgb);
    }

    #[test]
    fn kitti_png_readers() {
        let dir = tempfile::tempdir().unwrap();
        let flow_path = dir.path().join("flow.png");
        let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([32768 + 64, 32768 - 128, 1]));
        img.put_pixel(1, 0, image::Rgb([32768, 32768, 0]));
        img.save(&flow_path).unwrap();
        let (uv, valid) = read_kitti_flow_png(&flow_path).unwrap();
        assert_eq!(uv[0], [1.0, -2.0]);
        assert_eq!(valid.as_slice(), &[true, false]);

        let disp_path = dir.path().join("disp.png");
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(2, 1);
        img.put_pixel(0, 0, image::Luma([256 * 40 + 128]));
        img.save(&disp_path).unwrap();
        let (d, valid) = read_kitti_disparity_png(&disp_path).unwrap();
        assert_eq!(d[0], 40.5);
        assert_eq!(valid.as_slice(), &[true, false]);
    }
}
