//! Readers and writers for KITTI velodyne scans, `label_2` object lines,
//! calibration files, and binary PPM/PGM images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{self, Mat3, Mat34};
use crate::numerics::ImageGrid;
use crate::scalar::Scalar;

/// Stereo baseline used when a calibration file carries no `P3` line.
pub const DEFAULT_BASELINE_M: f64 = 0.54;

/// Fixed-point scale of 16-bit depth PGMs, counts per meter.
pub const DEPTH_PGM_SCALE: f64 = 256.0;

/// Number of bytes per velodyne point (`4 x f32`).
pub const POINT_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub intensity: T,
}

impl<T: Scalar> LidarPoint<T> {
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

/// LiDAR returns in the sensor frame (x forward, y left, z up), meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T> {
    pub points: Vec<LidarPoint<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<LidarPoint<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parses a velodyne `.bin` scan: consecutive little-endian `f32` quadruples.
pub fn read_point_cloud<T: Scalar>(bytes: &[u8]) -> Result<PointCloud<T>> {
    if !bytes.len().is_multiple_of(POINT_STRIDE) {
        return Err(Error::ByteOffset {
            offset: bytes.len() - bytes.len() % POINT_STRIDE,
            reason: format!("trailing {} bytes do not form a point", bytes.len() % POINT_STRIDE),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_STRIDE);
    for (i, chunk) in bytes.chunks_exact(POINT_STRIDE).enumerate() {
        let f = |k: usize| f32::from_le_bytes([chunk[4 * k], chunk[4 * k + 1], chunk[4 * k + 2], chunk[4 * k + 3]]);
        let vals = [f(0), f(1), f(2), f(3)];
        if let Some(k) = vals[..3].iter().position(|v| !v.is_finite()) {
            return Err(Error::ByteOffset {
                offset: i * POINT_STRIDE + 4 * k,
                reason: "non-finite coordinate".into(),
            });
        }
        let c = |v: f32| T::lit(v as f64);
        points.push(LidarPoint::new(c(vals[0]), c(vals[1]), c(vals[2]), c(vals[3])));
    }
    Ok(PointCloud { points })
}

/// Serializes a cloud in velodyne `.bin` layout.
pub fn write_point_cloud<T: Scalar>(pc: &PointCloud<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.len() * POINT_STRIDE);
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// One line of a KITTI `label_2` file. Location and rotation are in the
/// rectified camera frame; `location` is the bottom-face center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel<T> {
    pub class_name: String,
    pub truncated: T,
    pub occluded: i32,
    pub alpha: T,
    /// left, top, right, bottom in pixels.
    pub bbox2d: [T; 4],
    /// height, width, length in meters.
    pub dimensions: [T; 3],
    pub location: [T; 3],
    pub rotation_y: T,
    /// Present on detection outputs only.
    pub score: Option<T>,
}

impl<T: Scalar> ObjectLabel<T> {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == "DontCare"
    }
}

const LABEL_FIELDS: usize = 15;

/// Parses one label line; an optional 16th score field is ignored.
pub fn parse_label_line<T: Scalar>(line: &str) -> Result<ObjectLabel<T>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < LABEL_FIELDS {
        return Err(Error::Field {
            index: fields.len() + 1,
            reason: format!("expected at least {LABEL_FIELDS} fields, found {}", fields.len()),
        });
    }
    // 1-based field numbers in error messages.
    let num = |i: usize| -> Result<T> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(T::lit)
            .ok_or_else(|| Error::Field {
                index: i + 1,
                reason: format!("not a finite number: {:?}", fields[i]),
            })
    };
    let occluded = fields[2].parse::<i32>().map_err(|_| Error::Field {
        index: 3,
        reason: format!("not an integer: {:?}", fields[2]),
    })?;
    let label = ObjectLabel {
        class_name: fields[0].to_string(),
        truncated: num(1)?,
        occluded,
        alpha: num(3)?,
        bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: None,
    };
    // DontCare rows carry sentinel values and are filtered downstream.
    if !label.is_dont_care() {
        if let Some(k) = label.dimensions.iter().position(|&d| d < T::zero()) {
            return Err(Error::Field {
                index: 9 + k + 1,
                reason: "negative dimension".into(),
            });
        }
        let pi = T::PI() + T::lit(1e-6);
        if label.rotation_y.abs() > pi {
            return Err(Error::Field {
                index: 15,
                reason: "rotation_y outside [-pi, pi]".into(),
            });
        }
    }
    Ok(label)
}

/// Parses a whole label file, skipping blank lines.
pub fn parse_label_file<T: Scalar>(text: &str) -> Result<Vec<ObjectLabel<T>>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_label_line).collect()
}

/// Formats a label as a KITTI line with two decimals; the score is appended
/// as a 16th field when present.
pub fn format_label_line<T: Scalar>(label: &ObjectLabel<T>) -> String {
    let f = |v: T| format!("{:.2}", v.as_f64());
    let mut parts = vec![
        label.class_name.clone(),
        f(label.truncated),
        label.occluded.to_string(),
        f(label.alpha),
    ];
    parts.extend(label.bbox2d.iter().map(|&v| f(v)));
    parts.extend(label.dimensions.iter().map(|&v| f(v)));
    parts.extend(label.location.iter().map(|&v| f(v)));
    parts.push(f(label.rotation_y));
    if let Some(s) = label.score {
        parts.push(format!("{:.4}", s.as_f64()));
    }
    parts.join(" ")
}

/// Camera/LiDAR calibration for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration<T> {
    pub p2: Mat34<T>,
    pub p3: Option<Mat34<T>>,
    pub r0_rect: Mat3<T>,
    pub tr_velo_to_cam: Mat34<T>,
    pub focal: T,
    pub baseline: T,
}

impl<T: Scalar> Calibration<T> {
    /// Identity extrinsics with a pinhole `P2` of focal `f` and principal
    /// point `(cx, cy)`.
    pub fn pinhole(focal: T, cx: T, cy: T, baseline: T) -> Self {
        let z = T::zero();
        Self {
            p2: [[focal, z, cx, z], [z, focal, cy, z], [z, z, T::one(), z]],
            p3: None,
            r0_rect: mat::identity3(),
            tr_velo_to_cam: mat::identity34(),
            focal,
            baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > T::zero()) {
            return Err(Error::Calibration(format!("focal must be positive, got {}", self.focal)));
        }
        if !(self.baseline > T::zero()) {
            return Err(Error::Calibration(format!("baseline must be positive, got {}", self.baseline)));
        }
        let rtr = mat::mul33(&mat::transpose3(&self.r0_rect), &self.r0_rect);
        let mut worst = T::zero();
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let e = if i == j { T::one() } else { T::zero() };
                worst = worst.max((v - e).abs());
            }
        }
        if !(worst < T::lit(1e-3)) {
            return Err(Error::Calibration(format!("R0_rect is not orthonormal (deviation {worst})")));
        }
        Ok(())
    }
}

fn calib_values<T: Scalar>(text: &str, key: &str, count: usize) -> Result<Option<Vec<T>>> {
    for line in text.lines() {
        let Some((k, rest)) = line.split_once(':') else { continue };
        if k.trim() != key {
            continue;
        }
        let vals: Vec<T> = rest
            .split_whitespace()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Key(key.to_string()))?;
        if vals.len() != count {
            return Err(Error::Key(key.to_string()));
        }
        return Ok(Some(vals));
    }
    Ok(None)
}

fn to34<T: Scalar>(v: &[T]) -> Mat34<T> {
    let mut m = [[T::zero(); 4]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row.copy_from_slice(&v[4 * i..4 * i + 4]);
    }
    m
}

/// Parses a calibration file using [`DEFAULT_BASELINE_M`] when `P3` is absent.
pub fn parse_calib<T: Scalar>(text: &str) -> Result<Calibration<T>> {
    parse_calib_with_baseline(text, T::lit(DEFAULT_BASELINE_M))
}

/// Parses `KEY: v1 v2 ...` lines. Requires `P2`, `R0_rect` and
/// `Tr_velo_to_cam`; `P3` is optional and, when present, fixes the baseline.
pub fn parse_calib_with_baseline<T: Scalar>(text: &str, default_baseline: T) -> Result<Calibration<T>> {
    let require = |key: &str, n: usize| calib_values::<T>(text, key, n)?.ok_or_else(|| Error::Key(key.to_string()));
    let p2 = to34(&require("P2", 12)?);
    let r0 = require("R0_rect", 9)?;
    let tr = to34(&require("Tr_velo_to_cam", 12)?);
    let p3 = calib_values::<T>(text, "P3", 12)?.map(|v| to34(&v));
    let r0_rect = [[r0[0], r0[1], r0[2]], [r0[3], r0[4], r0[5]], [r0[6], r0[7], r0[8]]];
    let focal = p2[0][0];
    let baseline = match &p3 {
        // P[0,3] = -f * t_x for each rectified camera.
        Some(p3) => (p2[0][3] - p3[0][3]) / focal,
        None => default_baseline,
    };
    let calib = Calibration {
        p2,
        p3,
        r0_rect,
        tr_velo_to_cam: tr,
        focal,
        baseline,
    };
    calib.validate()?;
    Ok(calib)
}

/// Formats a calibration file readable by [`parse_calib`].
pub fn format_calib<T: Scalar>(calib: &Calibration<T>) -> String {
    let join = |vals: &mut dyn Iterator<Item = T>| vals.map(|v| format!("{:e}", v.as_f64())).collect::<Vec<_>>().join(" ");
    let mut out = format!("P2: {}\n", join(&mut calib.p2.iter().flatten().copied()));
    if let Some(p3) = &calib.p3 {
        out += &format!("P3: {}\n", join(&mut p3.iter().flatten().copied()));
    }
    out += &format!("R0_rect: {}\n", join(&mut calib.r0_rect.iter().flatten().copied()));
    out += &format!("Tr_velo_to_cam: {}\n", join(&mut calib.tr_velo_to_cam.iter().flatten().copied()));
    out
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Format("truncated image header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(Error::Format(format!(
            "unsupported magic number {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated image header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed image header at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        data_offset: pos + 1,
    })
}

fn read_pnm_raw(bytes: &[u8]) -> Result<(usize, usize, usize, usize, Vec<u32>)> {
    let h = parse_pnm_header(bytes)?;
    let channels = if &h.magic == b"P6" { 3 } else { 1 };
    let bytes_per = match (h.magic, h.maxval) {
        (_, 255) => 1,
        (m, 65535) if &m == b"P5" => 2,
        _ => return Err(Error::Format(format!("unsupported maxval {}", h.maxval))),
    };
    let n = h.width * h.height * channels;
    let payload = &bytes[h.data_offset..];
    if payload.len() < n * bytes_per {
        return Err(Error::Format(format!(
            "truncated payload: expected {} bytes, found {}",
            n * bytes_per,
            payload.len()
        )));
    }
    let samples = if bytes_per == 1 {
        payload[..n].iter().map(|&b| b as u32).collect()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    Ok((h.height, h.width, channels, h.maxval, samples))
}

/// Reads a binary PPM (P6, 8-bit) or PGM (P5, 8/16-bit) with samples
/// normalized to `[0, 1]`.
pub fn read_image<T: Scalar>(bytes: &[u8]) -> Result<ImageGrid<T>> {
    let (h, w, c, maxval, samples) = read_pnm_raw(bytes)?;
    let scale = T::from_usize_lossy(maxval);
    let data = samples.into_iter().map(|s| T::lit(s as f64) / scale).collect();
    ImageGrid::new(h, w, c, data)
}

fn quantize<T: Scalar>(v: T, maxval: u32) -> u32 {
    let scaled = (v.as_f64().clamp(0.0, 1.0) * maxval as f64 + 0.5).floor();
    scaled as u32
}

fn pnm_header(magic: &str, w: usize, h: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes()
}

/// Writes a 3-channel grid as an 8-bit P6 PPM (round half up).
pub fn write_ppm<T: Scalar>(img: &ImageGrid<T>) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Format(format!("PPM needs 3 channels, got {}", img.channels)));
    }
    let mut out = pnm_header("P6", img.width, img.height, 255);
    out.extend(img.data.iter().map(|&v| quantize(v, 255) as u8));
    Ok(out)
}

/// Writes a single-channel grid as a P5 PGM with 8 or 16 bits per sample.
pub fn write_pgm<T: Scalar>(img: &ImageGrid<T>, sixteen_bit: bool) -> Result<Vec<u8>> {
    if img.channels != 1 {
        return Err(Error::Format(format!("PGM needs 1 channel, got {}", img.channels)));
    }
    let maxval = if sixteen_bit { 65535 } else { 255 };
    let mut out = pnm_header("P5", img.width, img.height, maxval);
    for &v in &img.data {
        let q = quantize(v, maxval);
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

/// Reads a 16-bit depth PGM (256 counts per meter; 0 marks missing).
pub fn read_depth_pgm<T: Scalar>(bytes: &[u8]) -> Result<ImageGrid<T>> {
    let (h, w, c, maxval, samples) = read_pnm_raw(bytes)?;
    if c != 1 || maxval != 65535 {
        return Err(Error::Format("depth maps must be 16-bit P5".into()));
    }
    let scale = T::lit(DEPTH_PGM_SCALE);
    ImageGrid::new(h, w, 1, samples.into_iter().map(|s| T::lit(s as f64) / scale).collect())
}

/// Writes depth in meters as a 16-bit PGM, saturating at 65535 counts.
pub fn write_depth_pgm<T: Scalar>(depth: &ImageGrid<T>) -> Result<Vec<u8>> {
    if depth.channels != 1 {
        return Err(Error::Format(format!("depth needs 1 channel, got {}", depth.channels)));
    }
    let mut out = pnm_header("P5", depth.width, depth.height, 65535);
    for &d in &depth.data {
        let q = (d.as_f64().max(0.0) * DEPTH_PGM_SCALE + 0.5).floor().min(65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_cloud_examples() {
        let mut bytes = Vec::new();
        for v in [1.0_f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes[..4], [0x00, 0x00, 0x80, 0x3f], "IEEE-754 little-endian encoding of 1.0");
        let pc = read_point_cloud::<f64>(&bytes).unwrap();
        assert_eq!(pc.points, vec![LidarPoint::new(1.0, 2.0, 3.0, 0.5)]);

        assert!(read_point_cloud::<f64>(&[]).unwrap().is_empty());

        let err = read_point_cloud::<f64>(&[0u8; 17]).unwrap_err();
        assert!(matches!(err, Error::ByteOffset { offset: 16, .. }), "{err}");
    }

    #[test]
    fn intensity_not_clamped() {
        let pc = PointCloud::new(vec![LidarPoint::new(0.0_f64, 0.0, 0.0, 7.25)]);
        let back = read_point_cloud::<f64>(&write_point_cloud(&pc)).unwrap();
        assert_eq!(back.points[0].intensity, 7.25);
    }

    #[test]
    fn label_examples() {
        let l = parse_label_line::<f64>("Car 0.0 0 1.57 0 0 50 50 1.5 1.6 4.0 2.0 1.0 20.0 1.57").unwrap();
        assert_eq!(l.class_name, "Car");
        assert_eq!(l.dimensions, [1.5, 1.6, 4.0]);
        assert_eq!(l.location, [2.0, 1.0, 20.0]);
        assert_eq!(l.rotation_y, 1.57);
        assert_eq!(l.bbox2d, [0.0, 0.0, 50.0, 50.0]);

        let d = parse_label_line::<f64>("DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10").unwrap();
        assert!(d.is_dont_care());

        let err = parse_label_line::<f64>("Car 0 0 0 0 0 1 1 1 1 1 0 0 0").unwrap_err();
        assert!(matches!(err, Error::Field { index: 15, .. }), "{err}");

        let err = parse_label_line::<f64>("Car 0 0 0 0 0 1 1 1 x 1 0 0 0 0").unwrap_err();
        assert!(matches!(err, Error::Field { index: 10, .. }), "{err}");

        let scored = parse_label_line::<f64>("Car 0 0 0 0 0 1 1 1 1 1 0 0 0 0 0.93").unwrap();
        assert_eq!(scored.score, None);
    }

    #[test]
    fn calib_examples() {
        let base = "P2: 100 0 50 0 0 100 50 0 0 0 1 0\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let c = parse_calib::<f64>(base).unwrap();
        assert_eq!(c.focal, 100.0);
        assert_eq!(c.baseline, DEFAULT_BASELINE_M);

        let with_p3 = format!("{base}P3: 100 0 50 -54 0 100 50 0 0 0 1 0\n");
        let c = parse_calib::<f64>(&with_p3).unwrap();
        assert!((c.baseline - 0.54).abs() < 1e-12);

        let missing = "P2: 100 0 50 0 0 100 50 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
        assert_eq!(parse_calib::<f64>(missing).unwrap_err(), Error::Key("Tr_velo_to_cam".into()));

        let short = base.replace("R0_rect: 1 0 0 0 1 0 0 0 1", "R0_rect: 1 0 0 0 1 0 0 0");
        assert_eq!(parse_calib::<f64>(&short).unwrap_err(), Error::Key("R0_rect".into()));
    }

    #[test]
    fn calib_rejects_bad_rectification() {
        let text = "P2: 100 0 50 0 0 100 50 0 0 0 1 0\n\
                    R0_rect: 2 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(matches!(parse_calib::<f64>(text), Err(Error::Calibration(_))));
    }

    #[test]
    fn calib_format_round_trip() {
        let mut c = Calibration::pinhole(721.5_f64, 609.5, 172.8, 0.54);
        c.tr_velo_to_cam[2][3] = -0.1;
        let back = parse_calib::<f64>(&format_calib(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn image_examples() {
        let img = ImageGrid::from_fn(3, 4, 3, |y, x, c| ((y * 40 + x * 17 + c * 3) % 256) as f64 / 255.0);
        let back: ImageGrid<f64> = read_image(&write_ppm(&img).unwrap()).unwrap();
        assert_eq!(back, img);

        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&2560u16.to_be_bytes());
        let d: ImageGrid<f64> = read_depth_pgm(&bytes).unwrap();
        assert_eq!(d.data, vec![10.0]);

        assert!(matches!(read_image::<f64>(b"P4\n1 1\n255\n\0"), Err(Error::Format(_))));
        assert!(matches!(read_image::<f64>(b"P5\n2 2\n255\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(read_image::<f64>(b"P5\n1 1\n1000\n\0\0"), Err(Error::Format(_))));
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        let img: ImageGrid<f64> = read_image(bytes).unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn depth_pgm_round_trip() {
        let d = ImageGrid::from_fn(2, 3, 1, |y, x, _| (y * 3 + x) as f64 * 1.5 + 0.25);
        let back: ImageGrid<f64> = read_depth_pgm(&write_depth_pgm(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn cloud_round_trip_bitwise(raw in proptest::collection::vec(any::<[f32; 4]>(), 0..50)) {
            let pts: Vec<_> = raw.iter()
                .filter(|p| p[..3].iter().all(|v| v.is_finite()))
                .map(|p| LidarPoint::new(p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64))
                .collect();
            let pc = PointCloud::new(pts);
            let bytes = write_point_cloud(&pc);
            let back = read_point_cloud::<f64>(&bytes).unwrap();
            prop_assert_eq!(write_point_cloud(&back), bytes);
        }

        #[test]
        fn label_line_round_trip(
            vals in proptest::collection::vec(-500i32..500, 14),
            occ in 0i32..4,
        ) {
            let c = |i: usize| vals[i] as f64 / 100.0;
            let label = ObjectLabel {
                class_name: "Pedestrian".to_string(),
                truncated: c(0),
                occluded: occ,
                alpha: c(1),
                bbox2d: [c(2), c(3), c(4), c(5)],
                dimensions: [c(6).abs(), c(7).abs(), c(8).abs()],
                location: [c(9), c(10), c(11)],
                rotation_y: c(12).clamp(-3.1, 3.1),
                score: None,
            };
            let back = parse_label_line::<f64>(&format_label_line(&label)).unwrap();
            prop_assert_eq!(format_label_line(&back), format_label_line(&label));
            for (a, b) in back.location.iter().zip(&label.location) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
