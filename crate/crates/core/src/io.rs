//! Scan and trajectory files: KITTI `.bin`, PLY (ASCII and binary), the
//! trajectory text formats, and scan directories.
//!
//! Trajectory files hold one line per scan:
//! `index tx_b ty_b tz_b qx_b qy_b qz_b qw_b tx_e ty_e tz_e qx_e qy_e qz_e qw_e`.
//! The KITTI variant holds the 12 row-major entries of the 3x4 pose matrix of
//! the metric pose. Lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::{Matrix3x4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Pose, TrajectoryFrame};
use crate::scalar::{lit, to_f64, Real};
use crate::scan::{Scan, ScanPoint};

/// Vertical correction applied to KITTI-family scans, degrees.
pub const KITTI_VERTICAL_CORRECTION_DEG: f64 = 0.205;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Reads little-endian `(x, y, z, reflectance)` float quadruples. The scan has
/// no timing (`has_alpha` unset).
pub fn read_kitti_bin<T: Real>(path: &Path, index: usize) -> Result<Scan<T>> {
    let bytes = read_file(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::malformed(path, format!("{} bytes is not a multiple of 16", bytes.len())));
    }
    if bytes.is_empty() {
        return Err(Error::EmptyScan(path.display().to_string()));
    }
    let positions = bytes
        .chunks_exact(16)
        .map(|c| {
            Vector3::new(
                lit(LittleEndian::read_f32(&c[0..4]) as f64),
                lit(LittleEndian::read_f32(&c[4..8]) as f64),
                lit(LittleEndian::read_f32(&c[8..12]) as f64),
            )
        })
        .collect();
    Ok(Scan::untimed(positions, index))
}

/// Writes positions as KITTI float quadruples with zero reflectance.
pub fn write_kitti_bin<T: Real>(path: &Path, scan: &Scan<T>) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for p in &scan.points {
        for c in p.position.iter() {
            out.write_f32::<LittleEndian>(to_f64(*c) as f32).map_err(io)?;
        }
        out.write_f32::<LittleEndian>(0.0).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Assigns `alpha` from azimuth progress relative to the first point. The
/// spin direction is taken from the dominant sign of consecutive azimuth
/// increments; progress is clamped to one revolution.
pub fn estimate_timestamps_from_azimuth<T: Real>(scan: &Scan<T>) -> Scan<T> {
    use std::f64::consts::{PI, TAU};
    let azimuths: Vec<f64> = scan
        .points
        .iter()
        .map(|p| to_f64(p.position.y).atan2(to_f64(p.position.x)))
        .collect();
    let wrap = |d: f64| {
        let d = d.rem_euclid(TAU);
        if d > PI {
            d - TAU
        } else {
            d
        }
    };
    let turn: f64 = azimuths.windows(2).map(|w| wrap(w[1] - w[0])).sum();
    let sign = if turn < 0.0 { -1.0 } else { 1.0 };
    let mut out = scan.clone();
    let Some(&first) = azimuths.first() else {
        return out;
    };
    let mut furthest: f64 = 0.0;
    for (point, azimuth) in out.points.iter_mut().zip(&azimuths) {
        let mut progress = (sign * (azimuth - first)).rem_euclid(TAU);
        // A small angle after most of a revolution means the sweep came back
        // around past its start.
        if progress < furthest - PI {
            progress = TAU;
        }
        furthest = furthest.max(progress);
        point.alpha = lit((progress / TAU).clamp(0.0, 1.0));
    }
    out.has_alpha = true;
    out
}

/// Rotates every point about the horizontal axis perpendicular to its azimuth
/// so that its elevation grows by `angle_deg`. Ranges are preserved.
pub fn apply_intrinsic_vertical_correction<T: Real>(scan: &Scan<T>, angle_deg: f64) -> Scan<T> {
    let mut out = scan.clone();
    if angle_deg == 0.0 {
        return out;
    }
    let angle: T = lit(angle_deg.to_radians());
    for p in &mut out.points {
        let horizontal = p.position.xy().norm();
        if horizontal <= T::zero() {
            continue;
        }
        let axis = nalgebra::Unit::new_unchecked(Vector3::new(
            p.position.y / horizontal,
            -p.position.x / horizontal,
            T::zero(),
        ));
        p.position = UnitQuaternion::from_axis_angle(&axis, angle) * p.position;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read<B: ByteOrder>(self, bytes: &[u8]) -> f64 {
        match self {
            Self::I8 => bytes[0] as i8 as f64,
            Self::U8 => bytes[0] as f64,
            Self::I16 => B::read_i16(bytes) as f64,
            Self::U16 => B::read_u16(bytes) as f64,
            Self::I32 => B::read_i32(bytes) as f64,
            Self::U32 => B::read_u32(bytes) as f64,
            Self::F32 => B::read_f32(bytes) as f64,
            Self::F64 => B::read_f64(bytes),
        }
    }
}

struct PlyHeader {
    format: PlyFormat,
    vertices: usize,
    properties: Vec<(String, PlyType)>,
    comments: Vec<String>,
    body_offset: usize,
}

fn parse_ply_header(path: &Path, bytes: &[u8]) -> Result<PlyHeader> {
    let bad = |reason: &str| Error::malformed(path, reason.to_string());
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut format = None;
    let mut vertices = None;
    let mut properties = Vec::new();
    let mut comments = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", rest @ ..] => comments.push(rest.join(" ")),
            ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    "binary_big_endian" => PlyFormat::BinaryBe,
                    other => return Err(bad(&format!("unknown format `{other}`"))),
                })
            }
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| bad("bad element count"))?;
                if *name == "vertex" {
                    if vertices.is_some() {
                        return Err(bad("duplicate vertex element"));
                    }
                    vertices = Some(count);
                    in_vertex = true;
                } else if vertices.is_none() && count > 0 {
                    return Err(bad("elements before vertex are not supported"));
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => return Err(bad("list properties on vertices are not supported")),
            ["property", ty, name] if in_vertex => {
                let ty = PlyType::parse(ty).ok_or_else(|| bad(&format!("unknown property type `{ty}`")))?;
                properties.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            _ => return Err(bad(&format!("unexpected header line `{line}`"))),
        }
    }
    Ok(PlyHeader {
        format: format.ok_or_else(|| bad("missing format line"))?,
        vertices: vertices.ok_or_else(|| bad("missing vertex element"))?,
        properties,
        comments,
        body_offset: end + 11,
    })
}

fn read_vertex_rows(path: &Path, header: &PlyHeader, body: &[u8]) -> Result<Vec<Vec<f64>>> {
    let n = header.properties.len();
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::malformed(path, "ASCII body is not UTF-8"))?;
            let mut tokens = text.split_whitespace();
            (0..header.vertices)
                .map(|v| {
                    (0..n)
                        .map(|_| {
                            tokens
                                .next()
                                .ok_or_else(|| Error::malformed(path, format!("truncated at vertex {v}")))?
                                .parse::<f64>()
                                .map_err(|_| Error::malformed(path, format!("bad number at vertex {v}")))
                        })
                        .collect()
                })
                .collect()
        }
        format => {
            let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let needed = stride
                .checked_mul(header.vertices)
                .ok_or_else(|| Error::malformed(path, "vertex count overflows"))?;
            if body.len() < needed {
                return Err(Error::malformed(path, format!("body has {} bytes, {needed} expected", body.len())));
            }
            Ok(body[..needed]
                .chunks_exact(stride.max(1))
                .take(header.vertices)
                .map(|row| {
                    let mut offset = 0;
                    header
                        .properties
                        .iter()
                        .map(|(_, ty)| {
                            let field = &row[offset..offset + ty.size()];
                            offset += ty.size();
                            match format {
                                PlyFormat::BinaryBe => ty.read::<BigEndian>(field),
                                _ => ty.read::<LittleEndian>(field),
                            }
                        })
                        .collect()
                })
                .collect())
        }
    }
}

/// Reads a PLY point cloud with `x`, `y`, `z` and an optional `timestamp`
/// (absolute seconds). `comment tau_begin` / `comment tau_end` header lines,
/// when present, fix the scan interval used for `alpha`.
pub fn read_ply<T: Real>(path: &Path, index: usize) -> Result<Scan<T>> {
    let bytes = read_file(path)?;
    let header = parse_ply_header(path, &bytes)?;
    let column = |names: &[&str]| header.properties.iter().position(|(n, _)| names.contains(&n.as_str()));
    let (Some(ix), Some(iy), Some(iz)) = (column(&["x"]), column(&["y"]), column(&["z"])) else {
        return Err(Error::malformed(path, "vertex element lacks x, y or z"));
    };
    let it = column(&["timestamp", "time", "t"]);
    let rows = read_vertex_rows(path, &header, &bytes[header.body_offset..])?;
    if rows.is_empty() {
        return Err(Error::EmptyScan(path.display().to_string()));
    }
    let positions: Vec<Vector3<T>> = rows.iter().map(|r| Vector3::new(lit(r[ix]), lit(r[iy]), lit(r[iz]))).collect();
    let Some(it) = it else {
        return Ok(Scan::untimed(positions, index));
    };
    let timestamps: Vec<f64> = rows.iter().map(|r| r[it]).collect();
    let comment = |key: &str| {
        header
            .comments
            .iter()
            .find_map(|c| c.strip_prefix(key).and_then(|v| v.trim().parse::<f64>().ok()))
    };
    match (comment("tau_begin"), comment("tau_end")) {
        (Some(tau_begin), Some(tau_end)) if tau_end > tau_begin => {
            let span = tau_end - tau_begin;
            let points = positions
                .into_iter()
                .zip(timestamps)
                .map(|(p, tau)| ScanPoint::with_timestamp(p, lit(((tau - tau_begin) / span).clamp(0.0, 1.0)), tau))
                .collect();
            Ok(Scan { points, index, tau_begin: Some(tau_begin), tau_end: Some(tau_end), has_alpha: true })
        }
        _ => Ok(Scan::from_timestamped(positions, timestamps, index)),
    }
}

/// Writes a little-endian binary PLY with double `x`, `y`, `z` and, when every
/// point has one, a double `timestamp`.
pub fn write_ply<T: Real>(path: &Path, scan: &Scan<T>) -> Result<()> {
    let timed = !scan.points.is_empty() && scan.points.iter().all(|p| p.timestamp.is_some());
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    if let (Some(b), Some(e)) = (scan.tau_begin, scan.tau_end) {
        header.push_str(&format!("comment tau_begin {b:?}\ncomment tau_end {e:?}\n"));
    }
    header.push_str(&format!("element vertex {}\n", scan.points.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if timed {
        header.push_str("property double timestamp\n");
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes()).map_err(io)?;
    for p in &scan.points {
        for c in p.position.iter() {
            out.write_f64::<LittleEndian>(to_f64(*c)).map_err(io)?;
        }
        if timed {
            out.write_f64::<LittleEndian>(p.timestamp.unwrap_or_default()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Writes bare positions as a binary PLY (map export).
pub fn write_points_ply<'a, T: Real>(path: &Path, points: impl ExactSizeIterator<Item = &'a Vector3<T>>) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    out.write_all(header.as_bytes()).map_err(io)?;
    for p in points {
        for c in p.iter() {
            out.write_f32::<LittleEndian>(to_f64(*c) as f32).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn pose_fields(p: &Pose<f64>) -> String {
    let t = p.translation;
    let q = p.rotation.quaternion();
    format!("{:?} {:?} {:?} {:?} {:?} {:?} {:?}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

/// Writes one `index begin end` line per frame.
pub fn write_trajectory<T: Real>(path: &Path, frames: &[TrajectoryFrame<T>]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "# index tx_b ty_b tz_b qx_b qy_b qz_b qw_b tx_e ty_e tz_e qx_e qy_e qz_e qw_e").map_err(io)?;
    for f in frames {
        let f = f.cast::<f64>();
        writeln!(out, "{} {} {}", f.scan_index, pose_fields(&f.begin), pose_fields(&f.end)).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes the pose at `alpha` of every frame as 12 row-major numbers.
pub fn write_kitti_poses<T: Real>(path: &Path, frames: &[TrajectoryFrame<T>], alpha: f64) -> Result<()> {
    let poses: Vec<Pose<f64>> = frames.iter().map(|f| f.cast::<f64>().interpolate(alpha)).collect();
    write_pose_list(path, &poses)
}

/// Writes poses in the KITTI 12-number layout.
pub fn write_pose_list(path: &Path, poses: &[Pose<f64>]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for p in poses {
        let m = p.to_matrix3x4();
        let fields: Vec<String> = (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| format!("{:?}", m[(r, c)])).collect();
        writeln!(out, "{}", fields.join(" ")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Trajectory read from either text format.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryFile {
    Frames(Vec<TrajectoryFrame<f64>>),
    Poses(Vec<Pose<f64>>),
}

impl TrajectoryFile {
    /// Pose per scan: the frame pose at `alpha`, or the stored pose.
    pub fn poses(&self, alpha: f64) -> Vec<Pose<f64>> {
        match self {
            Self::Frames(frames) => frames.iter().map(|f| f.interpolate(alpha)).collect(),
            Self::Poses(poses) => poses.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Frames(f) => f.len(),
            Self::Poses(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a trajectory in the 15-number frame format or the 12-number KITTI
/// format, detected from the first data line.
pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    let mut width = None;
    for (number, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::malformed(path, format!("line {}: not a number", number + 1)))?;
        let w = *width.get_or_insert(values.len());
        if values.len() != w || !(w == 15 || w == 12) {
            return Err(Error::malformed(path, format!("line {}: {} fields", number + 1, values.len())));
        }
        if w == 15 {
            let pose = |v: &[f64]| {
                Pose::from_quaternion(Quaternion::new(v[6], v[3], v[4], v[5]), Vector3::new(v[0], v[1], v[2]))
            };
            frames.push(TrajectoryFrame::new(pose(&values[1..8]), pose(&values[8..15]), values[0] as usize));
        } else {
            poses.push(Pose::from_matrix3x4(&Matrix3x4::from_row_slice(&values)));
        }
    }
    match width {
        Some(15) => Ok(TrajectoryFile::Frames(frames)),
        Some(_) => Ok(TrajectoryFile::Poses(poses)),
        None => Err(Error::malformed(path, "no trajectory lines")),
    }
}

/// How scans in a directory are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScanReadOptions {
    /// Apply the KITTI vertical correction to every scan.
    pub kitti_correction: bool,
    /// Derive `alpha` from azimuth for scans without timestamps.
    pub estimate_timestamps: bool,
}

/// Sorted `.ply` / `.bin` files of a scan directory (or its `scans/`
/// subdirectory), read lazily.
#[derive(Debug, Clone)]
pub struct ScanDirectory {
    files: Vec<PathBuf>,
    options: ScanReadOptions,
}

impl ScanDirectory {
    pub fn open(path: &Path, options: ScanReadOptions) -> Result<Self> {
        let nested = path.join("scans");
        let dir = if nested.is_dir() { nested } else { path.to_path_buf() };
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let p = entry.path();
            if matches!(p.extension().and_then(|e| e.to_str()), Some("ply" | "bin")) {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyScan(format!("no .ply or .bin scans in {}", dir.display())));
        }
        Ok(Self { files, options })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn read<T: Real>(&self, index: usize) -> Result<Scan<T>> {
        let path = &self.files[index];
        let mut scan = match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => read_kitti_bin(path, index)?,
            _ => read_ply(path, index)?,
        };
        if self.options.kitti_correction {
            scan = apply_intrinsic_vertical_correction(&scan, KITTI_VERTICAL_CORRECTION_DEG);
        }
        if !scan.has_alpha && self.options.estimate_timestamps {
            scan = estimate_timestamps_from_azimuth(&scan);
        }
        Ok(scan)
    }

    pub fn iter<T: Real>(&self) -> impl Iterator<Item = Result<Scan<T>>> + '_ {
        (0..self.files.len()).map(|i| self.read(i))
    }
}

/// File name of scan `index` inside a dump.
pub fn scan_file_name(index: usize) -> String {
    format!("{index:06}.ply")
}
