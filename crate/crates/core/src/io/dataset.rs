//! On-disk dataset layout.
//!
//! ```text
//! <root>/cameras.txt            id fx fy cx cy width height
//! <root>/chain.txt              "topology path|cycle", then "order id id ..."
//! <root>/relposes.txt           from to r00 r01 .. r22 tx ty tz   (unit t)
//! <root>/segments/<id>.txt      x1 y1 x2 y2      (index = row order)
//! <root>/points/<id>.txt        x y
//! <root>/matches/lines_<i>_<j>.txt    index_in_i index_in_j
//! <root>/matches/points_<i>_<j>.txt   index_in_i index_in_j
//! <root>/ground_truth.txt       id r00 .. r22 cx cy cz   (optional)
//! ```
//!
//! Every file starts with a one-line JSON header carrying `schema`, `version`
//! and `units`. Blank lines and lines starting with `#` are skipped. Pixel
//! coordinates are in the original image frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Topology;
use crate::geometry::{rotation_from_matrix, GlobalPose, Intrinsics, RelativePose, Segment2, Vec2, Vec3};
use crate::robust::TripletFeatures;
use crate::scale::TripletFrame;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: match {entry} references missing {what} {id}")]
    DanglingReference { file: String, entry: usize, what: &'static str, id: usize },
    #[error("no intrinsics for camera {0}")]
    MissingIntrinsics(usize),
    #[error("no relative pose between cameras {0} and {1}")]
    MissingRelativePose(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    units: String,
}

/// Matches between two images, stored as index pairs.
pub type MatchList = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: BTreeMap<usize, Intrinsics>,
    /// Camera ids in chain order.
    pub order: Vec<usize>,
    pub topology: Topology,
    /// Relative pose of each consecutive pair in chain order (and the closing
    /// pair for cycles).
    pub relposes: Vec<RelativePose>,
    pub segments: BTreeMap<usize, Vec<Segment2>>,
    pub points: BTreeMap<usize, Vec<Vec2>>,
    /// Keyed by the ordered camera pair of the file name.
    pub line_matches: BTreeMap<(usize, usize), MatchList>,
    pub point_matches: BTreeMap<(usize, usize), MatchList>,
    /// True global poses keyed by camera id.
    pub ground_truth: Option<BTreeMap<usize, GlobalPose>>,
}

impl Dataset {
    /// Consecutive camera pairs in chain order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.order.len();
        let mut p: Vec<_> = self.order.windows(2).map(|w| (w[0], w[1])).collect();
        if self.topology == Topology::Cycle && n > 2 {
            p.push((self.order[n - 1], self.order[0]));
        }
        p
    }

    /// Camera triples centered on each interior camera used by chain composition.
    pub fn triplets(&self) -> Vec<[usize; 3]> {
        self.pairs().windows(2).map(|w| [w[0].0, w[0].1, w[1].1]).collect()
    }

    fn matches_between(map: &BTreeMap<(usize, usize), MatchList>, i: usize, j: usize) -> MatchList {
        if let Some(m) = map.get(&(i, j)) {
            return m.clone();
        }
        map.get(&(j, i)).map(|m| m.iter().map(|&(a, b)| (b, a)).collect()).unwrap_or_default()
    }

    pub fn line_matches_between(&self, i: usize, j: usize) -> MatchList {
        Self::matches_between(&self.line_matches, i, j)
    }

    pub fn point_matches_between(&self, i: usize, j: usize) -> MatchList {
        Self::matches_between(&self.point_matches, i, j)
    }

    pub fn relpose(&self, from: usize, to: usize) -> Result<RelativePose, DatasetError> {
        for r in &self.relposes {
            if r.from == from && r.to == to {
                return Ok(*r);
            }
            if r.from == to && r.to == from {
                return Ok(r.inverse());
            }
        }
        Err(DatasetError::MissingRelativePose(from, to))
    }

    pub fn triplet_frame(&self, [a, b, c]: [usize; 3]) -> Result<TripletFrame, DatasetError> {
        TripletFrame::new(self.relpose(a, b)?, self.relpose(b, c)?).map_err(|_| DatasetError::MissingRelativePose(a, c))
    }

    pub fn triplet_features(&self, cams: [usize; 3]) -> Result<TripletFeatures, DatasetError> {
        let [a, b, c] = cams;
        let k = |id| self.intrinsics.get(&id).copied().ok_or(DatasetError::MissingIntrinsics(id));
        let segs = |id| self.segments.get(&id).cloned().unwrap_or_default();
        let pts = |id| self.points.get(&id).cloned().unwrap_or_default();
        Ok(TripletFeatures {
            intrinsics: [k(a)?, k(b)?, k(c)?],
            segments: [segs(a), segs(b), segs(c)],
            points: [pts(a), pts(b), pts(c)],
            line_matches: [self.line_matches_between(a, b), self.line_matches_between(b, c)],
            point_matches: [self.point_matches_between(a, b), self.point_matches_between(b, c)],
        })
    }

    /// Ground-truth poses in chain order.
    pub fn ground_truth_in_order(&self) -> Option<Vec<GlobalPose>> {
        let gt = self.ground_truth.as_ref()?;
        self.order.iter().map(|id| gt.get(id).copied()).collect()
    }

    /// Checks every cross reference.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for id in &self.order {
            if !self.intrinsics.contains_key(id) {
                return Err(DatasetError::MissingIntrinsics(*id));
            }
        }
        for (i, j) in self.pairs() {
            self.relpose(i, j)?;
        }
        for (what, map, counts) in [
            ("segment", &self.line_matches, self.segments.iter().map(|(k, v)| (*k, v.len())).collect::<BTreeMap<_, _>>()),
            ("point", &self.point_matches, self.points.iter().map(|(k, v)| (*k, v.len())).collect()),
        ] {
            for (&(i, j), list) in map {
                let file = format!("matches/{}s_{i}_{j}.txt", if what == "segment" { "line" } else { "point" });
                for (row, &(a, b)) in list.iter().enumerate() {
                    for (cam, idx) in [(i, a), (j, b)] {
                        if idx >= counts.get(&cam).copied().unwrap_or(0) {
                            return Err(DatasetError::DanglingReference { file: file.clone(), entry: row + 1, what, id: idx });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn header_line(schema: &str, units: &str) -> String {
    let h = Header { schema: format!("chainsfm.{schema}"), version: FORMAT_VERSION, units: units.to_string() };
    serde_json::to_string(&h).expect("header serializes") + "\n"
}

fn write_file(path: &Path, body: &str) -> Result<(), DatasetError> {
    fs::write(path, body).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn rotation_row_major(r: &nalgebra::Rotation3<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..3).flat_map(move |i| (0..3).map(move |j| r.matrix()[(i, j)]))
}

/// Pose file body: one row per camera, `id r00 .. r22 cx cy cz`.
pub fn poses_to_string(schema: &str, poses: &BTreeMap<usize, GlobalPose>) -> String {
    let mut s = header_line(schema, "world");
    for (id, p) in poses {
        let c = p.center;
        let _ = writeln!(s, "{id} {}", join(rotation_row_major(&p.rotation).chain([c.x, c.y, c.z])));
    }
    s
}

pub fn save_dataset(d: &Dataset, root: &Path) -> Result<(), DatasetError> {
    for sub in ["segments", "points", "matches"] {
        let p = root.join(sub);
        fs::create_dir_all(&p).map_err(|source| DatasetError::Io { path: p, source })?;
    }

    let mut s = header_line("cameras", "pixels");
    for (id, k) in &d.intrinsics {
        let _ = writeln!(s, "{id} {}", join([k.fx, k.fy, k.cx, k.cy, k.width, k.height]));
    }
    write_file(&root.join("cameras.txt"), &s)?;

    let mut s = header_line("chain", "none");
    let topo = match d.topology {
        Topology::Path => "path",
        Topology::Cycle => "cycle",
    };
    let order: Vec<String> = d.order.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(s, "topology {topo}\norder {}", order.join(" "));
    write_file(&root.join("chain.txt"), &s)?;

    let mut s = header_line("relposes", "unit-direction");
    for r in &d.relposes {
        let t = r.direction.into_inner();
        let _ = writeln!(s, "{} {} {}", r.from, r.to, join(rotation_row_major(&r.rotation).chain([t.x, t.y, t.z])));
    }
    write_file(&root.join("relposes.txt"), &s)?;

    for (id, segs) in &d.segments {
        let mut s = header_line("segments", "pixels");
        for g in segs {
            let _ = writeln!(s, "{}", join([g.a.x, g.a.y, g.b.x, g.b.y]));
        }
        write_file(&root.join("segments").join(format!("{id}.txt")), &s)?;
    }
    for (id, pts) in &d.points {
        let mut s = header_line("points", "pixels");
        for p in pts {
            let _ = writeln!(s, "{}", join([p.x, p.y]));
        }
        write_file(&root.join("points").join(format!("{id}.txt")), &s)?;
    }
    for (kind, map) in [("lines", &d.line_matches), ("points", &d.point_matches)] {
        for ((i, j), list) in map {
            let mut s = header_line(&format!("{kind}-matches"), "indices");
            for (a, b) in list {
                let _ = writeln!(s, "{a} {b}");
            }
            write_file(&root.join("matches").join(format!("{kind}_{i}_{j}.txt")), &s)?;
        }
    }
    if let Some(gt) = &d.ground_truth {
        write_file(&root.join("ground_truth.txt"), &poses_to_string("ground-truth", gt))?;
    }
    Ok(())
}

struct Rows {
    file: String,
    rows: Vec<(usize, Vec<String>)>,
}

impl Rows {
    fn parse_err(&self, line: usize, message: impl Into<String>) -> DatasetError {
        DatasetError::Parse { file: self.file.clone(), line, message: message.into() }
    }

    fn numbers<T: std::str::FromStr>(&self, line: usize, fields: &[String], count: usize) -> Result<Vec<T>, DatasetError> {
        if fields.len() != count {
            return Err(self.parse_err(line, format!("expected {count} fields, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<T>().map_err(|_| self.parse_err(line, format!("invalid number '{f}'"))))
            .collect()
    }
}

fn read_rows(root: &Path, rel: &str, schema: &str) -> Result<Rows, DatasetError> {
    let path = root.join(rel);
    let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
    let mut lines = text.lines().enumerate();
    let file = rel.to_string();
    let err = |line: usize, message: String| DatasetError::Parse { file: file.clone(), line, message };
    let (_, first) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.schema != format!("chainsfm.{schema}") {
        return Err(err(1, format!("expected schema chainsfm.{schema}, found {}", header.schema)));
    }
    if header.version != FORMAT_VERSION {
        return Err(err(1, format!("unsupported version {}", header.version)));
    }
    let rows = lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
        .collect();
    Ok(Rows { file, rows })
}

fn parse_rotation(rows: &Rows, line: usize, v: &[f64]) -> Result<nalgebra::Rotation3<f64>, DatasetError> {
    let m = Matrix3::from_row_slice(v);
    rotation_from_matrix(&m).map_err(|_| rows.parse_err(line, "matrix is not a rotation"))
}

fn read_poses(root: &Path, rel: &str, schema: &str) -> Result<BTreeMap<usize, GlobalPose>, DatasetError> {
    let rows = read_rows(root, rel, schema)?;
    let mut poses = BTreeMap::new();
    for (line, f) in &rows.rows {
        if f.len() != 13 {
            return Err(rows.parse_err(*line, format!("expected 13 fields, found {}", f.len())));
        }
        let id: usize = rows.numbers(*line, &f[..1], 1)?[0];
        let v: Vec<f64> = rows.numbers(*line, &f[1..], 12)?;
        let rotation = parse_rotation(&rows, *line, &v[..9])?;
        poses.insert(id, GlobalPose::from_center(rotation, Vec3::new(v[9], v[10], v[11])));
    }
    Ok(poses)
}

/// Reads a `poses.txt` written by the pipeline.
pub fn load_poses(path: &Path) -> Result<BTreeMap<usize, GlobalPose>, DatasetError> {
    let root = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    read_poses(root, &name, "poses")
}

/// Ids of the `<id>.txt` files in a directory, sorted.
fn file_ids(dir: &Path) -> Result<Vec<usize>, DatasetError> {
    let mut ids = Vec::new();
    let Ok(rd) = fs::read_dir(dir) else { return Ok(ids) };
    for e in rd {
        let e = e.map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
        let name = e.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_suffix(".txt").and_then(|s| s.parse().ok()) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

fn load_matches(root: &Path, kind: &str) -> Result<BTreeMap<(usize, usize), MatchList>, DatasetError> {
    let dir = root.join("matches");
    let mut out = BTreeMap::new();
    let Ok(rd) = fs::read_dir(&dir) else { return Ok(out) };
    let mut names: Vec<String> = rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().to_string()).collect();
    names.sort();
    for name in names {
        let Some(rest) = name.strip_prefix(&format!("{kind}_")).and_then(|s| s.strip_suffix(".txt")) else { continue };
        let Some((i, j)) = rest.split_once('_').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?))) else {
            continue;
        };
        let rows = read_rows(root, &format!("matches/{name}"), &format!("{kind}-matches"))?;
        let mut list = Vec::with_capacity(rows.rows.len());
        for (line, f) in &rows.rows {
            let v: Vec<usize> = rows.numbers(*line, f, 2)?;
            list.push((v[0], v[1]));
        }
        out.insert((i, j), list);
    }
    Ok(out)
}

pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let rows = read_rows(root, "cameras.txt", "cameras")?;
    let mut intrinsics = BTreeMap::new();
    for (line, f) in &rows.rows {
        let id: usize = rows.numbers(*line, &f[..1.min(f.len())], 1)?[0];
        let v: Vec<f64> = rows.numbers(*line, &f[1..], 6)?;
        let k = Intrinsics { fx: v[0], fy: v[1], cx: v[2], cy: v[3], width: v[4], height: v[5] };
        k.validate().map_err(|e| rows.parse_err(*line, e.to_string()))?;
        intrinsics.insert(id, k);
    }

    let rows = read_rows(root, "chain.txt", "chain")?;
    let mut topology = None;
    let mut order = None;
    for (line, f) in &rows.rows {
        match f.first().map(String::as_str) {
            Some("topology") => {
                topology = Some(match f.get(1).map(String::as_str) {
                    Some("path") if f.len() == 2 => Topology::Path,
                    Some("cycle") if f.len() == 2 => Topology::Cycle,
                    _ => return Err(rows.parse_err(*line, "expected 'topology path|cycle'")),
                })
            }
            Some("order") => order = Some(rows.numbers::<usize>(*line, &f[1..], f.len() - 1)?),
            _ => return Err(rows.parse_err(*line, "expected 'topology' or 'order'")),
        }
    }
    let topology = topology.ok_or_else(|| rows.parse_err(1, "missing topology"))?;
    let order = order.ok_or_else(|| rows.parse_err(1, "missing order"))?;

    let rows = read_rows(root, "relposes.txt", "relposes")?;
    let mut relposes = Vec::new();
    for (line, f) in &rows.rows {
        if f.len() != 14 {
            return Err(rows.parse_err(*line, format!("expected 14 fields, found {}", f.len())));
        }
        let ids: Vec<usize> = rows.numbers(*line, &f[..2], 2)?;
        let v: Vec<f64> = rows.numbers(*line, &f[2..], 12)?;
        let rotation = parse_rotation(&rows, *line, &v[..9])?;
        let t = Vec3::new(v[9], v[10], v[11]);
        if !((t.norm() - 1.0).abs() < 1e-9) {
            return Err(rows.parse_err(*line, "translation direction is not unit length"));
        }
        let r = RelativePose::new(ids[0], ids[1], rotation, Unit::new_unchecked(t))
            .map_err(|e| rows.parse_err(*line, e.to_string()))?;
        relposes.push(r);
    }

    let mut segments = BTreeMap::new();
    for id in file_ids(&root.join("segments"))? {
        let rows = read_rows(root, &format!("segments/{id}.txt"), "segments")?;
        let k = intrinsics.get(&id).ok_or(DatasetError::MissingIntrinsics(id))?;
        let mut list = Vec::with_capacity(rows.rows.len());
        for (line, f) in &rows.rows {
            let v: Vec<f64> = rows.numbers(*line, f, 4)?;
            let s = Segment2::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]), k, id)
                .map_err(|e| rows.parse_err(*line, e.to_string()))?;
            list.push(s);
        }
        segments.insert(id, list);
    }
    let mut points = BTreeMap::new();
    for id in file_ids(&root.join("points"))? {
        let rows = read_rows(root, &format!("points/{id}.txt"), "points")?;
        if !intrinsics.contains_key(&id) {
            return Err(DatasetError::MissingIntrinsics(id));
        }
        let mut list = Vec::with_capacity(rows.rows.len());
        for (line, f) in &rows.rows {
            let v: Vec<f64> = rows.numbers(*line, f, 2)?;
            list.push(Vec2::new(v[0], v[1]));
        }
        points.insert(id, list);
    }

    let ground_truth = if root.join("ground_truth.txt").exists() {
        Some(read_poses(root, "ground_truth.txt", "ground-truth")?)
    } else {
        None
    };

    let d = Dataset {
        intrinsics,
        order,
        topology,
        relposes,
        segments,
        points,
        line_matches: load_matches(root, "lines")?,
        point_matches: load_matches(root, "points")?,
        ground_truth,
    };
    d.validate()?;
    Ok(d)
}
