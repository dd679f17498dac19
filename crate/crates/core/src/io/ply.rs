//! ASCII PLY export of the reconstructed structure.
//!
//! Vertices come first (points, then the two endpoints of every line, then
//! the four corners of every plane patch), followed by one `edge` per line and
//! one quad `face` per plane patch. All three elements are always declared.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Structure {
    pub points: Vec<Vec3>,
    pub lines: Vec<[Vec3; 2]>,
    pub planes: Vec<[Vec3; 4]>,
}

pub fn ply_string(s: &Structure) -> String {
    let vertices = s.points.len() + 2 * s.lines.len() + 4 * s.planes.len();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment chainsfm structure\n");
    let _ = writeln!(out, "element vertex {vertices}");
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element edge {}", s.lines.len());
    out.push_str("property int vertex1\nproperty int vertex2\n");
    let _ = writeln!(out, "element face {}", s.planes.len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    let vertex = |out: &mut String, p: &Vec3| {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    };
    for p in &s.points {
        vertex(&mut out, p);
    }
    for l in &s.lines {
        l.iter().for_each(|p| vertex(&mut out, p));
    }
    for q in &s.planes {
        q.iter().for_each(|p| vertex(&mut out, p));
    }
    let first_line = s.points.len();
    for i in 0..s.lines.len() {
        let v = first_line + 2 * i;
        let _ = writeln!(out, "{} {}", v, v + 1);
    }
    let first_plane = first_line + 2 * s.lines.len();
    for i in 0..s.planes.len() {
        let v = first_plane + 4 * i;
        let _ = writeln!(out, "4 {} {} {} {}", v, v + 1, v + 2, v + 3);
    }
    out
}

pub fn export_ply(s: &Structure, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, ply_string(s))
}
