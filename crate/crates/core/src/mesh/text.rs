//! Plain-text mesh files.
//!
//! ```text
//! fvkr-mesh v1 d=2
//! cells n
//! id x_K y_K volume            (n lines)
//! faces m
//! id K L area d_KL nx ny       (m lines, L = -1 on the boundary)
//! ```
//!
//! Writers append optional geometry sections (`domain`, `grid`,
//! `cell_vertices`, `face_endpoints`) after the faces; readers accept files
//! with or without them.

use std::fmt::Write as _;
use std::path::Path;

use super::{CartesianGrid, Cell, Domain, DomainKind, Face, Mesh};
use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const HEADER: &str = "fvkr-mesh v1 d=2";

pub fn mesh_to_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "cells {}", mesh.cells.len()).unwrap();
    for c in &mesh.cells {
        writeln!(s, "{} {} {} {}", c.id, c.center.x, c.center.y, c.volume).unwrap();
    }
    writeln!(s, "faces {}", mesh.faces.len()).unwrap();
    for f in &mesh.faces {
        let l = f.outer.map_or(-1, |l| l as i64);
        writeln!(
            s,
            "{} {} {} {} {} {} {}",
            f.id, f.inner, l, f.area, f.d_kl, f.normal.x, f.normal.y
        )
        .unwrap();
    }
    if let Some(d) = &mesh.domain {
        let kind = match d.kind() {
            DomainKind::Rectangle => "rectangle",
            DomainKind::ConvexPolygon => "polygon",
        };
        writeln!(s, "domain {} {}", kind, d.vertices().len()).unwrap();
        for v in d.vertices() {
            writeln!(s, "{} {}", v.x, v.y).unwrap();
        }
    }
    if let Some(g) = &mesh.grid {
        writeln!(s, "grid {} {} {} {} {} {}", g.nx, g.ny, g.lo.x, g.lo.y, g.dx, g.dy).unwrap();
    }
    if mesh.has_geometry() {
        writeln!(s, "cell_vertices {}", mesh.cells.len()).unwrap();
        for c in &mesh.cells {
            write!(s, "{} {}", c.id, c.vertices.len()).unwrap();
            for v in &c.vertices {
                write!(s, " {} {}", v.x, v.y).unwrap();
            }
            s.push('\n');
        }
    }
    let with_ends: Vec<_> = mesh.faces.iter().filter(|f| f.endpoints.is_some()).collect();
    if !with_ends.is_empty() {
        writeln!(s, "face_endpoints {}", with_ends.len()).unwrap();
        for f in with_ends {
            let [a, b] = f.endpoints.unwrap();
            writeln!(s, "{} {} {} {} {}", f.id, a.x, a.y, b.x, b.y).unwrap();
        }
    }
    s
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text).map_err(|m| Error::parse(path, m))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                self.line_no = i + 1;
                return Some(l);
            }
        }
        None
    }

    fn expect(&mut self) -> std::result::Result<&'a str, String> {
        self.next().ok_or_else(|| "unexpected end of file".to_string())
    }

    fn err(&self, msg: impl std::fmt::Display) -> String {
        format!("line {}: {msg}", self.line_no)
    }
}

fn nums<T: std::str::FromStr>(line: &str) -> Option<Vec<T>> {
    line.split_whitespace().map(|t| t.parse().ok()).collect()
}

fn section(lines: &Lines, line: &str, name: &str) -> std::result::Result<usize, String> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next().and_then(|n| n.parse().ok())) {
        (Some(k), Some(n)) if k == name => Ok(n),
        _ => Err(lines.err(format!("expected `{name} <count>`"))),
    }
}

pub fn parse_mesh(text: &str) -> std::result::Result<Mesh, String> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line_no: 0,
    };
    let header = lines.expect()?;
    if header.split_whitespace().collect::<Vec<_>>() != HEADER.split(' ').collect::<Vec<_>>() {
        return Err(lines.err(format!("expected header `{HEADER}`")));
    }
    let l = lines.expect()?;
    let n = section(&lines, l, "cells")?;
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let l = lines.expect()?;
        let v: Vec<f64> = nums(l).filter(|v: &Vec<f64>| v.len() == 4).ok_or_else(|| {
            lines.err("expected `id x y volume`")
        })?;
        if v[0] as usize != i {
            return Err(lines.err(format!("cell ids must be consecutive, expected {i}")));
        }
        cells.push(Cell {
            id: i,
            center: Point2::new(v[1], v[2]),
            volume: v[3],
            vertices: Vec::new(),
            faces: Vec::new(),
        });
    }
    let l = lines.expect()?;
    let m = section(&lines, l, "faces")?;
    let mut faces = Vec::with_capacity(m);
    for i in 0..m {
        let l = lines.expect()?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 7 {
            return Err(lines.err("expected `id K L area d_KL nx ny`"));
        }
        let id: usize = t[0].parse().map_err(|_| lines.err("bad face id"))?;
        let k: usize = t[1].parse().map_err(|_| lines.err("bad cell index K"))?;
        let l_idx: i64 = t[2].parse().map_err(|_| lines.err("bad cell index L"))?;
        let f: Vec<f64> = nums(&t[3..].join(" ")).ok_or_else(|| lines.err("bad number"))?;
        if id != i {
            return Err(lines.err(format!("face ids must be consecutive, expected {i}")));
        }
        let outer = match l_idx {
            -1 => None,
            l if l >= 0 && (l as usize) < n => Some(l as usize),
            _ => return Err(lines.err("cell index L out of range")),
        };
        if k >= n {
            return Err(lines.err("cell index K out of range"));
        }
        cells[k].faces.push(id);
        if let Some(l) = outer {
            cells[l].faces.push(id);
        }
        faces.push(Face {
            id,
            inner: k,
            outer,
            area: f[0],
            d_kl: f[1],
            normal: Point2::new(f[2], f[3]),
            endpoints: None,
        });
    }

    let mut domain = None;
    let mut grid = None;
    while let Some(l) = lines.next() {
        let key = l.split_whitespace().next().unwrap_or("");
        match key {
            "domain" => {
                let t: Vec<&str> = l.split_whitespace().collect();
                let count: usize = t
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| lines.err("expected `domain <kind> <count>`"))?;
                let mut vs = Vec::with_capacity(count);
                for _ in 0..count {
                    let v: Vec<f64> = nums(lines.expect()?)
                        .filter(|v: &Vec<f64>| v.len() == 2)
                        .ok_or_else(|| lines.err("expected `x y`"))?;
                    vs.push(Point2::new(v[0], v[1]));
                }
                let d = match t.get(1) {
                    Some(&"rectangle") if vs.len() == 4 => Domain::rectangle(vs[0], vs[2]),
                    _ => Domain::convex_polygon(vs),
                };
                domain = Some(d.map_err(|e| lines.err(e))?);
            }
            "grid" => {
                let t: Vec<&str> = l.split_whitespace().skip(1).collect();
                let ok = t.len() == 6;
                let parsed = ok.then(|| {
                    Some(CartesianGrid {
                        nx: t[0].parse().ok()?,
                        ny: t[1].parse().ok()?,
                        lo: Point2::new(t[2].parse().ok()?, t[3].parse().ok()?),
                        dx: t[4].parse().ok()?,
                        dy: t[5].parse().ok()?,
                    })
                });
                grid = Some(parsed.flatten().ok_or_else(|| lines.err("bad grid line"))?);
            }
            "cell_vertices" => {
                let c = section(&lines, l, "cell_vertices")?;
                for _ in 0..c {
                    let v: Vec<f64> = nums(lines.expect()?).ok_or_else(|| lines.err("bad number"))?;
                    let id = v.first().copied().unwrap_or(-1.0);
                    let k = v.get(1).copied().unwrap_or(0.0) as usize;
                    if id < 0.0 || id as usize >= n || v.len() != 2 + 2 * k {
                        return Err(lines.err("expected `id m x1 y1 ... xm ym`"));
                    }
                    cells[id as usize].vertices =
                        v[2..].chunks(2).map(|p| Point2::new(p[0], p[1])).collect();
                }
            }
            "face_endpoints" => {
                let c = section(&lines, l, "face_endpoints")?;
                for _ in 0..c {
                    let v: Vec<f64> = nums(lines.expect()?)
                        .filter(|v: &Vec<f64>| v.len() == 5)
                        .ok_or_else(|| lines.err("expected `id ax ay bx by`"))?;
                    let id = v[0] as usize;
                    if id >= m {
                        return Err(lines.err("face id out of range"));
                    }
                    faces[id].endpoints =
                        Some([Point2::new(v[1], v[2]), Point2::new(v[3], v[4])]);
                }
            }
            other => return Err(lines.err(format!("unknown section `{other}`"))),
        }
    }
    if cells.iter().any(|c| c.vertices.is_empty()) {
        for c in cells.iter_mut() {
            c.vertices.clear();
        }
    }
    Ok(Mesh::from_parts(domain, cells, faces, grid))
}
