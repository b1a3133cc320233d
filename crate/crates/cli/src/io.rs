//! Parsers for parameter values and input files.

use std::collections::BTreeSet;
use std::path::Path;

use coulomb_lab::gl::{GLState, GlDomain};
use coulomb_lab::grid::Grid;
use coulomb_lab::jellium::{ModularPoint, TorusLattice};
use coulomb_lab::potential::{PotentialKind, PotentialSpec};
use num_complex::Complex64;

use crate::config::parse_real;
use crate::error::CliError;

fn usage(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("params.{key}: {msg}"))
}

fn reals(key: &str, list: &str, sep: char) -> Result<Vec<f64>, CliError> {
    list.split(sep).filter(|s| !s.trim().is_empty()).map(|s| parse_real(key, s)).collect()
}

/// `quadratic`, `anisotropic:w1,w2,...` or `radial:c0,c1,...` (coefficient of `|x|^k`).
pub fn parse_potential(s: &str, dim: usize) -> Result<PotentialSpec, CliError> {
    let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
    let kind = match kind {
        "quadratic" => PotentialKind::Quadratic,
        "anisotropic" => PotentialKind::Anisotropic { weights: reals("potential", rest, ',')? },
        "radial" => PotentialKind::Radial { coeffs: reals("potential", rest, ',')? },
        other => return Err(usage("potential", format!("unknown kind {other:?} (quadratic, anisotropic:w,..., radial:c,...)"))),
    };
    Ok(PotentialSpec::new(dim, kind)?)
}

/// `disk:R`, `square:S` or `rect:x0:y0:x1:y1`.
pub fn parse_domain(s: &str) -> Result<GlDomain, CliError> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |i: usize| parse_real("domain", parts[i]);
    let positive = |v: f64| if v > 0.0 { Ok(v) } else { Err(usage("domain", "sizes must be positive")) };
    match (parts[0], parts.len()) {
        ("disk", 2) => Ok(GlDomain::disk(positive(num(1)?)?)),
        ("square", 2) => Ok(GlDomain::square(positive(num(1)?)?)),
        ("rect", 5) => {
            let (x0, y0, x1, y1) = (num(1)?, num(2)?, num(3)?, num(4)?);
            if x1 <= x0 || y1 <= y0 {
                return Err(usage("domain", "rect needs x0 < x1 and y0 < y1"));
            }
            Ok(GlDomain::Rectangle { lower: [x0, y0], upper: [x1, y1] })
        }
        _ => Err(usage("domain", format!("{s:?} is not disk:R, square:S or rect:x0:y0:x1:y1"))),
    }
}

/// `line:L`, `tau:re:im[:volume]`, `square[:volume]` or `triangular[:volume]`.
pub fn parse_lattice(s: &str) -> Result<TorusLattice, CliError> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |i: usize| parse_real("lattice", parts[i]);
    let volume = |i: usize| if parts.len() > i { num(i) } else { Ok(1.0) };
    let lattice = match (parts[0], parts.len()) {
        ("line", 2) => TorusLattice::line(num(1)?)?,
        ("tau", 3 | 4) => TorusLattice::from_modular(ModularPoint::new(num(1)?, num(2)?)?, volume(3)?)?,
        ("square", 1 | 2) => TorusLattice::from_modular(ModularPoint::square(), volume(1)?)?,
        ("triangular", 1 | 2) => TorusLattice::from_modular(ModularPoint::triangular(), volume(1)?)?,
        _ => return Err(usage("lattice", format!("{s:?} is not line:L, tau:re:im[:vol], square[:vol] or triangular[:vol]"))),
    };
    Ok(lattice)
}

/// `x:y:d;x:y:d;...`
pub fn parse_vortices(s: &str) -> Result<Vec<([f64; 2], i32)>, CliError> {
    s.split(';')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            let p: Vec<&str> = v.trim().split(':').collect();
            if p.len() != 3 {
                return Err(usage("vortices", format!("{v:?} is not x:y:d")));
            }
            let d: i32 = p[2].trim().parse().map_err(|_| usage("vortices", format!("degree {:?} is not an integer", p[2])))?;
            Ok(([parse_real("vortices", p[0])?, parse_real("vortices", p[1])?], d))
        })
        .collect()
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn cell(path: &Path, line: u64, v: &str) -> Result<f64, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{}: line {line}: {v:?} is not a number", path.display())))
}

/// Points from a CSV with a header row; the first `dim` columns are the coordinates.
pub fn read_points(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = reader(path)?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < dim {
            return Err(CliError::Usage(format!("{}: line {line}: expected {dim} coordinates", path.display())));
        }
        points.push((0..dim).map(|k| cell(path, line, &rec[k])).collect::<Result<Vec<_>, _>>()?);
    }
    if points.is_empty() {
        return Err(CliError::Usage(format!("{}: no points", path.display())));
    }
    Ok(points)
}

/// Order parameter and nodal potential on a regular grid, columns `x, y, re_u, im_u, a1, a2`.
pub fn read_gl_state(path: &Path, epsilon: f64, h_ex: f64) -> Result<GLState, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: missing column {name:?}", path.display())))
    };
    let idx = [col("x")?, col("y")?, col("re_u")?, col("im_u")?, col("a1")?, col("a2")?];
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = [0.0; 6];
        for (k, &c) in idx.iter().enumerate() {
            let v = rec.get(c).ok_or_else(|| CliError::Usage(format!("{}: line {line}: short row", path.display())))?;
            row[k] = cell(path, line, v)?;
        }
        rows.push(row);
    }
    let key = |v: f64| (v * 1e9).round() as i64;
    let xs: BTreeSet<i64> = rows.iter().map(|r| key(r[0])).collect();
    let ys: BTreeSet<i64> = rows.iter().map(|r| key(r[1])).collect();
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 || rows.len() != nx * ny {
        return Err(CliError::Usage(format!("{}: rows do not form a full rectangular grid", path.display())));
    }
    rows.sort_by(|a, b| (key(a[1]), key(a[0])).cmp(&(key(b[1]), key(b[0]))));
    let (x0, x1) = (rows[0][0], rows[nx - 1][0]);
    let (y0, y1) = (rows[0][1], rows[rows.len() - 1][1]);
    let h = (x1 - x0) / (nx - 1) as f64;
    let regular = rows.iter().enumerate().all(|(f, r)| {
        let (i, j) = (f % nx, f / nx);
        (r[0] - (x0 + i as f64 * h)).abs() <= 1e-6 * h && (r[1] - (y0 + j as f64 * h)).abs() <= 1e-6 * h
    });
    if !regular || ((y1 - y0) / h - (ny - 1) as f64).abs() > 1e-6 {
        return Err(CliError::Usage(format!("{}: grid is not uniform with equal spacing in x and y", path.display())));
    }
    let grid = Grid::nodes(&[x0, y0], &[x1, y1], h)?;
    let u = rows.iter().map(|r| Complex64::new(r[2], r[3])).collect();
    let a1: Vec<f64> = rows.iter().map(|r| r[4]).collect();
    let a2: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    Ok(GLState::from_nodal(grid, u, &a1, &a2, epsilon, h_ex)?)
}
