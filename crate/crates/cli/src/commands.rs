//! Verb implementations. Each writes its artifacts and returns a JSON summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use coulomb_lab::equilibrium::{euler_lagrange_residual, solve_equilibrium_direct, EquilibriumConfig, EquilibriumSolution};
use coulomb_lab::gas_energy::{easy_lower_bound_check, splitting_report, PointConfiguration};
use coulomb_lab::gl::{
    ball_construction, ball_lower_bound_vs_energy, energy_density, first_critical_lambda, gl_energy_parts,
    gl_obstacle, gl_splitting_check, gradient_flow, initial_balls, jacobian_estimate_check, london_solve,
    vortex_state, GLState,
};
use coulomb_lab::grid::{Grid, GridField};
use coulomb_lab::jellium::{
    minimize_torus_config, periodic_w, scan_lattices, torus_green, torus_green_regular_part, TorusConfiguration,
};
use coulomb_lab::potential::PotentialSpec;
use coulomb_lab::sampler::{chain_stats, sample_chains, GibbsSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{parse_domain, parse_lattice, parse_potential, parse_vortices, read_gl_state, read_points};
use crate::output::{first_difference, num, sha256_hex, Manifest, Output, MANIFEST};
use crate::svg::{Plot, Style};

/// Parameters naming input files; their contents enter the inputs digest.
const INPUT_KEYS: [&str; 2] = ["points", "state"];

pub const VERBS: [&str; 12] = [
    "equilibrium",
    "energy",
    "sample",
    "jellium green",
    "jellium energy",
    "jellium scan-lattices",
    "jellium minimize",
    "gl energy",
    "gl vortices",
    "gl london",
    "gl obstacle",
    "gl split",
];

/// Runs a verb, writes the manifest and returns the summary.
pub fn execute(mut cfg: RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    for key in INPUT_KEYS {
        if let Some(p) = cfg.params.get(key) {
            let abs = std::fs::canonicalize(p).map_err(|e| CliError::Io(format!("params.{key}: {p}: {e}")))?;
            cfg.params.insert(key.into(), abs.to_string_lossy().into_owned());
        }
    }
    let mut out = Output::new(&cfg)?;
    let summary = dispatch(&cfg, &mut out)?;
    out.json("summary.json", &summary)?;
    let manifest = out.finish(&cfg, inputs_digest(&cfg)?, start.elapsed().as_secs_f64())?;
    Ok(json!({
        "verb": manifest.verb,
        "seed": manifest.seed,
        "out": cfg.out,
        "manifest": cfg.out.join(MANIFEST),
        "summary": summary,
    }))
}

fn inputs_digest(cfg: &RunConfig) -> Result<String, CliError> {
    let mut map = cfg.to_map();
    map.remove("out");
    let mut bytes: Vec<u8> = map.iter().flat_map(|(k, v)| format!("{k} = {v}\n").into_bytes()).collect();
    for key in INPUT_KEYS {
        if let Some(p) = cfg.raw(key) {
            bytes.extend(std::fs::read(p).map_err(|e| CliError::Io(format!("{p}: {e}")))?);
        }
    }
    Ok(sha256_hex(&bytes))
}

fn dispatch(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let verb: Vec<&str> = cfg.verb.iter().map(String::as_str).collect();
    match verb.as_slice() {
        ["equilibrium"] => equilibrium(cfg, out),
        ["energy"] => energy(cfg, out),
        ["sample"] => sample(cfg, out),
        ["jellium", "green"] => jellium_green(cfg),
        ["jellium", "energy"] => jellium_energy(cfg),
        ["jellium", "scan-lattices"] => jellium_scan(cfg, out),
        ["jellium", "minimize"] => jellium_minimize(cfg, out),
        ["gl", "energy"] => gl_energy_cmd(cfg, out),
        ["gl", "vortices"] => gl_vortices(cfg, out),
        ["gl", "london"] => gl_london(cfg, out),
        ["gl", "obstacle"] => gl_obstacle_cmd(cfg, out),
        ["gl", "split"] => gl_split(cfg),
        _ => Err(CliError::Usage(format!("verb: unknown {:?} (known: {})", cfg.verb_name(), VERBS.join(", ")))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn field_rows(f: &GridField) -> impl Iterator<Item = Vec<String>> + '_ {
    f.rows().map(|(p, v)| p.into_iter().map(num).chain([num(v)]).collect())
}

fn coord_names(dim: usize) -> Vec<&'static str> {
    ["x", "y", "z", "w"].into_iter().take(dim.min(4)).collect()
}

fn field_header(dim: usize, value: &'static str) -> Vec<&'static str> {
    let mut h = coord_names(dim);
    h.push(value);
    h
}

/// Values along the first axis through the cells closest to the origin.
fn axis_slice(f: &GridField) -> Vec<(f64, f64)> {
    let g = &f.grid;
    let mid: Vec<usize> = (0..g.dim())
        .map(|k| (0..g.shape[k]).min_by(|&a, &b| g.coord(k, a).abs().total_cmp(&g.coord(k, b).abs())).unwrap_or(0))
        .collect();
    (0..g.shape[0])
        .map(|i| {
            let mut idx = mid.clone();
            idx[0] = i;
            (g.coord(0, i), f.values[g.flat(&idx)])
        })
        .collect()
}

fn potential(cfg: &RunConfig, dim: usize) -> Result<PotentialSpec, CliError> {
    parse_potential(cfg.raw("potential").unwrap_or("quadratic"), dim)
}

fn solve_equilibrium(cfg: &RunConfig, spec: &PotentialSpec, spacing: f64) -> Result<EquilibriumSolution, CliError> {
    let hw = cfg.real("half_width", 2.5)?;
    if hw <= 0.0 {
        return Err(CliError::Usage("params.half_width: must be positive".into()));
    }
    let spacing = cfg.real("spacing", spacing)?;
    let config = EquilibriumConfig::on_box(vec![-hw; spec.dim], vec![hw; spec.dim], spacing);
    Ok(solve_equilibrium_direct(spec, &config)?)
}

fn equilibrium(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["potential", "dim", "spacing", "half_width"])?;
    let dim = cfg.get("dim", 2usize)?;
    let spec = potential(cfg, dim)?;
    let eq = solve_equilibrium(cfg, &spec, 1.0 / 32.0)?;
    let (below, on_support) = euler_lagrange_residual(&eq);
    out.csv("density.csv", &field_header(dim, "density"), field_rows(&eq.density))?;
    out.csv("potential.csv", &field_header(dim, "potential"), field_rows(&eq.potential_field))?;
    out.csv("zeta.csv", &field_header(dim, "zeta"), field_rows(&eq.zeta))?;
    let plot = Plot::new("equilibrium density along the first axis", "x", "density").with(
        "density",
        axis_slice(&eq.density),
        Style::Line,
    );
    out.svg("density_slice.svg", &plot)?;
    Ok(json!({
        "potential": to_json(&spec),
        "spacing": eq.grid().spacing,
        "c": eq.c,
        "energy": eq.energy,
        "support_radius": eq.support_radius_estimate(),
        "support_cells": eq.support.iter().filter(|&&s| s).count(),
        "iterations": eq.iterations,
        "euler_lagrange_residual": { "below_c": below, "on_support": on_support },
    }))
}

fn energy(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["points", "n", "dim", "potential", "spacing", "half_width", "eta"])?;
    let dim = cfg.get("dim", 2usize)?;
    let points = match cfg.raw("points") {
        Some(p) => {
            if cfg.raw("n").is_some() {
                return Err(CliError::Usage("params.n: give either points or n, not both".into()));
            }
            read_points(Path::new(p), dim)?
        }
        None => {
            let n = cfg.get("n", 20usize)?;
            if n == 0 {
                return Err(CliError::Usage("params.n: must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        }
    };
    let config = PointConfiguration::new(dim, points)?;
    let spec = potential(cfg, dim)?;
    let eq = solve_equilibrium(cfg, &spec, 1.0 / 32.0)?;
    let eta = match cfg.raw("eta") {
        Some(_) => Some(cfg.require_real("eta")?),
        None => None,
    };
    let report = splitting_report(&config, &eq, eta)?;
    let bound = easy_lower_bound_check(&config, &eq)?;
    out.csv(
        "points.csv",
        &coord_names(dim),
        config.points.iter().map(|p| p.iter().copied().map(num).collect()),
    )?;
    let value = json!({ "splitting": to_json(&report), "lower_bound": to_json(&bound) });
    out.json("report.json", &value)?;
    Ok(value)
}

fn sample(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["n", "beta", "dim", "potential", "sweeps", "chains", "thin", "burn_in", "spacing", "half_width"])?;
    let dim = cfg.get("dim", 2usize)?;
    let spec = potential(cfg, dim)?;
    let sweeps = cfg.get("sweeps", 2000usize)?;
    let mut gibbs = GibbsSpec::new(cfg.get("n", 50usize)?, cfg.real("beta", 2.0)?, spec.clone(), sweeps, cfg.seed);
    gibbs.thin = cfg.get("thin", gibbs.thin)?;
    gibbs.burn_in = cfg.get("burn_in", gibbs.burn_in)?;
    let chains = cfg.get("chains", 2usize)?;
    if chains == 0 {
        return Err(CliError::Usage("params.chains: must be positive".into()));
    }
    let runs = sample_chains(&gibbs, chains)?;
    let eq = solve_equilibrium(cfg, &spec, 1.0 / 16.0)?;
    let stats = chain_stats(&runs, &eq)?;
    out.csv(
        "energy_trace.csv",
        &["chain", "snapshot", "energy"],
        runs.iter()
            .enumerate()
            .flat_map(|(c, ch)| ch.energies.iter().enumerate().map(move |(k, e)| vec![c.to_string(), k.to_string(), num(*e)])),
    )?;
    let mut header = vec!["chain", "point"];
    header.extend(coord_names(dim));
    out.csv(
        "final_snapshot.csv",
        &header,
        runs.iter().enumerate().flat_map(|(c, ch)| {
            ch.snapshots.last().into_iter().flat_map(move |s| {
                s.points.iter().enumerate().map(move |(i, p)| {
                    [c.to_string(), i.to_string()].into_iter().chain(p.iter().copied().map(num)).collect()
                })
            })
        }),
    )?;
    let reference: Vec<(f64, f64)> = stats
        .radial_cdf
        .iter()
        .map(|&(r, _)| (r, coulomb_lab::gas_energy::ball_mass(&eq, &vec![0.0; dim], r)))
        .collect();
    let plot = Plot::new("radial distribution", "r", "CDF")
        .with("empirical", stats.radial_cdf.clone(), Style::Line)
        .with("equilibrium", reference, Style::Line);
    out.svg("radial_cdf.svg", &plot)?;
    let value = json!({
        "n": gibbs.n,
        "beta": gibbs.beta,
        "chains": chains,
        "sweeps": sweeps,
        "stats": to_json(&stats),
    });
    out.json("stats.json", &value)?;
    Ok(value)
}

fn jellium_green(cfg: &RunConfig) -> Result<Value, CliError> {
    cfg.check_keys(&["lattice", "x"])?;
    let lattice = parse_lattice(cfg.raw("lattice").unwrap_or("square"))?;
    let x: Vec<f64> = cfg
        .raw("x")
        .ok_or_else(|| CliError::Usage("params.x: required".into()))?
        .split(',')
        .map(|v| crate::config::parse_real("x", v))
        .collect::<Result<_, _>>()?;
    if x.len() != lattice.dim {
        return Err(CliError::Usage(format!("params.x: expected {} coordinates", lattice.dim)));
    }
    Ok(json!({
        "lattice": to_json(&lattice),
        "x": x,
        "green": torus_green(&lattice, &x)?,
        "regular_part": torus_green_regular_part(&lattice)?,
    }))
}

fn jellium_energy(cfg: &RunConfig) -> Result<Value, CliError> {
    cfg.check_keys(&["lattice", "points", "n"])?;
    let config = match (cfg.raw("points"), cfg.raw("n")) {
        (Some(p), None) => {
            let lattice = parse_lattice(cfg.raw("lattice").ok_or_else(|| CliError::Usage("params.lattice: required with points".into()))?)?;
            let pts = read_points(Path::new(p), lattice.dim)?;
            TorusConfiguration::new(lattice, pts)?
        }
        (None, Some(_)) => {
            if cfg.raw("lattice").is_some() {
                return Err(CliError::Usage("params.lattice: equally spaced points use the line of length n".into()));
            }
            TorusConfiguration::equally_spaced(cfg.require("n")?)?
        }
        _ => return Err(CliError::Usage("params.points: give either points (with lattice) or n".into())),
    };
    let w = periodic_w(&config)?;
    Ok(json!({
        "n": config.n(),
        "volume": config.lattice.volume,
        "energy": if w.value.is_finite() { json!(w.value) } else { json!("inf") },
        "coincident": w.coincident,
    }))
}

fn jellium_scan(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["grid"])?;
    let m = cfg.get("grid", 101usize)?;
    let rows = scan_lattices(m)?;
    let best = rows
        .iter()
        .copied()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| CliError::Usage("params.grid: empty scan".into()))?;
    out.csv("lattices.csv", &["re_tau", "im_tau", "height"], rows.iter().map(|r| vec![num(r.0), num(r.1), num(r.2)]))?;
    // lowest Im τ per column, keyed by the bits of Re τ
    let mut lowest: std::collections::BTreeMap<u64, (f64, f64, f64)> = std::collections::BTreeMap::new();
    for &r in &rows {
        let e = lowest.entry(r.0.to_bits()).or_insert(r);
        if r.1 < e.1 {
            *e = r;
        }
    }
    let mut arc: Vec<(f64, f64)> = lowest.values().map(|r| (r.0, r.2)).collect();
    arc.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.svg(
        "boundary_heights.svg",
        &Plot::new("lattice energy on the lower boundary of the fundamental domain", "Re tau", "height").with(
            "height",
            arc,
            Style::Line,
        ),
    )?;
    Ok(json!({
        "grid": m,
        "points": rows.len(),
        "argmin": { "re": best.0, "im": best.1 },
        "min_height": best.2,
    }))
}

fn jellium_minimize(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["lattice", "n"])?;
    let n: usize = cfg.require("n")?;
    let lattice = match cfg.raw("lattice") {
        Some(s) => parse_lattice(s)?,
        None => parse_lattice(&format!("line:{n}"))?,
    };
    let (config, energy) = minimize_torus_config(&lattice, n, cfg.seed)?;
    out.csv(
        "points.csv",
        &coord_names(lattice.dim),
        config.points.iter().map(|p| p.iter().copied().map(num).collect()),
    )?;
    Ok(json!({ "n": n, "lattice": to_json(&lattice), "energy": energy }))
}

const STATE_KEYS: [&str; 7] = ["state", "vortices", "half_width", "grid", "epsilon", "hex", "relax"];

fn state_keys(extra: &[&'static str]) -> Vec<&'static str> {
    STATE_KEYS.iter().chain(extra).copied().collect()
}

/// From a CSV file (`state`) or synthetic vortices on `[-half_width, half_width]²`.
fn gl_state(cfg: &RunConfig) -> Result<(GLState, Value), CliError> {
    let epsilon = cfg.real("epsilon", 0.05)?;
    let h_ex = cfg.real("hex", 0.0)?;
    let (mut state, source) = match cfg.raw("state") {
        Some(p) => {
            for k in ["vortices", "half_width", "grid"] {
                if cfg.raw(k).is_some() {
                    return Err(CliError::Usage(format!("params.{k}: not used with a state file")));
                }
            }
            (read_gl_state(Path::new(p), epsilon, h_ex)?, json!({ "file": p }))
        }
        None => {
            let vortices = parse_vortices(cfg.raw("vortices").unwrap_or("0:0:1"))?;
            let hw = cfg.real("half_width", 1.0)?;
            let nodes = cfg.get("grid", 201usize)?;
            if nodes < 3 || hw <= 0.0 {
                return Err(CliError::Usage("params.grid: need at least 3 nodes and a positive half_width".into()));
            }
            let h = 2.0 * hw / (nodes - 1) as f64;
            let s = vortex_state([-hw, -hw], [hw, hw], h, epsilon, h_ex, &vortices)?;
            let list: Vec<Value> = vortices.iter().map(|(a, d)| json!({ "x": a[0], "y": a[1], "degree": d })).collect();
            (s, json!({ "vortices": list, "half_width": hw, "grid": nodes }))
        }
    };
    let relax = cfg.get("relax", 0usize)?;
    let mut flow = Value::Null;
    if relax > 0 {
        let (s, rep) = gradient_flow(&state, relax);
        state = s;
        flow = to_json(&rep);
    }
    let info = json!({ "source": source, "epsilon": epsilon, "hex": h_ex, "spacing": state.spacing(), "flow": flow });
    Ok((state, info))
}

fn gl_energy_cmd(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&state_keys(&[]))?;
    let (state, info) = gl_state(cfg)?;
    let parts = gl_energy_parts(&state);
    let e = energy_density(&state);
    out.csv(
        "energy_density.csv",
        &["x", "y", "energy_density"],
        e.iter().enumerate().map(|(k, v)| {
            let p = state.grid.point(k);
            vec![num(p[0]), num(p[1]), num(*v)]
        }),
    )?;
    Ok(json!({ "state": info, "energy": to_json(&parts) }))
}

fn gl_vortices(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&state_keys(&["s", "r_total"]))?;
    let (state, info) = gl_state(cfg)?;
    let initial = initial_balls(&state)?;
    let s = match (cfg.raw("s"), cfg.raw("r_total")) {
        (Some(_), Some(_)) => return Err(CliError::Usage("params.s: give either s or r_total".into())),
        (Some(_), None) => cfg.require_real("s")?,
        (None, Some(_)) => initial.growth_for_total_radius(cfg.require_real("r_total")?),
        (None, None) => 1.0,
    };
    let balls = if s > 1.0 { ball_construction(&initial, s, &state.domain())? } else { initial.clone() };
    let report = ball_lower_bound_vs_energy(&state, &balls);
    let jacobian = jacobian_estimate_check(&state, &balls, balls.total_radius());
    out.csv(
        "balls.csv",
        &["cx", "cy", "r", "d"],
        balls.balls.iter().map(|b| vec![num(b.center[0]), num(b.center[1]), num(b.radius), b.degree.to_string()]),
    )?;
    let mut plot = Plot::new("vortex balls", "x", "y");
    for (k, b) in balls.balls.iter().enumerate() {
        let circle = (0..=64)
            .map(|t| {
                let a = std::f64::consts::TAU * t as f64 / 64.0;
                (b.center[0] + b.radius * a.cos(), b.center[1] + b.radius * a.sin())
            })
            .collect();
        plot = plot.with(&format!("ball {k}, d = {}", b.degree), circle, Style::Line);
    }
    out.svg("balls.svg", &plot)?;
    Ok(json!({
        "state": info,
        "growth_factor": s,
        "balls": to_json(&balls.balls),
        "merges": balls.merge_log.len(),
        "lower_bound": to_json(&report),
        "jacobian": to_json(&jacobian),
    }))
}

fn gl_london(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["domain", "hex", "spacing"])?;
    let domain = parse_domain(cfg.raw("domain").unwrap_or("disk:1"))?;
    let h_ex = cfg.real("hex", 1.0)?;
    let spacing = cfg.real("spacing", 1.0 / 64.0)?;
    let grid: Grid = domain.node_grid(spacing)?;
    let h = london_solve(&GridField::zeros(grid), h_ex, &domain)?;
    out.csv("h.csv", &["x", "y", "h"], field_rows(&h))?;
    out.svg("h_slice.svg", &Plot::new("London field along y = 0", "x", "h").with("h", axis_slice(&h), Style::Line))?;
    Ok(json!({ "domain": to_json(&domain), "hex": h_ex, "spacing": spacing, "min": h.min(), "max": h.max() }))
}

fn gl_obstacle_cmd(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    cfg.check_keys(&["domain", "lambda", "spacing"])?;
    let domain = parse_domain(cfg.raw("domain").unwrap_or("disk:1"))?;
    let spacing = cfg.real("spacing", 1.0 / 32.0)?;
    let lambda = cfg.require_real("lambda")?;
    let critical = first_critical_lambda(&domain, spacing)?;
    let sol = gl_obstacle(lambda, &domain, spacing)?;
    let grid = &sol.h.grid;
    out.csv(
        "omega.csv",
        &["x", "y", "h", "omega"],
        (0..grid.len()).map(|k| {
            let p = grid.point(k);
            vec![num(p[0]), num(p[1]), num(sol.h.values[k]), u8::from(sol.omega[k]).to_string()]
        }),
    )?;
    let omega_pts: Vec<(f64, f64)> =
        (0..grid.len()).filter(|&k| sol.omega[k]).map(|k| grid.point(k)).map(|p| (p[0], p[1])).collect();
    out.svg("omega.svg", &Plot::new("coincidence set", "x", "y").with("omega", omega_pts, Style::Scatter))?;
    Ok(json!({
        "domain": to_json(&domain),
        "spacing": spacing,
        "lambda": lambda,
        "lambda_Omega": critical.lambda,
        "mu_level": sol.level,
        "omega_nodes": sol.omega_count(),
        "omega_area": sol.omega_count() as f64 * spacing * spacing,
    }))
}

fn gl_split(cfg: &RunConfig) -> Result<Value, CliError> {
    cfg.check_keys(&state_keys(&[]))?;
    let (state, info) = gl_state(cfg)?;
    let report = gl_splitting_check(&state)?;
    Ok(json!({ "state": info, "splitting": to_json(&report) }))
}

/// Re-runs a manifest and byte-compares every CSV artifact.
pub fn reproduce(manifest_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Value, CliError> {
    let original = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = RunConfig::from_map(original.config.clone())?;
    cfg.seed = seed.unwrap_or(original.seed);
    cfg.out = out.unwrap_or_else(|| dir.join("reproduce"));
    let same = |a: &Path, b: &Path| matches!((std::fs::canonicalize(a), std::fs::canonicalize(b)), (Ok(x), Ok(y)) if x == y);
    if same(&cfg.out, dir) {
        return Err(CliError::Usage("out: the reproduction must not overwrite the original run".into()));
    }
    let rerun = execute(cfg.clone())?;
    let mut compared = Vec::new();
    let mut divergence = None;
    for a in original.artifacts.iter().filter(|a| a.file.ends_with(".csv")) {
        let old = std::fs::read(dir.join(&a.file)).map_err(|e| CliError::Io(format!("{}: {e}", a.file)))?;
        let new = std::fs::read(cfg.out.join(&a.file)).unwrap_or_default();
        compared.push(a.file.clone());
        if let Some((line, column)) = first_difference(&old, &new) {
            divergence = Some(json!({ "file": a.file, "line": line, "column": column }));
            break;
        }
    }
    let status = match (&divergence, cfg.seed == original.seed) {
        (None, _) => "identical",
        (Some(_), false) => "expected-divergence",
        (Some(_), true) => "mismatch",
    };
    let value = json!({
        "status": status,
        "original_seed": original.seed,
        "seed": cfg.seed,
        "compared": compared,
        "first_divergence": divergence,
        "rerun": rerun,
    });
    if status == "mismatch" {
        let d = &value["first_divergence"];
        return Err(CliError::Mismatch(format!(
            "{} differs at line {}, column {}",
            d["file"].as_str().unwrap_or("?"),
            d["line"],
            d["column"]
        )));
    }
    Ok(value)
}
