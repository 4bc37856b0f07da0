//! The experiment commands. Grid rows run on the rayon pool; results are
//! collected in grid order and written from one thread.

use std::path::PathBuf;

use ahx::flow::{scattering_jacobian, trace_geodesic, BoundaryCovector, GeodesicTrajectory};
use ahx::jacobi::{covector_grid, simplicity_check, SimplicityOptions};
use ahx::metric::{make_family, BoundaryMetricFamily};
use ahx::recover::{default_deltas, recover_asymptotic_at, recover_jet_fit, FitOptions, JetEstimate, SynthesisOptions};
use ahx::renorm::{boundary_distance, default_lambda_grid, renormalized_length, renormalized_length_mellin};
use ahx::xray::{xray_along, SymmetricTensorField};
use ahx::{AhxError, Family};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    BumpField, CovectorGrid, DiagnoseCfg, DistanceCfg, ExperimentConfig, LengthCfg, MethodChoice, RecoverCfg, ScatterCfg, TraceCfg,
    XrayCfg,
};
use crate::output::{Cell, Table, Writer};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Trace,
    Scatter,
    Length,
    Distance,
    Xray,
    Recover,
    Diagnose,
}

impl Command {
    fn key(self) -> &'static str {
        match self {
            Command::Trace => "trace",
            Command::Scatter => "scatter",
            Command::Length => "length",
            Command::Distance => "distance",
            Command::Xray => "xray",
            Command::Recover => "recover",
            Command::Diagnose => "diagnose",
        }
    }
}

fn section<'a, T>(s: &'a Option<T>, cmd: Command) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("config has no \"{}\" section", cmd.key())))
}

/// Runs one command and returns the paths written.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let family: Family = make_family(&cfg.metric)?;
    match cmd {
        Command::Trace => cmd_trace(&family, cfg, section(&cfg.trace, cmd)?, out),
        Command::Scatter => cmd_scatter(&family, cfg, section(&cfg.scatter, cmd)?, out),
        Command::Length => cmd_length(&family, cfg, section(&cfg.length, cmd)?, out),
        Command::Distance => cmd_distance(&family, section(&cfg.distance, cmd)?, out),
        Command::Xray => cmd_xray(&family, cfg, section(&cfg.xray, cmd)?, out),
        Command::Recover => cmd_recover(&family, cfg, section(&cfg.recover, cmd)?, out),
        Command::Diagnose => cmd_diagnose(&family, cfg, section(&cfg.diagnose, cmd)?, out),
    }
}

fn status(r: &Result<Vec<Cell>, AhxError>) -> Cell {
    Cell::Text(match r {
        Ok(_) => "ok".into(),
        Err(e @ AhxError::TrappedOrSlow { .. }) => format!("trapped: {e}"),
        Err(e) => format!("failed: {e}"),
    })
}

/// Appends per-row results, filling failed rows with NaN and recording the status.
fn fill(table: &mut Table, lead: Vec<Vec<Cell>>, results: Vec<Result<Vec<Cell>, AhxError>>) {
    let width = table.columns.len();
    for (mut row, r) in lead.into_iter().zip(results) {
        let st = status(&r);
        let n_out = width - row.len() - 1;
        match r {
            Ok(v) => row.extend(v),
            Err(_) => row.extend(std::iter::repeat(Cell::Num(f64::NAN)).take(n_out)),
        }
        row.push(st);
        table.push(row);
    }
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (0..n).map(|i| format!("{prefix}_{i}")).collect()
    }
}

fn nums(v: &[f64]) -> Vec<Cell> {
    v.iter().map(|&x| Cell::Num(x)).collect()
}

fn expand_grid(family: &Family, g: &CovectorGrid) -> Result<Vec<BoundaryCovector<f64>>, CliError> {
    let n = family.dim;
    let ys: Vec<Vec<f64>> = g.ys.iter().map(|p| p.to_vec()).collect();
    let etas: Vec<Vec<f64>> = g.etas.iter().map(|p| p.to_vec()).collect();
    if ys.iter().chain(&etas).any(|v| v.len() != n) {
        return Err(CliError::Config(format!("grid points must have {n} components")));
    }
    Ok(ys.iter().flat_map(|y| etas.iter().map(move |e| BoundaryCovector::incoming(y.clone(), e.clone()))).collect())
}

fn lead_columns(n: usize) -> Vec<String> {
    let mut c = indexed("y", n);
    c.extend(indexed("eta", n));
    c
}

fn lead_cells(z: &BoundaryCovector<f64>) -> Vec<Cell> {
    let mut v = nums(&z.y);
    v.extend(nums(&z.eta));
    v
}

#[derive(Serialize)]
struct TraceSummary {
    y_in: Vec<f64>,
    eta_in: Vec<f64>,
    y_out: Vec<f64>,
    eta_out: Vec<f64>,
    tau_plus: f64,
    renormalized_length: f64,
    chart_switches: usize,
}

fn cmd_trace(family: &Family, cfg: &ExperimentConfig, t: &TraceCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let z = BoundaryCovector::incoming(t.y.to_vec(), t.eta.to_vec());
    let n = family.dim;
    if z.y.len() != n || z.eta.len() != n {
        return Err(CliError::Config(format!("trace.y and trace.eta need {n} components")));
    }
    let traj = trace_geodesic(family, &z, &cfg.trace_options())?;
    let mut cols = vec!["tau".to_string(), "rho".into()];
    cols.extend(indexed("y", n));
    cols.push("xi_bar0".into());
    cols.extend(indexed("eta", n));
    let mut table = Table::new(cols);
    let mut path = Vec::new();
    for k in 0..t.samples {
        let tau = traj.tau_plus * k as f64 / (t.samples - 1) as f64;
        let s = traj.state(tau);
        let rho = traj.rho(tau);
        let mut row = vec![Cell::Num(tau), Cell::Num(rho)];
        row.extend(nums(&s.y));
        row.push(Cell::Num(s.xi_bar0));
        row.extend(nums(&s.eta));
        table.push(row);
        path.push((s.y[0], rho));
    }
    let mut written = vec![out.csv("trajectory.csv", &table)?];
    let end = traj.outgoing(family);
    let summary = TraceSummary {
        y_in: z.y.clone(),
        eta_in: z.eta.clone(),
        y_out: traj.outgoing_unreduced(),
        eta_out: end.eta,
        tau_plus: traj.tau_plus,
        renormalized_length: renormalized_length(&traj)?.length,
        chart_switches: traj.orbit.chart_switches.len(),
    };
    written.push(out.json("trace.json", &summary)?);
    if t.svg {
        written.push(out.svg("trajectory.svg", "geodesic", "y", "rho", &[path])?);
    }
    Ok(written)
}

fn cmd_scatter(family: &Family, cfg: &ExperimentConfig, s: &ScatterCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let n = family.dim;
    let grid = expand_grid(family, &s.grid)?;
    let mut cols = lead_columns(n);
    cols.extend(indexed("y_out", n));
    cols.extend(indexed("eta_out", n));
    if s.jacobian {
        cols.push("det".into());
        cols.push("symplectic_residual".into());
    }
    cols.push("status".into());
    let opts = cfg.trace_options();
    let results: Vec<Result<Vec<Cell>, AhxError>> = grid
        .par_iter()
        .map(|z| {
            let traj = trace_geodesic(family, z, &opts)?;
            let mut v = nums(&traj.outgoing_unreduced());
            v.extend(nums(&traj.orbit.end.eta));
            if s.jacobian {
                let j = scattering_jacobian(family, z, s.fd_step, &opts)?;
                v.push(Cell::Num(j.det));
                v.push(Cell::Num(j.symplectic_residual));
            }
            Ok(v)
        })
        .collect();
    let mut table = Table::new(cols);
    fill(&mut table, grid.iter().map(lead_cells).collect(), results);
    Ok(vec![out.csv("scatter.csv", &table)?])
}

fn cmd_length(family: &Family, cfg: &ExperimentConfig, l: &LengthCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let n = family.dim;
    let grid = expand_grid(family, &l.grid)?;
    let mut cols = lead_columns(n);
    let (reg, mel) = match l.method {
        MethodChoice::Regularized => (true, false),
        MethodChoice::Mellin => (false, true),
        MethodChoice::Both => (true, true),
    };
    if reg {
        cols.extend(["length".to_string(), "estimated_error".into()]);
    }
    if mel {
        cols.extend(["length_mellin".to_string(), "mellin_error".into(), "residue_error".into()]);
    }
    cols.push("status".into());
    let opts = cfg.trace_options();
    let lambdas = default_lambda_grid::<f64>();
    let results: Vec<Result<Vec<Cell>, AhxError>> = grid
        .par_iter()
        .map(|z| {
            let traj = trace_geodesic(family, z, &opts)?;
            let mut v = Vec::new();
            if reg {
                let r = renormalized_length(&traj)?;
                v.extend([Cell::Num(r.length), Cell::Num(r.estimated_error)]);
            }
            if mel {
                let r = renormalized_length_mellin(&traj, &lambdas)?;
                v.extend([Cell::Num(r.length), Cell::Num(r.estimated_error), Cell::Num(r.residue_error.unwrap_or(f64::NAN))]);
            }
            Ok(v)
        })
        .collect();
    let mut table = Table::new(cols);
    fill(&mut table, grid.iter().map(lead_cells).collect(), results);
    Ok(vec![out.csv("length.csv", &table)?])
}

fn cmd_distance(family: &Family, d: &DistanceCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let n = family.dim;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = d.pairs.iter().map(|[a, b]| (a.to_vec(), b.to_vec())).collect();
    if pairs.iter().any(|(a, b)| a.len() != n || b.len() != n) {
        return Err(CliError::Config(format!("distance pairs need {n} components per point")));
    }
    let mut cols = indexed("y_minus", n);
    cols.extend(indexed("y_plus", n));
    cols.push("d_r".into());
    cols.extend(indexed("eta_star", n));
    cols.push("newton_iters".into());
    cols.push("status".into());
    let results: Vec<Result<Vec<Cell>, AhxError>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let r = boundary_distance(family, a, b, d.newton_tol)?;
            let mut v = vec![Cell::Num(r.d_r)];
            v.extend(nums(&r.eta_star));
            v.push(Cell::Int(r.newton_iters as i64));
            Ok(v)
        })
        .collect();
    let mut chart = Vec::new();
    if n == 1 {
        for ((a, b), r) in pairs.iter().zip(&results) {
            if let Ok(v) = r {
                if let Cell::Num(dr) = v[0] {
                    chart.push((family.y_diff(a, b)[0], dr));
                }
            }
        }
    }
    let lead = pairs
        .iter()
        .map(|(a, b)| {
            let mut v = nums(a);
            v.extend(nums(b));
            v
        })
        .collect();
    let mut table = Table::new(cols);
    fill(&mut table, lead, results);
    let mut written = vec![out.csv("distance.csv", &table)?];
    if !chart.is_empty() {
        written.push(out.svg("distance.svg", "renormalized distance", "y_plus - y_minus", "d_R", &[chart])?);
    }
    Ok(written)
}

fn bump_field(family: &Family, b: &BumpField) -> Result<SymmetricTensorField<f64>, CliError> {
    let n = family.dim;
    if b.center.len() != n + 1 {
        return Err(CliError::Config(format!("xray.field.center needs {} components [rho, y...]", n + 1)));
    }
    let fam = family.clone();
    let (c, w, a, k) = (b.center.clone(), b.width, b.amplitude, b.weight);
    let f = SymmetricTensorField::scalar(n, k, move |rho: f64, y: &[f64]| {
        let dy = fam.y_diff(&c[1..], y);
        let r2 = (rho - c[0]).powi(2) + dy.iter().map(|d| d * d).sum::<f64>();
        a * rho.powi(k) * (-r2 / (2.0 * w * w)).exp()
    });
    f.check_admissible().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(f)
}

fn cmd_xray(family: &Family, cfg: &ExperimentConfig, x: &XrayCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let f = bump_field(family, &x.field)?;
    let grid = expand_grid(family, &x.grid)?;
    let mut cols = lead_columns(family.dim);
    cols.extend(["value".to_string(), "quadrature_error".into(), "status".into()]);
    let opts = cfg.trace_options();
    let results: Vec<Result<Vec<Cell>, AhxError>> = grid
        .par_iter()
        .map(|z| {
            let traj: GeodesicTrajectory<f64> = trace_geodesic(family, z, &opts)?;
            let q = xray_along(family, &f, &traj, cfg.tol)?;
            Ok(vec![Cell::Num(q.value), Cell::Num(q.error)])
        })
        .collect();
    let mut table = Table::new(cols);
    fill(&mut table, grid.iter().map(lead_cells).collect(), results);
    Ok(vec![out.csv("xray.csv", &table)?])
}

#[derive(Serialize)]
struct RecoverReport {
    asymptotic: JetEstimate,
    first_jet: ahx::recover::FirstJetEstimate,
    h0_estimate: ahx::recover::H0Estimate,
    fit: Option<JetEstimate>,
    fit_error: Option<String>,
}

fn cmd_recover(family: &Family, cfg: &ExperimentConfig, r: &RecoverCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    let n = family.dim;
    let y0 = r.y0.to_vec();
    let dirs: Vec<Vec<f64>> = r.directions.iter().map(|d| d.to_vec()).collect();
    if y0.len() != n || dirs.iter().any(|d| d.len() != n) {
        return Err(CliError::Config(format!("recover.y0 and directions need {n} components")));
    }
    let deltas = r.deltas.clone().unwrap_or_else(default_deltas);
    let synth = SynthesisOptions { trace: ahx::flow::TraceOptions { t_max: cfg.t_max, ..SynthesisOptions::default().trace }, noise: r.noise, seed: cfg.seed };
    let rec = recover_asymptotic_at(family, &y0, &dirs, &deltas, r.step, &synth)?;
    let (fit, fit_error) = if r.fit {
        match recover_jet_fit(&rec.samples, r.k_max, &FitOptions::default()) {
            Ok(j) => (Some(j), None),
            Err(e @ (AhxError::FitFailure(_) | AhxError::Unsupported(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        }
    } else {
        (None, None)
    };
    let mut cols = indexed("omega", n);
    cols.extend(["delta".to_string(), "length".into()]);
    let mut table = Table::new(cols);
    for (w, row) in rec.samples.directions.iter().zip(&rec.samples.lengths) {
        for (d, l) in deltas.iter().zip(row) {
            let mut cells = nums(w);
            cells.extend([Cell::Num(*d), Cell::Num(*l)]);
            table.push(cells);
        }
    }
    let report = RecoverReport { asymptotic: rec.jet, first_jet: rec.first_jet, h0_estimate: rec.h0, fit, fit_error };
    Ok(vec![out.csv("samples.csv", &table)?, out.json("jet.json", &report)?])
}

fn cmd_diagnose(family: &BoundaryMetricFamily<f64>, cfg: &ExperimentConfig, d: &DiagnoseCfg, out: &Writer) -> Result<Vec<PathBuf>, CliError> {
    if family.dim != 1 {
        return Err(CliError::Core(AhxError::Unsupported("diagnostics are implemented for n = 1".into())));
    }
    let mut o = SimplicityOptions::default();
    if let Some(t) = d.t_asym {
        o.t_asym = t;
    }
    if let Some(b) = &d.base_times {
        o.base_times = b.clone();
    }
    if let Some(s) = d.conjugate_span {
        o.conjugate_span = s;
    }
    o.trace.t_max = cfg.t_max;
    let report = simplicity_check(family, &covector_grid(&d.ys, &d.etas), &o);
    Ok(vec![out.json("diagnose.json", &report)?])
}
