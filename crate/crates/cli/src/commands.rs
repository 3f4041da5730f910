//! Subcommand implementations.

use std::path::{Path, PathBuf};

use icens_core::asymptotics::{Asymptotics, AsymptoticsReport, GridModel};
use icens_core::duality::{Diagnostics, DualityReport};
use icens_core::isotonics::curstat_msle;
use icens_core::mle_smle::{fit_mle, fit_smle, MleSolution};
use icens_core::msle_solver::fit_msle;
use icens_core::sample::CurrentStatusRecord;
use icens_core::simulation::{montecarlo_normality, rate_study, RateEstimator};
use icens_core::smoothing::smooth;
use icens_core::{CensoredSample, Delta, Grid, ObservationModel, QuadratureRule, SimDesign, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::io::{self, fmt_num, CliError, CliResult};

#[derive(Debug)]
pub enum Outcome {
    Done,
    /// Output was written but an iterative fit did not certify.
    NotConverged(String),
}

pub fn simulate(design: &SimDesign, out: Option<&Path>) -> CliResult<Outcome> {
    design.validate()?;
    let sample = design.replicate(0)?;
    io::write_sample(out, &sample)?;
    Ok(Outcome::Done)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Msle,
    Mle,
    Smle,
    CurstatMsle,
}

impl FitKind {
    fn name(self) -> &'static str {
        match self {
            FitKind::Msle => "msle",
            FitKind::Mle => "mle",
            FitKind::Smle => "smle",
            FitKind::CurstatMsle => "curstat-msle",
        }
    }
}

pub enum Source {
    File { path: PathBuf, upper: f64, epsilon: Option<f64> },
    Simulated(SimDesign),
}

pub struct FitSpec {
    pub source: Source,
    pub which: FitKind,
    pub bandwidth: Option<f64>,
    pub c: f64,
    pub cells: usize,
    pub rule: QuadratureRule,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FenchelResiduals {
    pub cumulative: f64,
    pub total: f64,
    pub increase: f64,
    pub tol: f64,
    pub passed: bool,
}

impl From<&DualityReport<f64>> for FenchelResiduals {
    fn from(r: &DualityReport<f64>) -> Self {
        Self {
            cumulative: r.cumulative_violation,
            total: r.total,
            increase: r.residual_at_increase,
            tol: r.tol,
            passed: r.passed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fenchel: Option<FenchelResiduals>,
    pub em_steps: usize,
    pub icm_steps: usize,
    pub degenerate_terms: usize,
}

impl From<&Diagnostics<f64>> for FitDiagnostics {
    fn from(d: &Diagnostics<f64>) -> Self {
        Self {
            loglik: d.loglik,
            iterations: d.iterations,
            converged: d.converged,
            fenchel: d.report.as_ref().map(FenchelResiduals::from),
            em_steps: d.em_steps,
            icm_steps: d.icm_steps,
            degenerate_terms: d.degenerate_terms,
        }
    }
}

impl From<&MleSolution<f64>> for FitDiagnostics {
    fn from(m: &MleSolution<f64>) -> Self {
        Self {
            loglik: Some(m.loglik),
            iterations: m.iterations,
            converged: m.converged,
            fenchel: None,
            em_steps: 0,
            icm_steps: 0,
            degenerate_terms: 0,
        }
    }
}

/// JSON document written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub estimator: FitKind,
    pub n: usize,
    pub upper: f64,
    pub epsilon: f64,
    /// `null` for the MLE.
    pub bandwidth: Option<f64>,
    pub grid: Vec<f64>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    /// Truth at the grid nodes for simulated data.
    #[serde(rename = "F0")]
    pub f0: Option<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    /// The MLE underlying an SMLE, or the MLE itself.
    pub mle: Option<MleSolution<f64>>,
}

pub fn fit(spec: &FitSpec, out_dir: Option<&Path>) -> CliResult<Outcome> {
    spec.solver.validate()?;
    let (sample, truth) = match &spec.source {
        Source::File { path, upper, epsilon } => (io::read_sample(path, *upper, *epsilon)?, None),
        Source::Simulated(d) => {
            d.validate()?;
            (d.replicate(0)?, Some(d.clone()))
        }
    };
    let grid = Grid::with_rule(sample.upper(), spec.cells, spec.rule)?;
    let b = spec.bandwidth.unwrap_or_else(|| spec.c * (sample.len() as f64).powf(-0.2));
    let (f, bandwidth, diagnostics, mle) = match spec.which {
        FitKind::Msle => {
            let dens = smooth(&sample, b, &grid)?;
            let est = fit_msle(&dens, &grid, &spec.solver)?;
            let d = FitDiagnostics::from(&est.diagnostics);
            (est.values, Some(b), d, None)
        }
        FitKind::Mle => {
            let m = fit_mle(&sample, &spec.solver)?;
            let f = grid.points().iter().map(|&t| m.cdf(t)).collect();
            (f, None, FitDiagnostics::from(&m), Some(m))
        }
        FitKind::Smle => {
            let m = fit_mle(&sample, &spec.solver)?;
            let f = fit_smle(&m, b, &grid)?;
            (f, Some(b), FitDiagnostics::from(&m), Some(m))
        }
        FitKind::CurstatMsle => {
            let cs = current_status(&sample);
            let est = curstat_msle(&cs, b, &grid)?;
            let mut d = FitDiagnostics::from(&est.diagnostics);
            d.converged = true;
            (est.values, Some(b), d, None)
        }
    };
    let f0 = truth.map(|d| grid.points().iter().map(|&t| d.cdf(t)).collect::<Vec<_>>());
    let output = FitOutput {
        estimator: spec.which,
        n: sample.len(),
        upper: sample.upper(),
        epsilon: sample.epsilon(),
        bandwidth,
        grid: grid.points().to_vec(),
        f,
        f0,
        diagnostics,
        mle,
    };
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let name = spec.which.name();
            io::write_json(&output, Some(&dir.join(format!("{name}.json"))))?;
            write_plot_data(&output, &dir.join(format!("{name}.tsv")))?;
        }
        None => io::write_json(&output, None)?,
    }
    Ok(if output.diagnostics.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged(format!("{} fit did not converge", spec.which.name()))
    })
}

fn current_status(sample: &CensoredSample<f64>) -> Vec<CurrentStatusRecord<f64>> {
    sample
        .records()
        .iter()
        .map(|r| CurrentStatusRecord { t: r.t, delta: r.delta == Delta::Left })
        .collect()
}

fn write_plot_data(out: &FitOutput, path: &Path) -> CliResult<()> {
    let rows = out.grid.iter().enumerate().map(|(i, &t)| {
        let mut row = vec![fmt_num(t), fmt_num(out.f[i])];
        if let Some(f0) = &out.f0 {
            row.push(fmt_num(f0[i]));
        }
        row
    });
    let header: &[&str] = if out.f0.is_some() { &["t", "F_hat", "F0"] } else { &["t", "F_hat"] };
    io::write_table(Some(path), '\t', header, rows)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })
}

pub fn asymptotics(
    design: &SimDesign,
    points: &[f64],
    with_toy: bool,
    with_linear: bool,
    out: Option<&Path>,
) -> CliResult<Outcome> {
    design.validate()?;
    let asym = Asymptotics::new(design);
    let points = points.iter().map(|&v| asym.point(v)).collect::<icens_core::Result<Vec<_>>>()?;
    let mut report = AsymptoticsReport { points, grid: None, toy: None, linear: None };
    if with_toy || with_linear {
        let grid = design.grid()?;
        let sample = design.replicate(0)?;
        let dens = smooth(&sample, design.bandwidth(), &grid)?;
        let model = GridModel::new(design, &grid)?;
        report.grid = Some(grid.points().to_vec());
        if with_toy {
            report.toy = Some(model.toy_estimator(&dens, &grid)?);
        }
        if with_linear {
            report.linear = Some(model.solve_linear(&dens, &grid)?);
        }
    }
    io::write_json(&report, out)?;
    Ok(Outcome::Done)
}

pub fn montecarlo(design: &SimDesign, config: &SolverConfig, out_dir: Option<&Path>) -> CliResult<Outcome> {
    let report = montecarlo_normality(design, config)?;
    let mut summary = serde_json::to_value(&report).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(o) = summary.as_object_mut() {
        o.remove("replications");
    }
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let rows = report.replications.iter().map(|r| {
                vec![
                    r.seed.to_string(),
                    r.rep.to_string(),
                    r.n.to_string(),
                    fmt_num(r.b),
                    fmt_num(r.v),
                    fmt_num(r.f_hat),
                    fmt_num(r.z),
                    u8::from(r.converged).to_string(),
                ]
            });
            io::write_table(
                Some(&dir.join("replications.csv")),
                ',',
                &["seed", "rep", "n", "b", "v", "F_hat", "z", "converged"],
                rows,
            )?;
            io::write_json(&summary, Some(&dir.join("summary.json")))?;
        }
        None => io::write_json(&summary, None)?,
    }
    Ok(if report.budget_ok {
        Outcome::Done
    } else {
        Outcome::NotConverged(format!(
            "{} of {} replications failed the optimality certificate",
            report.nonconverged, report.reps
        ))
    })
}

pub fn rate(
    design: &SimDesign,
    sizes: &[usize],
    estimator: RateEstimator,
    config: &SolverConfig,
    out_dir: Option<&Path>,
) -> CliResult<Outcome> {
    let report = rate_study(design, sizes, estimator, config)?;
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let rows = report.rows.iter().map(|r| {
                vec![r.n.to_string(), fmt_num(r.bandwidth), fmt_num(r.rmse), r.nonconverged.to_string()]
            });
            io::write_table(Some(&dir.join("rate.csv")), ',', &["n", "b", "rmse", "nonconverged"], rows)?;
            io::write_json(&report, Some(&dir.join("rate.json")))?;
        }
        None => io::write_json(&report, None)?,
    }
    let failed: usize = report.rows.iter().map(|r| r.nonconverged).sum();
    Ok(if failed == 0 {
        Outcome::Done
    } else {
        Outcome::NotConverged(format!("{failed} fits did not converge"))
    })
}
