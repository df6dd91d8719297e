use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hjb_core::model::{check_conditions, DomainBox, ModelSpec};
use hjb_core::montecarlo::{
    estimate_dual, estimate_utility_direct, estimate_utility_girsanov, z_score, ConstantPolicy, Estimate,
    MarkovControl, Policy, SimConfig,
};
use hjb_core::pde::{
    cutoff_convergence, extract_policy, growth_diagnostics, read_binary, residual, solve_semilinear,
    stable_time_step, write_binary, write_csv, CutoffTable, Grid, GrowthReport, PolicyField, SolverConfig,
    ValueField,
};
use serde::Serialize;

use crate::config::{PointConfig, RunConfig, SCHEMA_VERSION};
use crate::CliError;

pub const FIELD_FILE: &str = "field.bin";
pub const FIELD_CSV: &str = "field.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONDITIONS_FILE: &str = "conditions.json";
pub const VERIFY_FILE: &str = "verify.json";

/// Relative slack for comparisons whose two sides agree up to rounding.
const ROUNDING: f64 = 1e-9;

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Versioned { schema_version: SCHEMA_VERSION, body })
        .map_err(|e| CliError::Failure(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(dir)
}

pub fn cmd_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let domain = cfg.conditions.domain.clone().unwrap_or_else(|| DomainBox::default_for(&model));
    let dim = model.dims().state();
    if domain.lower.len() != dim || domain.upper.len() != dim {
        return Err(CliError::Usage(format!("condition domain needs {dim} coordinates per corner")));
    }
    let report = check_conditions(&model, &domain, cfg.conditions.samples, cfg.conditions.seed, &cfg.conditions.bounds);
    let path = output_dir(cfg)?.join(CONDITIONS_FILE);
    write_json(&path, &report)?;
    Ok(Outcome { passed: report.all_pass(), files: vec![path] })
}

/// Grid quantities at the evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeValues {
    pub u: f64,
    /// `(w0^a/a) e^{-u}`.
    pub v: f64,
    pub gradient: Vec<f64>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalCheck {
    pub max_abs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub power: f64,
    pub grid: Grid,
    pub solver: SolverConfig,
    pub point: PointConfig,
    pub dt: f64,
    /// Explicit stability limit times the safety factor.
    pub dt_limit: f64,
    pub values: PdeValues,
    pub max_residual: f64,
    /// `Σ ρ_j dt` over layers at or after `t0`.
    pub integrated_residual: f64,
    pub growth: GrowthReport,
    pub terminal: TerminalCheck,
    pub cutoff_active_nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_table: Option<CutoffTable>,
}

pub struct Solved {
    pub model: ModelSpec,
    pub field: ValueField,
    pub policy: PolicyField,
    pub summary: SolveSummary,
}

fn pde_values(model: &ModelSpec, field: &ValueField, policy: &PolicyField, point: &PointConfig) -> PdeValues {
    let u = field.value_at(point.t0, &point.z0);
    let a = model.power();
    let mut pi = vec![0.0; model.dims().n];
    policy.weights(point.t0, &point.z0, &mut pi);
    PdeValues {
        u,
        v: point.w0.powf(a) / a * (-u).exp(),
        gradient: field.gradient_at(point.t0, &point.z0),
        pi,
    }
}

/// Solves, extracts the policy and computes the diagnostics, without writing files.
pub fn solve(cfg: &RunConfig) -> Result<Solved, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid(&model)?;
    let field = solve_semilinear(&model, &grid, &cfg.solver)?;
    let policy = extract_policy(&field, &model)?;
    let res = residual(&field, &model)?;
    let growth = growth_diagnostics(&field, &model)?;
    let cutoff_table = match &cfg.cutoffs {
        Some(radii) => Some(cutoff_convergence(&model, &grid, &cfg.solver, radii)?),
        None => None,
    };
    let max_abs = field.terminal_max_abs();
    let summary = SolveSummary {
        model: model.name().to_string(),
        params: cfg.model.params.clone(),
        power: model.power(),
        dt: grid.dt(),
        dt_limit: cfg.solver.safety * stable_time_step(&model, &grid)?,
        grid,
        solver: cfg.solver.clone(),
        point: cfg.point.clone(),
        values: pde_values(&model, &field, &policy, &cfg.point),
        max_residual: res.global,
        integrated_residual: res.integrated_from(cfg.point.t0),
        growth,
        terminal: TerminalCheck { max_abs, pass: max_abs == 0.0 },
        cutoff_active_nodes: field.cutoff_active().iter().sum(),
        cutoff_table,
    };
    Ok(Solved { model, field, policy, summary })
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let solved = solve(cfg)?;
    let dir = output_dir(cfg)?;
    let bin = dir.join(FIELD_FILE);
    let csv = dir.join(FIELD_CSV);
    let summary = dir.join(SUMMARY_FILE);
    let create = |path: &Path| File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e));

    let mut out = create(&bin)?;
    write_binary(&solved.field, Some(&solved.policy), &mut out)?;
    out.flush().map_err(|e| io_error(&bin, e))?;
    let mut out = create(&csv)?;
    write_csv(&solved.field, Some(&solved.policy), &mut out)?;
    out.flush().map_err(|e| io_error(&csv, e))?;
    write_json(&summary, &solved.summary)?;
    Ok(Outcome { passed: solved.summary.terminal.pass, files: vec![bin, csv, summary] })
}

/// One gated comparison `lhs` vs `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub combined_stderr: f64,
    /// Deterministic slack added to `3·combined_stderr`: grid error bound plus rounding.
    pub allowance: f64,
    /// `|lhs - rhs| / combined_stderr`; `null` when the stderr vanishes and the sides differ.
    pub z_score: f64,
    /// Only `lhs > rhs` counts as disagreement.
    pub one_sided: bool,
    pub pass: bool,
}

impl Comparison {
    fn new(name: &str, lhs: (f64, f64), rhs: (f64, f64), grid_allowance: f64, one_sided: bool) -> Comparison {
        let difference = lhs.0 - rhs.0;
        let combined_stderr = (lhs.1 * lhs.1 + rhs.1 * rhs.1).sqrt();
        let allowance = grid_allowance + ROUNDING * (1.0 + lhs.0.abs().max(rhs.0.abs()));
        let excess = if one_sided { difference } else { difference.abs() };
        Comparison {
            name: name.to_string(),
            lhs: lhs.0,
            rhs: rhs.0,
            difference,
            combined_stderr,
            allowance,
            z_score: z_score(lhs.0, lhs.1, rhs.0, rhs.1),
            one_sided,
            pass: excess <= 3.0 * combined_stderr + allowance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub model: String,
    /// `grid` for the extracted policy, `zero` for the all-cash portfolio.
    pub policy: String,
    pub monte_carlo: SimConfig,
    pub point: PointConfig,
    pub pde: PdeValues,
    pub integrated_residual: f64,
    pub direct: Estimate,
    pub girsanov: Estimate,
    pub dual_value: Estimate,
    pub dual_gradient: Vec<Estimate>,
    pub comparisons: Vec<Comparison>,
    /// The policy's value lies significantly below the PDE value.
    pub suboptimal: bool,
    pub pass: bool,
}

/// Runs the three value estimators and the pathwise gradient against a
/// solved field. With `zero_policy` the portfolio is held at zero and the
/// utility estimates are only required not to exceed the PDE value.
pub fn verify(
    cfg: &RunConfig,
    model: &ModelSpec,
    field: &ValueField,
    policy: &PolicyField,
    zero_policy: bool,
) -> Result<VerifyReport, CliError> {
    let point = &cfg.point;
    let (t0, z0, w0) = (point.t0, point.z0.as_slice(), point.w0);
    let mc = &cfg.monte_carlo;
    let zero = ConstantPolicy::zero(model.dims().n);
    let used: &dyn Policy = if zero_policy { &zero } else { policy };

    let pde = pde_values(model, field, policy, point);
    let integrated = residual(field, model)?.integrated_from(t0);
    let du = 2.0 * integrated;
    let dv = pde.v.abs() * du.exp_m1();

    let direct = estimate_utility_direct(model, used, w0, t0, z0, mc)?;
    let girsanov = estimate_utility_girsanov(model, used, w0, t0, z0, mc)?;
    let control = MarkovControl::from_field(field);
    let (dual_value, dual_gradient) = estimate_dual(model, &control, t0, z0, mc)?;

    let ms = |e: &Estimate| (e.mean, e.stderr);
    let exact = |x: f64| (x, 0.0);
    let mut comparisons = vec![
        Comparison::new("direct_vs_girsanov", ms(&direct), ms(&girsanov), 0.0, false),
        Comparison::new("direct_vs_pde", ms(&direct), exact(pde.v), dv, zero_policy),
        Comparison::new("girsanov_vs_pde", ms(&girsanov), exact(pde.v), dv, zero_policy),
        Comparison::new("dual_vs_pde", ms(&dual_value), exact(pde.u), du, false),
    ];
    for (k, g) in dual_gradient.iter().enumerate() {
        comparisons.push(Comparison::new(&format!("dual_gradient[{k}]_vs_pde"), ms(g), exact(pde.gradient[k]), du, false));
    }
    let suboptimal = {
        let c = &comparisons[1];
        -c.difference > 3.0 * c.combined_stderr + c.allowance
    };
    Ok(VerifyReport {
        model: model.name().to_string(),
        policy: if zero_policy { "zero" } else { "grid" }.to_string(),
        monte_carlo: mc.clone(),
        point: point.clone(),
        pass: comparisons.iter().all(|c| c.pass),
        pde,
        integrated_residual: integrated,
        direct,
        girsanov,
        dual_value,
        dual_gradient,
        comparisons,
        suboptimal,
    })
}

/// Loads the field written by [`cmd_solve`] and checks it belongs to `cfg`.
fn load_field(cfg: &RunConfig, model: &ModelSpec) -> Result<(ValueField, PolicyField), CliError> {
    let path = cfg.output_dir.join(FIELD_FILE);
    let file = File::open(&path)
        .map_err(|e| CliError::Usage(format!("{}: {e}; run `solve` first", path.display())))?;
    let (field, weights) = read_binary(BufReader::new(file))?;
    let grid = cfg.grid(model)?;
    let meta = &field.meta;
    if meta.model != model.name() || meta.power != model.power() || meta.cutoff != cfg.solver.cutoff || field.grid != grid
    {
        return Err(CliError::Usage(format!(
            "{} was solved for a different configuration; rerun `solve`",
            path.display()
        )));
    }
    let policy = match weights {
        Some(w) => PolicyField::from_weights(model, grid, w)?,
        None => extract_policy(&field, model)?,
    };
    Ok((field, policy))
}

pub fn cmd_verify(cfg: &RunConfig, zero_policy: bool) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let (field, policy) = load_field(cfg, &model)?;
    let report = verify(cfg, &model, &field, &policy, zero_policy)?;
    let path = output_dir(cfg)?.join(VERIFY_FILE);
    write_json(&path, &report)?;
    Ok(Outcome { passed: report.pass, files: vec![path] })
}

/// Solves and verifies once per value of `axis` (`cutoff` or a model
/// parameter) and writes one CSV row each.
pub fn cmd_sweep(cfg: &RunConfig, axis: &str, values: &[f64]) -> Result<Outcome, CliError> {
    if axis.is_empty() || axis.contains(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        return Err(CliError::Usage(format!("invalid sweep axis '{axis}'")));
    }
    let n = cfg.model()?.dims().n;
    let weight_names: Vec<String> =
        (0..n).map(|k| if n == 1 { "pi".to_string() } else { format!("pi{}", k + 1) }).collect();
    let mut header = vec!["axis", "value", "u", "v"];
    header.extend(weight_names.iter().map(String::as_str));
    header.extend([
        "max_residual",
        "integrated_residual",
        "growth_ratio",
        "direct_mean",
        "direct_stderr",
        "girsanov_mean",
        "girsanov_stderr",
        "dual_mean",
        "dual_stderr",
        "sup_diff",
        "active_nodes",
        "pass",
    ]);

    let path = output_dir(cfg)?.join(format!("sweep_{axis}.csv"));
    let mut writer = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
    writer.write_record(&header).map_err(|e| io_error(&path, e))?;

    let mut uncut: Option<ValueField> = None;
    let mut passed = true;
    for &value in values {
        let run = cfg.with_parameter(axis, value)?;
        let solved = solve(&run)?;
        let report = verify(&run, &solved.model, &solved.field, &solved.policy, false)?;
        let s = &solved.summary;
        let (sup_diff, active) = if axis == "cutoff" {
            if uncut.is_none() {
                let base = cfg.with_parameter("cutoff", 0.0)?;
                uncut = Some(solve_semilinear(&solved.model, &solved.field.grid, &base.solver)?);
            }
            let reference = uncut.as_ref().expect("uncut field solved above");
            let diff = solved
                .field
                .values()
                .iter()
                .zip(reference.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            (diff.to_string(), s.cutoff_active_nodes.to_string())
        } else {
            (String::new(), String::new())
        };
        passed &= report.pass;
        let mut row = vec![axis.to_string(), value.to_string(), s.values.u.to_string(), s.values.v.to_string()];
        row.extend(s.values.pi.iter().map(f64::to_string));
        row.extend([
            s.max_residual.to_string(),
            s.integrated_residual.to_string(),
            s.growth.ratio.to_string(),
            report.direct.mean.to_string(),
            report.direct.stderr.to_string(),
            report.girsanov.mean.to_string(),
            report.girsanov.stderr.to_string(),
            report.dual_value.mean.to_string(),
            report.dual_value.stderr.to_string(),
            sup_diff,
            active,
            report.pass.to_string(),
        ]);
        writer.write_record(&row).map_err(|e| io_error(&path, e))?;
    }
    writer.flush().map_err(|e| io_error(&path, e))?;
    Ok(Outcome { passed, files: vec![path] })
}
