use std::fmt::Write as _;
use std::path::Path;

use rdueq_core::autonomous::{classify_time_invariant, AutonomousProblem, ClassificationResult, DsesCase};
use rdueq_core::equilibrium::{build_strategy, classify_timevar, optimal_eta_search, EquilibriumStrategy};
use rdueq_core::model::Strategy;
use rdueq_core::ode::{OdeSolution, CLAMP_FLOOR};
use rdueq_core::problem::Problem;
use rdueq_core::timevar::{estimate_eta_star, eta_star_bisection, solve_forward, TimevarProblem};
use rdueq_core::verify::{default_t_grid, equilibrium_check, CheckConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{Format, RunConfig};
use crate::{Common, Failure};

/// 17 significant digits, enough to round-trip an f64.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

struct Run {
    cfg: RunConfig,
    format: Format,
    out: Option<std::path::PathBuf>,
}

impl Run {
    fn new(common: &Common) -> Result<Self, Failure> {
        let cfg = RunConfig::load(&common.config)?;
        let format = if common.json { Format::Json } else { cfg.output.format };
        let out = common.out.clone().or_else(|| cfg.output.path.clone().map(Into::into));
        Ok(Self { cfg, format, out })
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(path) => std::fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn emit_json(&self, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
        text.push('\n');
        self.emit(&text)
    }

    fn timevar(&self) -> Result<TimevarProblem, Failure> {
        let p = self.cfg.problem()?;
        Ok(TimevarProblem::new(p.market, p.h, p.gamma)?)
    }
}

fn classification(run: &Run) -> Result<(Problem, ClassificationResult), Failure> {
    let p = run.cfg.problem()?;
    let r = if p.h.is_time_invariant() {
        let ap = AutonomousProblem::new(p.market.clone(), p.h.clone(), p.gamma)?;
        classify_time_invariant(&ap, run.cfg.solver.steps)?
    } else {
        classify_timevar(&TimevarProblem::new(p.market.clone(), p.h.clone(), p.gamma)?, &run.cfg.solver())?
    };
    Ok((p, r))
}

fn headline(r: &ClassificationResult) -> String {
    let roman = ["i", "ii", "iii", "iv", "v", "vi"];
    let eta_star = r.timevar.as_ref().and_then(|d| d.eta_star.as_ref()).map(|e| e.eta_star);
    match (r.case, eta_star) {
        _ if roman.contains(&r.label.as_str()) => format!("case ({}): {}", r.label, r.case.describe()),
        (DsesCase::Family, Some(eta)) => format!("family of DSESes, eta* ~ {eta:.6e}"),
        _ => format!("{}: {}", r.case.describe(), r.label),
    }
}

pub fn classify(common: &Common) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let (_, r) = classification(&run)?;
    if run.format == Format::Json {
        return run.emit_json(&r);
    }
    let d = &r.diagnostics;
    let mut text = headline(&r);
    text.push('\n');
    let opt = |v: Option<f64>| v.map_or("inf".to_string(), num);
    let rows = [
        ("h_x(0)", num(d.hx0)),
        ("h_xx(0)", num(d.hxx0)),
        ("1 - gamma h_xx(0)", num(d.curvature)),
        ("y1", opt(d.y1)),
        ("G(y1)", d.g_y1.map_or("above theta^2 T".to_string(), num)),
        ("theta^2 T", num(d.theta2_t)),
    ];
    for (k, v) in rows {
        let _ = writeln!(text, "  {k:<18} {v}");
    }
    for f in &d.flags {
        let _ = writeln!(text, "  flag: {f}");
    }
    run.emit(&text)
}

/// Strategy and exposure path for `solve`; `eta = None` asks for the
/// maximal (or unique) solution.
fn solution(run: &Run, eta: Option<f64>) -> Result<(Problem, EquilibriumStrategy), Failure> {
    let p = run.cfg.problem()?;
    let steps = run.cfg.solver.steps;
    if eta == Some(0.0) {
        let eq = build_strategy(&p, &OdeSolution::zero(p.market.horizon(), steps))?;
        return Ok((p, eq));
    }
    if p.h.is_time_invariant() {
        if eta.is_some() {
            return Err(Failure::Input("time-invariant weightings have a unique exposure path; use --maximal or --eta 0".into()));
        }
        let (p, r) = classification(run)?;
        return match (r.case, r.y) {
            (DsesCase::NonzeroUnique | DsesCase::ZeroUnique, Some(y)) => {
                let eq = build_strategy(&p, &y)?;
                Ok((p, eq))
            }
            (DsesCase::ZeroUnique, None) => {
                let eq = build_strategy(&p, &OdeSolution::zero(p.market.horizon(), steps))?;
                Ok((p, eq))
            }
            (case, _) => Err(Failure::Input(format!("no equilibrium to solve: {}", case.describe()))),
        };
    }
    let tp = TimevarProblem::new(p.market.clone(), p.h.clone(), p.gamma)?;
    let est = estimate_eta_star(&tp, &run.cfg.solver())?;
    let y = match eta {
        None => est.maximal,
        Some(v) if v > est.eta_star * (1.0 + 1e-9) => {
            return Err(Failure::Input(format!("eta = {v} exceeds eta* = {:e}", est.eta_star)));
        }
        Some(v) => solve_forward(&tp, v, steps)?,
    };
    let eq = build_strategy(&p, &y)?;
    Ok((p, eq))
}

pub fn solve(common: &Common, eta: Option<f64>) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let (p, eq) = solution(&run, eta)?;
    let y = &eq.y;
    let pis: Vec<Vec<f64>> = y.times.iter().map(|&t| eq.strategy.value_at(t)).collect();
    if run.format == Format::Json {
        return run.emit_json(&json!({ "eta": eq.eta, "t0": eq.t0, "t": y.times, "Y": y.values, "pi": pis }));
    }
    let n = p.market.n();
    let mut text = String::from("t,Y");
    for i in 1..=n {
        let _ = write!(text, ",pi_{i}");
    }
    text.push('\n');
    for ((t, v), pi) in y.times.iter().zip(&y.values).zip(&pis) {
        let _ = write!(text, "{},{}", num(*t), num(*v));
        for x in pi {
            let _ = write!(text, ",{}", num(*x));
        }
        text.push('\n');
    }
    run.emit(&text)
}

pub fn eta_star(common: &Common) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let tp = run.timevar()?;
    let est = estimate_eta_star(&tp, &run.cfg.solver())?;
    let bisection = eta_star_bisection(&tp, run.cfg.solver.steps)?;
    let gap = if est.eta_star > 0.0 { (bisection - est.eta_star).abs() / est.eta_star } else { bisection };
    if run.format == Format::Json {
        return run.emit_json(&json!({
            "eta_star": est.eta_star,
            "bisection": bisection,
            "relative_gap": gap,
            "converged": est.converged,
            "extrapolated": est.extrapolated,
            "eps": est.ladder,
            "Y0": est.values,
        }));
    }
    eprintln!("eta* = {} (bisection {}, relative gap {gap:.2e}, converged {})", num(est.eta_star), num(bisection), est.converged);
    let mut text = String::from("eps,Y0\n");
    for (e, v) in est.ladder.iter().zip(&est.values) {
        let _ = writeln!(text, "{},{}", num(*e), num(*v));
    }
    run.emit(&text)
}

pub fn optimize(common: &Common) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let tp = run.timevar()?;
    let est = estimate_eta_star(&tp, &run.cfg.solver())?;
    let r = optimal_eta_search(&tp, est.eta_star, &run.cfg.search())?;
    if run.format == Format::Json {
        return run.emit_json(&r);
    }
    let pi: Vec<String> = r.pi_opt0.iter().map(|v| num(*v)).collect();
    eprintln!(
        "eta_opt = {} of eta* = {}, pi_opt(0) = [{}], J_opt = {}, interior {}",
        num(r.eta_opt),
        num(r.eta_star),
        pi.join(", "),
        num(r.j_opt),
        r.interior
    );
    let mut text = String::from("eta,J0\n");
    for (e, j) in &r.curve {
        let _ = writeln!(text, "{},{}", num(*e), num(*j));
    }
    run.emit(&text)
}

struct StrategyFile {
    strategy: Strategy,
    exposure: Option<OdeSolution>,
}

fn read_strategy(path: &Path, n: usize) -> Result<StrategyFile, Failure> {
    let bad = |m: String| Failure::Input(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = col("t").ok_or_else(|| bad("missing column t".into()))?;
    let y_col = col("Y");
    let pi_cols: Vec<usize> = (1..=n).map(|i| col(&format!("pi_{i}")).ok_or_else(|| bad(format!("missing column pi_{i}")))).collect::<Result<_, _>>()?;
    let (mut times, mut ys, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| -> Result<f64, Failure> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: column {} is not a number", line + 2, c + 1)))
        };
        times.push(field(t_col)?);
        if let Some(c) = y_col {
            ys.push(field(c)?);
        }
        values.push(pi_cols.iter().map(|&c| field(c)).collect::<Result<Vec<_>, _>>()?);
    }
    let exposure = y_col.map(|_| {
        let positive = ys[..ys.len().saturating_sub(1)].iter().all(|&v| v > CLAMP_FLOOR);
        OdeSolution { times: times.clone(), values: ys, positive, reached_floor: false, invalid_m_at: None }
    });
    let strategy = Strategy::grid(times, values)?;
    Ok(StrategyFile { strategy, exposure })
}

pub fn verify(common: &Common, path: &Path) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let p = run.cfg.problem()?;
    let file = read_strategy(path, p.market.n())?;
    let s = &run.cfg.solver;
    let cfg = CheckConfig {
        t_grid: Some(default_t_grid(p.market.horizon(), s.verify_points)),
        exposure: file.exposure,
        wealth: s.wealth,
        execution: s.execution,
        ..Default::default()
    };
    let report = equilibrium_check(&p, &file.strategy, &cfg)?;
    let failed = report.times.iter().filter(|t| !t.passed).count();
    eprintln!("{} at {}/{} times", if report.passed { "passed" } else { "failed" }, report.times.len() - failed, report.times.len());
    run.emit_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Rejected)
    }
}
