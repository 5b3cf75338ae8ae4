use std::fs;
use std::path::{Path, PathBuf};

use pulseopt::arma::ArmaModel;
use pulseopt::bounds::{second_order_bound, validation_allowance, weak_noise_regime_report, GammaSums};
use pulseopt::composite::comparison_map;
use pulseopt::control::{filter_functions, infidelity_full, NoiseModel, PulseSequence};
use pulseopt::montecarlo::{robustness_sweep, simulate_single_axis, SimConfig};
use pulseopt::optimizer::{optimize_full, solve_qp, sweep_lengths, DescentOptions, QpProblem};
use pulseopt::Execution;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::config::{
    CompareConfig, EvaluateConfig, FilterFunctionConfig, OptimizeConfig, RobustnessConfig, SequenceChoice,
    SimulateConfig, SpectrumConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<pulseopt::Error> for CliError {
    fn from(e: pulseopt::Error) -> Self {
        use pulseopt::Error as E;
        match e {
            E::NonStationary { .. }
            | E::InvalidParameter(_)
            | E::LengthMismatch { .. }
            | E::BadInit(_)
            | E::PhaseUndefined { .. }
            | E::InvalidSequence(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io {
            path: self.dir.join(name),
            source: e.into(),
        };
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| io(e.into_error().into()))?;
        self.write(name, &bytes)
    }

    fn json(&self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn prepare(out: &Path) -> CliResult<Output<'_>> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(Output { dir: out })
}

fn descent_options(max_iters: Option<usize>, tol: Option<f64>) -> DescentOptions {
    let d = DescentOptions::default();
    DescentOptions {
        max_iters: max_iters.unwrap_or(d.max_iters),
        tol: tol.unwrap_or(d.tol),
    }
}

pub fn optimize(cfg: OptimizeConfig, out: &Path) -> CliResult<()> {
    let opts = descent_options(cfg.max_iters, cfg.tol);
    let sweep = sweep_lengths(&cfg.noise, cfg.theta_q, cfg.n_min, cfg.n_max, opts, Execution::Parallel)?;
    let out = prepare(out)?;

    let mut rows = Vec::new();
    let mut seqs = Vec::new();
    for (n, e) in &sweep.best {
        let [sa, sb, sc] = e.breakdown.shares();
        rows.push(vec![
            n.to_string(),
            f(e.breakdown.total),
            f(sa),
            f(sb),
            f(sc),
            e.direction.as_str().to_string(),
        ]);
        seqs.push(json!({
            "n": n,
            "direction": e.direction,
            "breakdown": e.breakdown,
            "sequence": e.sequence,
        }));
    }
    out.csv(
        "optimize_sweep.csv",
        &["n", "infidelity", "share_a", "share_b", "share_c", "direction"],
        &rows,
    )?;
    out.json("optimize_sequences.json", &json!({ "theta_q": cfg.theta_q, "sequences": seqs }))
}

pub fn evaluate(cfg: EvaluateConfig, out: &Path) -> CliResult<()> {
    let breakdown = infidelity_full(&cfg.sequence, &cfg.noise)?;
    let report = weak_noise_regime_report(&cfg.noise, &cfg.sequence)?;
    let sums = GammaSums::for_sequence(&cfg.noise, &cfg.sequence)?;
    let allowance = validation_allowance(&cfg.noise, &cfg.sequence)?;
    let out = prepare(out)?;
    out.json(
        "evaluate.json",
        &json!({
            "breakdown": breakdown,
            "weak_noise": report,
            "second_order_bound_loose": report.second_order_bound_loose,
            "validation_allowance": allowance,
            "gamma_sums": sums,
        }),
    )
}

fn dephasing_free(noise: &NoiseModel) -> bool {
    noise.dephasing_mean == 0.0 && noise.dephasing_residual.is_none()
}

fn build_sequence(choice: &SequenceChoice, noise: &NoiseModel, theta_q: f64, n: usize) -> CliResult<PulseSequence> {
    match choice {
        SequenceChoice::Uniform => Ok(PulseSequence::uniform(theta_q, n)?),
        SequenceChoice::Explicit(thetas) => {
            if thetas.len() != n {
                return Err(CliError::Config(format!(
                    "explicit sequence has {} steps but n = {n}",
                    thetas.len()
                )));
            }
            Ok(PulseSequence::new(thetas.clone(), theta_q)?)
        }
        SequenceChoice::Optimal if dephasing_free(noise) => {
            Ok(solve_qp(&QpProblem::from_model(&noise.control, n, theta_q)?)?)
        }
        SequenceChoice::Optimal => {
            let init = PulseSequence::uniform(theta_q, n)?;
            Ok(optimize_full(noise, theta_q, n, &init, DescentOptions::default())?.sequence)
        }
    }
}

pub fn simulate(cfg: SimulateConfig, out: &Path) -> CliResult<()> {
    if cfg.num_trajectories == 0 {
        return Err(CliError::Config("num_trajectories must be >= 1".into()));
    }
    let sim = SimConfig {
        burn_in: cfg.burn_in,
        ..SimConfig::new(cfg.num_trajectories, cfg.seed)
    };
    let mut rows = Vec::new();
    for case in &cfg.cases {
        for &n in &case.n {
            let seq = build_sequence(&case.sequence, &case.noise, case.theta_q, n)?;
            let analytic = infidelity_full(&seq, &case.noise)?.total;
            let mc = simulate_single_axis(&seq, &case.noise, &sim)?;
            let bound = second_order_bound(&GammaSums::for_sequence(&case.noise, &seq)?);
            let allowance = validation_allowance(&case.noise, &seq)?;
            rows.push(vec![
                case.label.clone(),
                n.to_string(),
                f(analytic),
                f(mc.mean_infidelity),
                f(mc.standard_error),
                f(bound),
                f(allowance),
            ]);
        }
    }
    prepare(out)?.csv(
        "simulate.csv",
        &[
            "label",
            "n",
            "analytic_infid",
            "mc_infid",
            "mc_se",
            "second_order_bound",
            "validation_allowance",
        ],
        &rows,
    )
}

pub fn compare_cp(cfg: CompareConfig, out: &Path) -> CliResult<()> {
    for c in &cfg.comparisons {
        if let Some(k) = c.k {
            if k != c.kind.segments() {
                return Err(CliError::Config(format!(
                    "{} has {} segments, config asks for K = {k}",
                    c.kind.name(),
                    c.kind.segments()
                )));
            }
        }
    }
    let (a1, b1) = (cfg.a1.values(), cfg.b1.values());
    if a1.is_empty() || b1.is_empty() {
        return Err(CliError::Config("a1 and b1 grids must be non-empty".into()));
    }
    let out = prepare(out)?;
    for c in &cfg.comparisons {
        let map = comparison_map(c.kind, &a1, &b1, cfg.theta_q, cfg.total_power, Execution::Parallel)?;
        let rows: Vec<Vec<String>> = map
            .iter()
            .map(|r| vec![f(r.a1), f(r.b1), f(r.infid_opt), f(r.infid_cp), f(r.diff), f(r.l2_to_dc)])
            .collect();
        out.csv(
            &format!("compare_cp_{}.csv", c.kind.name().to_lowercase()),
            &["a1", "b1", "infid_opt", "infid_cp", "diff", "l2_to_dc"],
            &rows,
        )?;
    }
    Ok(())
}

pub fn sweep_robustness(cfg: RobustnessConfig, out: &Path) -> CliResult<()> {
    let bases = cfg
        .base_models
        .iter()
        .map(|m| ArmaModel::arma11(m.a1, m.b1, cfg.sigma_w2))
        .collect::<pulseopt::Result<Vec<_>>>()?;
    let table = robustness_sweep(
        &bases,
        &cfg.deviations,
        cfg.samples_per_eps,
        cfg.theta_q,
        cfg.n,
        cfg.seed,
        Execution::Parallel,
    )?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| vec![f(r.a1), f(r.b1), f(r.eps), r.valid.to_string(), f(r.worst), f(r.mean)])
        .collect();
    prepare(out)?.csv("robustness.csv", &["a1", "b1", "eps", "valid", "worst", "mean"], &rows)
}

pub fn spectrum(cfg: SpectrumConfig, out: &Path) -> CliResult<()> {
    let rows: Vec<Vec<String>> = cfg
        .grid
        .values()
        .into_iter()
        .map(|w| vec![f(w), f(cfg.model.power_spectrum(w))])
        .collect();
    prepare(out)?.csv("spectrum.csv", &["omega", "power"], &rows)
}

/// Columns hold magnitudes `|F(ω)|`.
pub fn filter_function(cfg: FilterFunctionConfig, out: &Path) -> CliResult<()> {
    let rows: Vec<Vec<String>> = filter_functions(&cfg.sequence, &cfg.grid.values())
        .into_iter()
        .map(|p| vec![f(p.omega), f(p.fxx.sqrt()), f(p.fzy.sqrt())])
        .collect();
    prepare(out)?.csv("filter_function.csv", &["omega", "fxx", "fzy"], &rows)
}
