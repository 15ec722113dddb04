use std::io::BufReader;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use lhvdyn::bell::{probability_table, IntegratorConfig};
use lhvdyn::dynamics::{
    analytic_chain_check, assemble_feasibility, control_analytic_residual, control_nodes,
    control_states, fit_velocity_field, headline_ensemble, single_qubit_control, ChainReport,
    FeasibilityReport, KinkExclusion, NodeCompression, PairGrid,
};
use lhvdyn::nogo::{constraint_table, max_particles_relaxed, ConstraintRow};
use lhvdyn::quantum::{bloch_derivatives, read_state_records, sample_noisy_ball, BlochTwoQubit};
use lhvdyn::sphere::sample_sphere;
use lhvdyn::universal::{
    d_matrix, random_su2, rotation_from_unitary, softmax_rule, transform_hv_with, BasisSpec,
    DMatrix, MatrixHV,
};
use lhvdyn::{CMat2, TwoQubitLhvDensity, Vec3};

use crate::config::{stream, ExperimentConfig, IntegratorMode};
use crate::{CliError, OutputDir};

pub type Outcome = Result<(bool, Value), CliError>;

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

fn file_states(cfg: &ExperimentConfig) -> Result<Vec<BlochTwoQubit>, CliError> {
    match &cfg.states_file {
        None => Ok(Vec::new()),
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            read_state_records(BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn rank_one_families(epsilon: f64) -> Vec<BlochTwoQubit> {
    let mut out = Vec::new();
    for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
        for sign in [1.0, -1.0] {
            out.push(BlochTwoQubit::rank_one_correlation(&axis, sign * epsilon));
        }
    }
    out
}

#[derive(Serialize)]
struct StaticRow {
    state: usize,
    setting_1: String,
    setting_2: String,
    outcome_1: String,
    outcome_2: String,
    p_lhv: f64,
    p_quantum: f64,
    abs_err: f64,
}

/// Hidden-variable versus quantum probabilities over the configured ensemble.
pub fn verify_static(cfg: &ExperimentConfig, out: &mut OutputDir) -> Outcome {
    let mut states = Vec::new();
    if cfg.analytic_families {
        states.extend(rank_one_families(cfg.epsilon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(stream::ENSEMBLE));
    for _ in 0..cfg.random_states {
        states.push(sample_noisy_ball(cfg.visibility, &mut rng).map_err(compute)?);
    }
    states.extend(file_states(cfg)?);
    if states.is_empty() {
        return Err(CliError::Usage("empty state list".into()));
    }
    if cfg.settings == 0 {
        return Err(CliError::Usage("settings must be positive".into()));
    }
    let mut setting_rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(stream::SETTINGS));
    let mut rows = Vec::new();
    for (k, s) in states.iter().enumerate() {
        let settings: Vec<(Vec3, Vec3)> = (0..cfg.settings)
            .map(|_| (sample_sphere(&mut setting_rng), sample_sphere(&mut setting_rng)))
            .collect();
        let integrator = match cfg.integrator {
            IntegratorMode::MonteCarlo => IntegratorConfig::monte_carlo(
                cfg.mc_samples,
                cfg.sub_seed(stream::INTEGRATOR).wrapping_add(k as u64 * 1_000_003),
                cfg.tolerance,
            ),
            IntegratorMode::Product => IntegratorConfig::product(cfg.tolerance),
        };
        for r in probability_table(s, &settings, &integrator).map_err(compute)? {
            rows.push(StaticRow {
                state: k,
                setting_1: r.setting_1,
                setting_2: r.setting_2,
                outcome_1: r.outcome_1,
                outcome_2: r.outcome_2,
                p_lhv: r.p_lhv,
                p_quantum: r.p_quantum,
                abs_err: r.abs_err,
            });
        }
    }
    let max = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    let mean = rows.iter().map(|r| r.abs_err).sum::<f64>() / rows.len() as f64;
    let passed = max <= cfg.tolerance;
    let summary = json!({
        "states": states.len(),
        "settings_per_state": cfg.settings,
        "events": rows.len(),
        "max_abs_err": max,
        "mean_abs_err": mean,
        "tolerance": cfg.tolerance,
        "passed": passed,
    });
    out.write_csv("static_errors.csv", &rows)?;
    out.write_json("static_summary.json", &summary)?;
    Ok((passed, summary))
}

#[derive(Serialize)]
struct CurveRow {
    problem: &'static str,
    degree: usize,
    unknowns: usize,
    rows: usize,
    relative_residual: f64,
    absolute_residual: f64,
    pointwise_bound: f64,
    rank: usize,
    condition: f64,
}

impl CurveRow {
    fn of(problem: &'static str, r: &FeasibilityReport) -> Self {
        Self {
            problem,
            degree: r.degree,
            unknowns: r.unknowns,
            rows: r.rows,
            relative_residual: r.relative_residual,
            absolute_residual: r.absolute_residual,
            pointwise_bound: r.pointwise_bound,
            rank: r.rank,
            condition: r.condition,
        }
    }
}

#[derive(Serialize)]
struct Contrast {
    control_max_residual: f64,
    control_tol: f64,
    control_analytic_residual: f64,
    reference_degree: usize,
    reference_residual: f64,
    plateau_factor: f64,
    min_ratio: f64,
    plateau_threshold: f64,
    min_residual: f64,
    met: bool,
}

#[derive(Serialize)]
struct FitSummary {
    control: Vec<FeasibilityReport>,
    counterexample: Vec<FeasibilityReport>,
    chain: ChainReport,
    contrast: Contrast,
    passed: bool,
}

/// The counterexample ensemble: rank-one families, maximally mixed, random and file states.
pub fn dynamics_ensemble(cfg: &ExperimentConfig) -> Result<Vec<BlochTwoQubit>, CliError> {
    let mut states = if cfg.analytic_families {
        headline_ensemble(cfg.epsilon, cfg.dynamics_states, cfg.visibility, cfg.sub_seed(stream::ENSEMBLE))
            .map_err(compute)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(stream::ENSEMBLE));
        (0..cfg.dynamics_states)
            .map(|_| sample_noisy_ball(cfg.visibility, &mut rng))
            .collect::<Result<Vec<_>, _>>()
            .map_err(compute)?
    };
    states.extend(file_states(cfg)?);
    Ok(states)
}

/// Control and counterexample fits over the degree list, plus the chain check.
pub fn fit_velocity(cfg: &ExperimentConfig, out: &mut OutputDir) -> Outcome {
    let states = dynamics_ensemble(cfg)?;
    if states.is_empty() {
        return Err(CliError::Usage("empty state list".into()));
    }
    if cfg.nodes == 0 || cfg.control_nodes == 0 {
        return Err(CliError::Usage("node counts must be positive".into()));
    }

    let rs = control_states(cfg.control_states, cfg.sub_seed(stream::CONTROL_STATES));
    let cnodes = control_nodes(cfg.control_nodes, cfg.sub_seed(stream::CONTROL_NODES), &rs, cfg.kink_radius)
        .map_err(compute)?;
    let control = cfg
        .degrees
        .iter()
        .map(|&l| single_qubit_control(cfg.omega, &rs, &cnodes, l, cfg.rank_tol))
        .collect::<Result<Vec<_>, _>>()
        .map_err(compute)?;
    let analytic = control_analytic_residual(cfg.omega, &rs, &cnodes).map_err(compute)?;

    let densities = states
        .iter()
        .map(|s| TwoQubitLhvDensity::new(*s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(compute)?;
    let refs: Vec<_> = densities.iter().collect();
    let exclusion = KinkExclusion::for_states(cfg.kink_radius, &refs);
    let grid = PairGrid::random(cfg.nodes, cfg.sub_seed(stream::GRID), &exclusion).map_err(compute)?;
    let compressions = NodeCompression::for_grid(&states, cfg.omega, &grid).map_err(compute)?;
    let mut counter = Vec::new();
    let mut chain_fit = None;
    let mut degrees = cfg.degrees.clone();
    if !degrees.contains(&cfg.chain_degree) {
        degrees.push(cfg.chain_degree);
    }
    for &l in &degrees {
        let system = assemble_feasibility(&compressions, states.len(), l).map_err(compute)?;
        let (fit, report) = fit_velocity_field(&system, cfg.rank_tol);
        if l == cfg.chain_degree {
            chain_fit = Some(fit);
        }
        if cfg.degrees.contains(&l) {
            counter.push(report);
        }
    }
    let chain_grid = PairGrid {
        nodes: grid.nodes[..cfg.chain_nodes.min(grid.len())].to_vec(),
    };
    let chain = analytic_chain_check(&chain_fit.expect("chain degree fitted"), &chain_grid, cfg.chain_tol);

    let control_max = control.iter().map(|r| r.relative_residual).fold(0.0, f64::max);
    let reference = counter
        .iter()
        .min_by_key(|r| r.degree)
        .expect("nonempty degree list");
    let min_ratio = counter
        .iter()
        .filter(|r| r.degree != reference.degree)
        .map(|r| r.relative_residual / reference.relative_residual)
        .fold(f64::INFINITY, f64::min);
    let min_residual = counter.iter().map(|r| r.relative_residual).fold(f64::INFINITY, f64::min);
    let met = control_max <= cfg.control_tol
        && analytic <= 1e-8
        && min_ratio >= cfg.plateau_factor
        && min_residual >= cfg.plateau_threshold;
    let contrast = Contrast {
        control_max_residual: control_max,
        control_tol: cfg.control_tol,
        control_analytic_residual: analytic,
        reference_degree: reference.degree,
        reference_residual: reference.relative_residual,
        plateau_factor: cfg.plateau_factor,
        min_ratio,
        plateau_threshold: cfg.plateau_threshold,
        min_residual,
        met,
    };
    let passed = met && chain.passes;

    let mut curve: Vec<CurveRow> = control.iter().map(|r| CurveRow::of("control", r)).collect();
    curve.extend(counter.iter().map(|r| CurveRow::of("counterexample", r)));
    out.write_csv("residual_curve.csv", &curve)?;
    let summary = FitSummary {
        control,
        counterexample: counter,
        chain,
        contrast,
        passed,
    };
    out.write_json("feasibility.json", &summary)?;
    let value = serde_json::to_value(&summary).map_err(compute)?;
    Ok((passed, value))
}

#[derive(Serialize)]
struct MaxRow {
    #[serde(rename = "D")]
    d_qudit: u32,
    d: u64,
    max_n: u32,
}

/// Constraint table and critical particle numbers.
pub fn nogo_table(cfg: &ExperimentConfig, out: &mut OutputDir) -> Outcome {
    let kernel = BigUint::from(cfg.kernel);
    let usage = |e: lhvdyn::nogo::NogoError| CliError::Usage(e.to_string());
    let rows: Vec<ConstraintRow> = constraint_table(&cfg.qudit_dims, &cfg.hv_dims, cfg.n_max, &kernel).map_err(usage)?;
    let mut maxima = Vec::new();
    for &dq in &cfg.qudit_dims {
        for &d in &cfg.hv_dims {
            maxima.push(MaxRow {
                d_qudit: dq,
                d,
                max_n: max_particles_relaxed(dq, d, &kernel).map_err(usage)?,
            });
        }
    }
    out.write_csv("nogo_table.csv", &rows)?;
    out.write_csv("max_particles.csv", &maxima)?;
    let summary = json!({
        "rows": rows.len(),
        "kernel": cfg.kernel,
        "max_particles": maxima,
        "passed": true,
    });
    out.write_json("nogo_summary.json", &summary)?;
    Ok((true, summary))
}

#[derive(Serialize)]
struct CovarianceSummary {
    l_max: usize,
    trials: usize,
    corrupted: bool,
    identity_d_deviation: f64,
    identity_transform_deviation: f64,
    composition_deviation: f64,
    group_action_deviation: f64,
    covariance_deviation: f64,
    block_orthogonality: f64,
    off_block: f64,
    tolerance: f64,
    passed: bool,
}

/// Group law, covariance and block structure of the universal model.
pub fn covariance_check(cfg: &ExperimentConfig, out: &mut OutputDir) -> Outcome {
    if cfg.trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    let spec = BasisSpec::new(cfg.l_max);
    let dmat = |u: &CMat2| -> Result<DMatrix, CliError> {
        let mut d = d_matrix(u, &spec).map_err(compute)?;
        if cfg.corrupt_d && spec.size() > 2 {
            d.d[(1, 2)] += 1e-3;
        }
        Ok(d)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(stream::COVARIANCE));
    let id = CMat2::identity();
    let d_id = dmat(&id)?;
    let identity_d_deviation = (&d_id.d - DMatrix::identity(&spec).d).amax();
    let lam = MatrixHV::random(2, &spec, &mut rng);
    let identity_transform_deviation = (transform_hv_with(&lam, &d_id).map_err(compute)?.0 - &lam.0).amax();

    let (mut comp, mut action, mut cov, mut orth, mut off) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cfg.trials {
        let u1 = random_su2(&mut rng);
        let u2 = random_su2(&mut rng);
        let d1 = dmat(&u1)?;
        let d2 = dmat(&u2)?;
        let d12 = dmat(&(u1 * u2))?;
        comp = comp.max((&d12.d - d1.compose(&d2).d).amax());
        orth = orth.max(d1.block_orthogonality_error());
        off = off.max(d1.off_block_max());

        let lam = MatrixHV::random(2, &spec, &mut rng);
        let scale = lam.0.amax().max(1.0);
        let t = |l: &MatrixHV, u: &CMat2| -> Result<MatrixHV, CliError> {
            transform_hv_with(l, &dmat(&u.adjoint())?).map_err(compute)
        };
        let composite = t(&lam, &(u1 * u2))?;
        let stepwise = t(&t(&lam, &u2)?, &u1)?;
        action = action.max((composite.0 - stepwise.0).amax() / scale);

        let x = sample_sphere(&mut rng);
        let r_dag = rotation_from_unitary(&u1.adjoint()).map_err(compute)?;
        let lhs = softmax_rule(&lam, &spec, &(r_dag * x)).map_err(compute)?;
        let rhs = softmax_rule(&t(&lam, &u1)?, &spec, &x).map_err(compute)?;
        cov = cov.max(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let tol = cfg.covariance_tol;
    let passed = identity_d_deviation == 0.0
        && identity_transform_deviation == 0.0
        && comp <= tol
        && action <= tol
        && cov <= tol
        && orth <= tol
        && off <= tol;
    let summary = CovarianceSummary {
        l_max: cfg.l_max,
        trials: cfg.trials,
        corrupted: cfg.corrupt_d,
        identity_d_deviation,
        identity_transform_deviation,
        composition_deviation: comp,
        group_action_deviation: action,
        covariance_deviation: cov,
        block_orthogonality: orth,
        off_block: off,
        tolerance: tol,
        passed,
    };
    out.write_json("covariance.json", &summary)?;
    Ok((passed, serde_json::to_value(&summary).map_err(compute)?))
}

/// Equations of motion for every state in the configured state file.
pub fn derivs(cfg: &ExperimentConfig, out: &mut OutputDir) -> Outcome {
    if cfg.states_file.is_none() {
        return Err(CliError::Usage("derivs needs states_file in the config".into()));
    }
    let states = file_states(cfg)?;
    if states.is_empty() {
        return Err(CliError::Usage("empty state list".into()));
    }
    let mut header = vec!["state".to_string()];
    for p in ["a_dot", "b_dot"] {
        header.extend((1..=3).map(|i| format!("{p}_{i}")));
    }
    for i in 1..=3 {
        header.extend((1..=3).map(|j| format!("t_dot_{i}{j}")));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(compute)?;
    for (k, s) in states.iter().enumerate() {
        let d = bloch_derivatives(s, cfg.omega);
        let mut rec = vec![k.to_string()];
        rec.extend(d.a_dot.iter().chain(d.b_dot.iter()).map(|v| v.to_string()));
        for i in 0..3 {
            rec.extend((0..3).map(|j| d.t_dot[(i, j)].to_string()));
        }
        w.write_record(&rec).map_err(compute)?;
    }
    let bytes = w.into_inner().map_err(compute)?;
    out.write("derivs.csv", &bytes)?;
    let summary = json!({ "states": states.len(), "omega": cfg.omega, "passed": true });
    out.write_json("derivs_summary.json", &summary)?;
    Ok((true, summary))
}
