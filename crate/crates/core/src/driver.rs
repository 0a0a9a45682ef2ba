//! Iteration drivers built on [`StepOperator`].
//!
//! The deterministic driver carries the post-selected state from step to
//! step without re-encoding. Every monomial is homogeneous in
//! `(z_0, z_1, .., z_n)`, so the anchor ratio of the carried state is exactly
//! the unnormalised classical orbit `F^j(z)`.
//!
//! The Monte-Carlo driver simulates copy *counts*: all surviving copies in a
//! round hold the same state, so a round is one binomial draw with the exact
//! per-pair success probability.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{euler_map, OdeSystem, PolynomialMap};
use crate::rng::{self, gaussian_complex};
use crate::state::{AmplitudeState, JointState};
use crate::step::{first_register, StepMode, StepOperator};
use crate::C64;

/// Success probabilities below this abort a deterministic run.
pub const MIN_PROBABILITY: f64 = 1e-15;
/// Tolerance on `||z0||^2 - 1` when encoding the initial vector.
pub const ENCODE_TOL: f64 = 1e-9;
/// Cap on the joint dimension for which a dense perturbation is generated.
pub const NOISE_DIM_CAP: usize = 2048;

/// `gamma = 2 sqrt(2) / eps`, the per-step error amplification.
pub fn gamma_for(epsilon: f64) -> f64 {
    2.0 * 2f64.sqrt() / epsilon
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub m: usize,
    pub epsilon: f64,
    /// `eps^2 / 2`.
    pub p: f64,
    pub lambda: f64,
    pub base: f64,
    /// `ceil((base / p)^m)` when the float evaluation pins it down.
    pub n0: Option<u64>,
    pub log10_n0: f64,
    pub log_space_only: bool,
    pub gamma: f64,
    /// `(8 / p)^m`, the count used in the proof.
    pub log10_n0_base8: f64,
    /// `(gamma / p)^m`, the count used in the algorithm listing.
    pub log10_n0_gamma: f64,
}

/// `N0 = ceil((base / p)^m)` with `p = eps^2 / 2` and `lambda` defaulting to `p / 2`.
pub fn plan_resources(m: usize, epsilon: f64, base: f64, lambda: Option<f64>) -> Result<ResourcePlan> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let p = epsilon * epsilon / 2.0;
    if p >= 1.0 {
        return Err(Error::InvalidParameter(format!("p = eps^2/2 = {p} must be below 1")));
    }
    if !(base / p >= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "base / p = {} must be at least 2 so that N0 >= 2^m",
            base / p
        )));
    }
    let lambda = lambda.unwrap_or(p / 2.0);
    if !(lambda > 0.0 && lambda < p) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, p = {p})")));
    }
    let gamma = gamma_for(epsilon);
    let log10_n0 = m as f64 * (base / p).log10();

    let value = (base / p).powi(m as i32);
    let err = value * (m as f64 + 1.0) * f64::EPSILON;
    let exact = value.is_finite() && err < 0.5 && value + err < 2f64.powi(53);
    let n0 = exact.then(|| (value - err).ceil() as u64);

    Ok(ResourcePlan {
        m,
        epsilon,
        p,
        lambda,
        base,
        n0,
        log10_n0,
        log_space_only: !exact,
        gamma,
        log10_n0_base8: m as f64 * (8.0 / p).log10(),
        log10_n0_gamma: m as f64 * (gamma / p).log10(),
    })
}

/// Closed-form accumulated error after `m` steps with `delta_0 = 0`:
/// `(eta/3) (((3 gamma)^{m+1} - 1) / (3 gamma - 1) - 1)`.
pub fn error_bound(eta: f64, gamma: f64, m: usize) -> Result<f64> {
    if m == 0 || !(eta >= 0.0) || !(gamma > 0.0) || (3.0 * gamma - 1.0).abs() < 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "need m >= 1, eta >= 0, gamma > 0, 3 gamma != 1; got m = {m}, eta = {eta}, gamma = {gamma}"
        )));
    }
    let r = 3.0 * gamma;
    Ok(eta / 3.0 * ((r.powi(m as i32 + 1) - 1.0) / (r - 1.0) - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Deterministic,
    Montecarlo,
    NoiseStudy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub z: Vec<C64>,
    /// Per-pair success probability of the step that produced this iterate.
    pub probability: Option<f64>,
    pub norm_factor: Option<f64>,
    /// States produced in this round (Monte-Carlo mode).
    pub copies: Option<u64>,
    pub delta_observed: Option<f64>,
    pub delta_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub epsilon: f64,
    pub h_norm: f64,
    pub h_norm_bound: f64,
    /// Time between records (`h` for ODE integration, `1` for map iteration).
    pub time_step: f64,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    /// Round in which the copy count fell below the algorithm's threshold.
    pub failed_round: Option<usize>,
    /// `N_0` followed by the states produced in each completed round.
    pub copy_counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    /// Rounds where the success count fell below `lambda * pairs`.
    pub lambda_flags: Vec<bool>,
    pub delta_m_observed: Option<f64>,
    pub delta_m_bound: Option<f64>,
    pub warnings: Vec<String>,
}

impl RunReport {
    fn new(mode: RunMode, op: &StepOperator, time_step: f64) -> Self {
        Self {
            mode,
            epsilon: op.epsilon(),
            h_norm: op.h_norm(),
            h_norm_bound: op.h_norm_bound(),
            time_step,
            steps: Vec::new(),
            success: true,
            failed_round: None,
            copy_counts: Vec::new(),
            probabilities: Vec::new(),
            lambda_flags: Vec::new(),
            delta_m_observed: None,
            delta_m_bound: None,
            warnings: Vec::new(),
        }
    }

    /// Decoded iterates, starting with the initial vector.
    pub fn iterates(&self) -> impl Iterator<Item = &[C64]> + '_ {
        self.steps.iter().map(|s| s.z.as_slice())
    }

    pub fn final_iterate(&self) -> &[C64] {
        &self.steps.last().expect("report holds the initial state").z
    }

    /// `step,t,re_z1,im_z1,...,probability,norm_factor`, followed by `copies` in
    /// Monte-Carlo mode or `delta_observed,delta_bound` in a noise study.
    pub fn write_trajectory_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.steps.first().map_or(0, |s| s.z.len());
        let mut header = vec!["step".to_string(), "t".to_string()];
        for j in 1..=n {
            header.push(format!("re_z{j}"));
            header.push(format!("im_z{j}"));
        }
        header.push("probability".into());
        header.push("norm_factor".into());
        match self.mode {
            RunMode::Montecarlo => header.push("copies".into()),
            RunMode::NoiseStudy => {
                header.push("delta_observed".into());
                header.push("delta_bound".into());
            }
            RunMode::Deterministic => {}
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&header)?;
        for s in &self.steps {
            let mut rec = vec![s.step.to_string(), s.t.to_string()];
            for v in &s.z {
                rec.push(v.re.to_string());
                rec.push(v.im.to_string());
            }
            rec.push(opt(s.probability));
            rec.push(opt(s.norm_factor));
            match self.mode {
                RunMode::Montecarlo => rec.push(s.copies.map(|c| c.to_string()).unwrap_or_default()),
                RunMode::NoiseStudy => {
                    rec.push(opt(s.delta_observed));
                    rec.push(opt(s.delta_bound));
                }
                RunMode::Deterministic => {}
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn initial_record(z0: &[C64]) -> StepRecord {
    StepRecord {
        step: 0,
        t: 0.0,
        z: z0.to_vec(),
        probability: None,
        norm_factor: None,
        copies: None,
        delta_observed: None,
        delta_bound: None,
    }
}

/// Runs `m` exact steps along the success branch and returns the final state.
fn deterministic_chain(
    op: &StepOperator,
    z0: &[C64],
    m: usize,
    time_step: f64,
) -> Result<(RunReport, Vec<AmplitudeState>)> {
    let mut report = RunReport::new(RunMode::Deterministic, op, time_step);
    let mut state = AmplitudeState::encode(z0, ENCODE_TOL)?;
    let mut states = vec![state.clone()];
    report.steps.push(initial_record(z0));
    // exact mode never draws
    let mut rng = rng::stream(0, 0);
    for j in 1..=m {
        let out = op.step(&state, StepMode::Exact, &mut rng)?;
        if out.probability < MIN_PROBABILITY {
            return Err(Error::VanishingProbability(out.probability));
        }
        state = out.posterior.expect("exact mode follows the success branch");
        report.probabilities.push(out.probability);
        report.steps.push(StepRecord {
            step: j,
            t: j as f64 * time_step,
            z: state.decode()?,
            probability: Some(out.probability),
            norm_factor: out.norm_factor,
            copies: None,
            delta_observed: None,
            delta_bound: None,
        });
        states.push(state.clone());
    }
    Ok((report, states))
}

/// Iterates `map` `m` times on the success branch; `epsilon = None` uses the
/// operator default.
pub fn run_deterministic(
    map: &PolynomialMap,
    z0: &[C64],
    m: usize,
    epsilon: Option<f64>,
) -> Result<RunReport> {
    let op = StepOperator::new(map, epsilon)?;
    Ok(deterministic_chain(&op, z0, m, 1.0)?.0)
}

/// One run of the copy-counting branching process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchingRun {
    /// `N_0` followed by the states produced in each completed round.
    pub copies: Vec<u64>,
    pub lambda_flags: Vec<bool>,
    pub failed_round: Option<usize>,
    pub success: bool,
}

/// Pairs up the `N` current copies, draws the successes of each round from
/// `Binomial(N/2, p_round)`, keeps `2 floor(S/2)` copies for the next round
/// and fails when `S < 2^{i-1}` with `i` counting down from `m` to `1`.
pub fn simulate_branching<R: Rng + ?Sized>(
    n0: u64,
    probs: &[f64],
    lambda: f64,
    rng: &mut R,
) -> Result<BranchingRun> {
    let m = probs.len();
    let mut run = BranchingRun { copies: vec![n0], lambda_flags: Vec::new(), failed_round: None, success: false };
    let mut current = n0;
    for (r, &p) in probs.iter().enumerate() {
        let pairs = current / 2;
        let dist = Binomial::new(pairs, p.clamp(0.0, 1.0))
            .map_err(|e| Error::InvalidParameter(format!("binomial({pairs}, {p}): {e}")))?;
        let s = dist.sample(rng);
        run.copies.push(s);
        run.lambda_flags.push((s as f64) < lambda * pairs as f64);
        let i = m - r;
        if s < 1u64 << (i - 1) {
            run.failed_round = Some(r + 1);
            return Ok(run);
        }
        current = 2 * (s / 2);
    }
    run.success = *run.copies.last().expect("non-empty") >= 1;
    Ok(run)
}

/// Monte-Carlo version of [`run_deterministic`] under a [`ResourcePlan`].
pub fn run_montecarlo<R: Rng + ?Sized>(
    map: &PolynomialMap,
    z0: &[C64],
    plan: &ResourcePlan,
    rng: &mut R,
) -> Result<RunReport> {
    let op = StepOperator::new(map, Some(plan.epsilon))?;
    montecarlo_with(&op, z0, plan, 1.0, rng)
}

fn montecarlo_with<R: Rng + ?Sized>(
    op: &StepOperator,
    z0: &[C64],
    plan: &ResourcePlan,
    time_step: f64,
    rng: &mut R,
) -> Result<RunReport> {
    let n0 = plan.n0.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "plan needs 10^{:.2} copies, too many to count exactly",
            plan.log10_n0
        ))
    })?;
    let (mut report, _) = deterministic_chain(op, z0, plan.m, time_step)?;
    let run = simulate_branching(n0, &report.probabilities, plan.lambda, rng)?;
    report.mode = RunMode::Montecarlo;
    report.steps.truncate(run.copies.len().min(plan.m + 1));
    for (rec, &c) in report.steps.iter_mut().zip(&run.copies) {
        rec.copies = Some(c);
    }
    report.success = run.success;
    report.failed_round = run.failed_round;
    report.copy_counts = run.copies;
    report.lambda_flags = run.lambda_flags;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub probabilities: Vec<f64>,
    /// Mean number of states produced per round, over all trials reaching it.
    pub mean_copies: Vec<f64>,
    pub runs: Vec<BranchingRun>,
}

/// Independent branching-process trials, each on its own random stream.
pub fn montecarlo_trials(
    map: &PolynomialMap,
    z0: &[C64],
    plan: &ResourcePlan,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let op = StepOperator::new(map, Some(plan.epsilon))?;
    let (det, _) = deterministic_chain(&op, z0, plan.m, 1.0)?;
    branching_trials(plan, &det.probabilities, trials, seed)
}

/// Trials of the branching process for fixed per-round probabilities.
pub fn branching_trials(
    plan: &ResourcePlan,
    probabilities: &[f64],
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let n0 = plan
        .n0
        .ok_or_else(|| Error::InvalidParameter("plan is log-space only".into()))?;
    let runs: Vec<BranchingRun> = (0..trials)
        .into_par_iter()
        .map(|t| simulate_branching(n0, probabilities, plan.lambda, &mut rng::stream(seed, t as u64)))
        .collect::<Result<_>>()?;
    let successes = runs.iter().filter(|r| r.success).count();
    let mean_copies = (0..=probabilities.len())
        .map(|j| {
            let reached: Vec<u64> = runs.iter().filter_map(|r| r.copies.get(j).copied()).collect();
            if reached.is_empty() {
                0.0
            } else {
                reached.iter().sum::<u64>() as f64 / reached.len() as f64
            }
        })
        .collect();
    Ok(MonteCarloSummary {
        trials,
        successes,
        success_fraction: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
        probabilities: probabilities.to_vec(),
        mean_copies,
        runs,
    })
}

/// How [`integrate`] runs the Euler map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntegrateMode {
    Deterministic,
    Montecarlo { base: f64, lambda: Option<f64> },
}

/// Quantum Euler integration of `sys` from `z0` to time `t` in `m` steps.
pub fn integrate<R: Rng + ?Sized>(
    sys: &OdeSystem,
    z0: &[C64],
    t: f64,
    m: usize,
    epsilon: Option<f64>,
    mode: IntegrateMode,
    rng: &mut R,
) -> Result<RunReport> {
    if m == 0 || !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("need m >= 1 and t > 0, got m = {m}, t = {t}")));
    }
    let h = t / m as f64;
    let map = euler_map(sys, h)?;
    let op = StepOperator::new(&map, epsilon)?;
    let check = sys.check_measure_preserving(64, 1e-9, 0)?;
    let warning = (!check.preserving).then(|| {
        format!(
            "system is not norm preserving (residual {:e}); success probabilities drop accordingly",
            check.residual
        )
    });
    let mut report = match mode {
        IntegrateMode::Deterministic => deterministic_chain(&op, z0, m, h)?.0,
        IntegrateMode::Montecarlo { base, lambda } => {
            let plan = plan_resources(m, op.epsilon(), base, lambda)?;
            montecarlo_with(&op, z0, &plan, h, rng)?
        }
    };
    report.warnings.extend(warning);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Bound on `||U - V||` for the applied step unitary `V`.
    pub eta: f64,
    /// Random stream id; trials use sub-streams of it.
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub eta: f64,
    pub gamma: f64,
    /// Ideal trajectory with the worst observed error per step and its bound.
    pub run: RunReport,
    /// `deltas[trial][j - 1] = delta_j`.
    pub deltas: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
    pub bound_violations: usize,
    pub recurrence_violations: usize,
}

/// `exp(i eta G)` for a random Hermitian `G` with `||G|| = 1`.
fn random_perturbation<R: Rng + ?Sized>(dim: usize, eta: f64, rng: &mut R) -> DMatrix<C64> {
    let x = DMatrix::from_fn(dim, dim, |_, _| gaussian_complex(rng));
    let g = (&x + x.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(g);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let phases = DVector::from_iterator(
        dim,
        eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, eta * l / scale)),
    );
    let w = &eig.eigenvectors;
    w * DMatrix::from_diagonal(&phases) * w.adjoint()
}

/// Runs `trials` noisy copies of the success-branch iteration with the step
/// unitary replaced by `U exp(i eta G)`, and compares each against the ideal
/// iterates.
///
/// The noisy posterior keeps only the component of registers `2..d` in
/// `|0..0>`; projecting can only shrink the error vector, so the per-step
/// recurrence still applies.
pub fn noise_study(
    map: &PolynomialMap,
    z0: &[C64],
    m: usize,
    epsilon: Option<f64>,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
) -> Result<NoiseReport> {
    if !(noise.eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be non-negative, got {}", noise.eta)));
    }
    let op = StepOperator::new(map, epsilon)?;
    let joint_dim = 2 * op.register_dim();
    if joint_dim > NOISE_DIM_CAP {
        return Err(Error::CapExceeded { dim: joint_dim, cap: NOISE_DIM_CAP });
    }
    let gamma = gamma_for(op.epsilon());
    let (mut run, ideal) = deterministic_chain(&op, z0, m, 1.0)?;
    run.mode = RunMode::NoiseStudy;
    let target = op.epsilon().powi(2) / 2.0;
    if run.probabilities.iter().any(|p| (p - target).abs() > 1e-9) {
        run.warnings.push(
            "map is not norm preserving along this orbit; the error bound assumes it is".into(),
        );
    }
    let bounds = (1..=m).map(|j| error_bound(noise.eta, gamma, j)).collect::<Result<Vec<_>>>()?;

    let deltas: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<f64>> {
            let mut rng = rng::stream(seed, (noise.stream << 32) | trial as u64);
            let perturb = (noise.eta > 0.0).then(|| random_perturbation(joint_dim, noise.eta, &mut rng));
            let mut state = ideal[0].clone();
            let mut out = Vec::with_capacity(m);
            for phi in &ideal[1..] {
                let joint = state.tensor_power(op.degree(), usize::MAX)?;
                let joint = match &perturb {
                    Some(e) => {
                        let v = e * DVector::from_column_slice(joint.amplitudes());
                        JointState::from_parts(v.as_slice().to_vec(), joint.levels(), joint.registers())?
                    }
                    None => joint,
                };
                let evolved = op.apply_step(&joint)?;
                let (first, _) = first_register(evolved.sector(1), evolved.levels());
                state = AmplitudeState::from_amplitudes(first)?.phase_aligned();
                out.push(phi.distance(&state)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut bound_violations = 0;
    let mut recurrence_violations = 0;
    for trial in &deltas {
        let mut prev = 0.0;
        for (j, &d) in trial.iter().enumerate() {
            if d > bounds[j] {
                bound_violations += 1;
            }
            if d > gamma * (3.0 * prev + noise.eta) {
                recurrence_violations += 1;
            }
            prev = d;
        }
    }
    for (j, rec) in run.steps.iter_mut().enumerate().skip(1) {
        rec.delta_observed = deltas.iter().map(|t| t[j - 1]).reduce(f64::max);
        rec.delta_bound = Some(bounds[j - 1]);
    }
    run.delta_m_observed = run.steps.last().and_then(|s| s.delta_observed);
    run.delta_m_bound = bounds.last().copied();

    Ok(NoiseReport { eta: noise.eta, gamma, run, deltas, bounds, bound_violations, recurrence_violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{doubling_map, identity_map};
    use std::f64::consts::PI;

    #[test]
    fn plan_examples() {
        let plan = plan_resources(1, 1.0, 16.0, None).unwrap();
        assert_eq!(plan.p, 0.5);
        assert_eq!(plan.n0, Some(32));
        let plan = plan_resources(2, 0.3, 16.0, None).unwrap();
        assert_eq!(plan.n0, Some(126_420));
        let plan = plan_resources(6, 0.3, 16.0, None).unwrap();
        assert!(plan.log_space_only);
        assert_eq!(plan.n0, None);
        assert!((plan.log10_n0 - 6.0 * (16.0f64 / 0.045).log10()).abs() < 1e-12);
        assert!((plan.log10_n0 - 15.3).abs() < 0.01);
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        assert!(plan_resources(0, 0.5, 16.0, None).is_err());
        assert!(plan_resources(1, 1.5, 16.0, None).is_err());
        assert!(plan_resources(1, 0.5, 16.0, Some(0.2)).is_err());
        assert!(plan_resources(1, 0.5, 0.1, None).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(error_bound(0.0, 3.0, 4).unwrap(), 0.0);
        let gamma = gamma_for(0.5);
        // one unrolling: delta_1 <= gamma eta
        let b1 = error_bound(1e-3, gamma, 1).unwrap();
        assert!((b1 - gamma * 1e-3).abs() < 1e-15);
        let b2 = error_bound(1e-4, gamma, 2).unwrap();
        assert!((b2 - 1.017e-2).abs() < 5e-6, "{b2}");
        assert!(error_bound(1e-4, 1.0 / 3.0, 2).is_err());
    }

    #[test]
    fn identity_orbit_is_constant() {
        let z0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let r = run_deterministic(&identity_map(2).unwrap(), &z0, 5, None).unwrap();
        assert_eq!(r.steps.len(), 6);
        for z in r.iterates() {
            for (a, b) in z.iter().zip(&z0) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn doubling_phase_after_three_steps() {
        let z0 = [C64::from_polar(1.0, PI / 5.0)];
        let r = run_deterministic(&doubling_map(), &z0, 3, None).unwrap();
        let want = C64::from_polar(1.0, 8.0 * PI / 5.0);
        assert!((r.final_iterate()[0] - want).norm() < 1e-12);
    }

    #[test]
    fn certain_success_halves_copies() {
        let m = 4;
        let run = simulate_branching(2 << m, &vec![1.0; m], 0.25, &mut rng::stream(0, 0)).unwrap();
        assert!(run.success);
        assert_eq!(run.copies, vec![32, 16, 8, 4, 2]);
    }

    #[test]
    fn branching_fails_below_threshold() {
        let run = simulate_branching(64, &[0.0, 0.5], 0.0, &mut rng::stream(0, 0)).unwrap();
        assert!(!run.success);
        assert_eq!(run.failed_round, Some(1));
        assert_eq!(run.copies, vec![64, 0]);
    }

    #[test]
    fn lambda_flags_follow_definition() {
        let run = simulate_branching(1000, &[0.3, 0.3], 0.15, &mut rng::stream(1, 0)).unwrap();
        for (r, &flag) in run.lambda_flags.iter().enumerate() {
            let pairs = if r == 0 { 500 } else { run.copies[r] / 2 };
            assert_eq!(flag, (run.copies[r + 1] as f64) < 0.15 * pairs as f64);
        }
    }

    #[test]
    fn montecarlo_report_has_copy_counts() {
        let z0 = [C64::from_polar(1.0, 0.4)];
        let plan = plan_resources(3, 1.0, 16.0, None).unwrap();
        let r = run_montecarlo(&doubling_map(), &z0, &plan, &mut rng::stream(3, 0)).unwrap();
        assert!(r.success);
        assert_eq!(r.copy_counts[0], 32768);
        assert!(r.copy_counts.windows(2).all(|w| w[1] <= w[0] / 2));
        let mut buf = Vec::new();
        r.write_trajectory_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,t,re_z1,im_z1,probability,norm_factor,copies\n"));
    }

    #[test]
    fn noise_free_study_is_exact() {
        let z0 = [C64::from_polar(1.0, 0.4)];
        let noise = NoiseModel { eta: 0.0, stream: 0 };
        let r = noise_study(&doubling_map(), &z0, 3, Some(0.5), &noise, 4, 0).unwrap();
        assert!(r.deltas.iter().flatten().all(|&d| d == 0.0));
        assert_eq!(r.run.delta_m_observed, Some(0.0));
    }
}
