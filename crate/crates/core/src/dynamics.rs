//! Simulation of `x(t+1) = A₀x(t) + w(t+1)`, synthetic systems built from
//! Jordan specifications, and the closed-loop sensitivity study for linear
//! feedback designed from perturbed parameters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::linalg::{self, CMat, Mat};
use crate::noise::{self, NoiseModel, TrialRng};
use crate::spectral::{self, JordanBlock, JordanForm};

/// Simulation halts once `‖x(t)‖∞` exceeds this value.
pub const OVERFLOW_GUARD: f64 = 1e250;

/// Initial state: fixed, or a unit vector with uniformly random direction
/// drawn from the trial's RNG stream. `MappedRandomUnit(T)` is `T·u` for such
/// a `u`, which arises when a random `x(0)` is carried into a subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Fixed(Vec<f64>),
    RandomUnit,
    MappedRandomUnit(Mat),
}

impl InitialState {
    pub fn zero(p: usize) -> Self {
        InitialState::Fixed(vec![0.0; p])
    }

    pub fn draw(&self, p: usize, rng: &mut TrialRng) -> DVector<f64> {
        match self {
            InitialState::Fixed(v) => DVector::from_column_slice(v),
            InitialState::RandomUnit => random_unit(p, rng),
            InitialState::MappedRandomUnit(t) => t * random_unit(t.ncols(), rng),
        }
    }

    /// Image of the state under a linear map.
    pub fn mapped(&self, t: &Mat) -> Self {
        match self {
            InitialState::Fixed(v) => InitialState::Fixed((t * DVector::from_column_slice(v)).iter().copied().collect()),
            InitialState::RandomUnit => InitialState::MappedRandomUnit(t.clone()),
            InitialState::MappedRandomUnit(m) => InitialState::MappedRandomUnit(t * m),
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            InitialState::Fixed(v) => Some(v.len()),
            InitialState::RandomUnit => None,
            InitialState::MappedRandomUnit(t) => Some(t.nrows()),
        }
    }

    /// `‖x(0)‖∞`, or its almost-sure bound for random states.
    pub fn norm_inf(&self) -> f64 {
        match self {
            InitialState::Fixed(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            InitialState::RandomUnit => 1.0,
            InitialState::MappedRandomUnit(t) => t.row_iter().map(|r| r.norm()).fold(0.0, f64::max),
        }
    }

    /// `‖x(0)‖₂`, or its almost-sure bound for random states.
    pub fn norm2(&self) -> f64 {
        match self {
            InitialState::Fixed(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            InitialState::RandomUnit => 1.0,
            InitialState::MappedRandomUnit(t) => linalg::norm2(t),
        }
    }
}

fn random_unit(p: usize, rng: &mut TrialRng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub a0: Mat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jordan: Option<JordanForm>,
    pub noise: NoiseModel,
    pub x0: InitialState,
}

impl SystemSpec {
    pub fn new(a0: Mat, noise: NoiseModel, x0: InitialState) -> Result<Self> {
        let p = linalg::check_square(&a0, "A0")?;
        if noise.dim() != p {
            return Err(SysIdError::InvalidInput(format!(
                "noise dimension {} does not match A0 dimension {p}",
                noise.dim()
            )));
        }
        if let Some(len) = x0.len() {
            if len != p {
                return Err(SysIdError::InvalidInput(format!("x0 has length {len}, expected {p}")));
            }
        }
        if a0.iter().any(|x| !x.is_finite()) {
            return Err(SysIdError::InvalidInput("A0 has non-finite entries".into()));
        }
        Ok(Self {
            a0,
            jordan: None,
            noise,
            x0,
        })
    }

    /// Attaches a Jordan form after checking that it reproduces `A0`.
    pub fn with_jordan(mut self, jf: JordanForm) -> Result<Self> {
        let rebuilt = jf.assemble();
        if rebuilt.nrows() != self.dim() {
            return Err(SysIdError::InvalidInput("Jordan form has the wrong dimension".into()));
        }
        let err = linalg::cnorm2(&(rebuilt - linalg::to_complex(&self.a0)));
        let scale = linalg::norm2(&self.a0).max(1.0);
        if err > 1e-10 * scale {
            return Err(SysIdError::InvalidInput(format!(
                "Jordan form does not reproduce A0 (residual {err:e})"
            )));
        }
        self.jordan = Some(jf);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    /// Attached Jordan form, or one inferred numerically.
    pub fn jordan_form(&self) -> Result<JordanForm> {
        match &self.jordan {
            Some(j) => Ok(j.clone()),
            None => spectral::jordan_infer_default(&self.a0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x(0), …, x(n)`, truncated at the overflow point.
    pub states: Vec<DVector<f64>>,
    /// `w(1), …, w(n)`; `noises[t]` drives `states[t] → states[t + 1]`.
    pub noises: Vec<DVector<f64>>,
    pub seed: u64,
    /// First time index whose state exceeded [`OVERFLOW_GUARD`].
    pub overflowed_at: Option<usize>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    /// Index of the last stored state.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// CSV with header `t,x_1..x_p` (plus `w_1..w_p` when requested); the
    /// noise columns of row 0 are empty.
    pub fn to_csv(&self, include_noise: bool) -> String {
        let p = self.dim();
        let mut out = String::from("t");
        for i in 1..=p {
            write!(out, ",x_{i}").unwrap();
        }
        if include_noise {
            for i in 1..=p {
                write!(out, ",w_{i}").unwrap();
            }
        }
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for v in x.iter() {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            if include_noise {
                match t.checked_sub(1).and_then(|s| self.noises.get(s)) {
                    Some(w) => {
                        for v in w.iter() {
                            write!(out, ",{}", fmt_f64(*v)).unwrap();
                        }
                    }
                    None => out.push_str(&",".repeat(p)),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, include_noise: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(include_noise))?;
        Ok(())
    }

    /// Parses the format written by [`Trajectory::to_csv`]. Noise columns
    /// are read when present.
    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let bad = |msg: String| SysIdError::InvalidInput(format!("trajectory csv: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split(',').collect();
        if header.first() != Some(&"t") {
            return Err(bad("header must start with `t`".into()));
        }
        let p = header.iter().filter(|h| h.starts_with("x_")).count();
        let q = header.iter().filter(|h| h.starts_with("w_")).count();
        if p == 0 || (q != 0 && q != p) || header.len() != 1 + p + q {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut states = Vec::new();
        let mut noises = Vec::new();
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(bad(format!("row {row} has {} cells, expected {}", cells.len(), header.len())));
            }
            let parse = |c: &str| c.trim().parse::<f64>().map_err(|e| bad(format!("row {row}: {e}")));
            let x = cells[1..=p].iter().map(|c| parse(c)).collect::<Result<Vec<f64>>>()?;
            states.push(DVector::from_vec(x));
            if q > 0 && row > 0 {
                let w = cells[1 + p..].iter().map(|c| parse(c)).collect::<Result<Vec<f64>>>()?;
                noises.push(DVector::from_vec(w));
            }
        }
        if states.is_empty() {
            return Err(bad("no rows".into()));
        }
        Ok(Trajectory {
            states,
            noises,
            seed: 0,
            overflowed_at: None,
        })
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Simulates `n` steps with the stream `trial_rng(seed, 0, 0)`.
pub fn simulate(spec: &SystemSpec, n: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = noise::trial_rng(seed, 0, 0);
    simulate_with_rng(spec, n, &mut rng, seed)
}

/// Simulates `n` steps drawing `x(0)` (if random) and then `w(1..n)` from `rng`.
pub fn simulate_with_rng(spec: &SystemSpec, n: usize, rng: &mut TrialRng, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(SysIdError::InvalidInput("horizon n must be at least 1".into()));
    }
    let p = spec.dim();
    let x0 = spec.x0.draw(p, rng);
    let mut states = Vec::with_capacity(n + 1);
    let mut noises = Vec::with_capacity(n);
    states.push(x0);
    let mut overflowed_at = None;
    for t in 0..n {
        let w = spec.noise.sample(rng);
        let next = &spec.a0 * &states[t] + &w;
        if !next.iter().all(|v| v.is_finite() && v.abs() <= OVERFLOW_GUARD) {
            overflowed_at = Some(t + 1);
            break;
        }
        noises.push(w);
        states.push(next);
    }
    if let Some(t) = overflowed_at {
        if t < 2 {
            return Err(SysIdError::Overflow { t });
        }
    }
    Ok(Trajectory {
        states,
        noises,
        seed,
        overflowed_at,
    })
}

/// Deterministic simulation driven by a given noise sequence.
pub fn simulate_with_noises(a0: &Mat, x0: &DVector<f64>, noises: &[DVector<f64>]) -> Result<Trajectory> {
    let p = linalg::check_square(a0, "A0")?;
    if x0.len() != p || noises.iter().any(|w| w.len() != p) {
        return Err(SysIdError::InvalidInput("state and noise dimensions must match A0".into()));
    }
    let mut states = Vec::with_capacity(noises.len() + 1);
    states.push(x0.clone());
    for w in noises {
        let next = a0 * states.last().expect("nonempty") + w;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        noises: noises.to_vec(),
        seed: 0,
        overflowed_at: None,
    })
}

/// Direct VAR(k) recursion `y(t+1) = Σ_j A_j y(t+1−j) + w(t+1)`. `init` holds
/// `y(0), y(−1), …, y(−k+1)`. Returns `y(0..=n)`.
pub fn simulate_var(coeffs: &[Mat], init: &[DVector<f64>], noises: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let k = coeffs.len();
    if k == 0 || init.len() != k {
        return Err(SysIdError::InvalidInput("need one initial value per lag".into()));
    }
    let m = coeffs[0].nrows();
    // history[0] is the most recent value.
    let mut history: Vec<DVector<f64>> = init.to_vec();
    let mut out = vec![init[0].clone()];
    for w in noises {
        let mut y = DVector::zeros(m);
        for (a, h) in coeffs.iter().zip(&history) {
            for c in 0..m {
                y.axpy(h[c], &a.column(c), 1.0);
            }
        }
        y += w;
        history.pop();
        history.insert(0, y.clone());
        out.push(y);
    }
    Ok(out)
}

/// Similarity for [`make_system_from_jordan`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySpec {
    Given(CMat),
    RandomWellconditioned,
}

/// Random real matrix `U·diag(s)·V′` with orthogonal `U`, `V` and singular
/// values in `[1, 3]`, so `κ ≤ 3`.
pub fn random_wellconditioned<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Mat {
    let g1 = Mat::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let g2 = Mat::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let u = g1.qr().q();
    let v = g2.qr().q();
    let dist = Uniform::new_inclusive(1.0, 3.0).expect("valid range");
    let s = DVector::from_fn(p, |_, _| dist.sample(rng));
    u * Mat::from_diagonal(&s) * v.transpose()
}

fn is_conjugate(a: Complex64, b: Complex64) -> bool {
    let scale = a.norm().max(1.0);
    (a - b.conj()).norm() <= 1e-12 * scale
}

/// Builds `A₀ = P⁻¹ΛP` from Jordan blocks. Complex eigenvalues must come in
/// conjugate pairs of equal block size. A random similarity pairs the
/// generalized eigenvectors of conjugate blocks as `a ± ib` so that `A₀` is
/// real by construction.
pub fn make_system_from_jordan(
    blocks: &[JordanBlock],
    similarity: &SimilaritySpec,
    noise: NoiseModel,
    x0: InitialState,
    rng: &mut TrialRng,
) -> Result<SystemSpec> {
    let p: usize = blocks.iter().map(|b| b.size).sum();
    if p == 0 || blocks.iter().any(|b| b.size == 0) {
        return Err(SysIdError::InvalidInput("Jordan blocks must have positive sizes".into()));
    }
    let partner = pair_conjugates(blocks)?;

    let p_mat = match similarity {
        SimilaritySpec::Given(pm) => pm.clone(),
        SimilaritySpec::RandomWellconditioned => {
            let q = random_wellconditioned(p, rng);
            let mut v = CMat::zeros(p, p);
            let offsets: Vec<usize> = blocks
                .iter()
                .scan(0, |acc, b| {
                    let o = *acc;
                    *acc += b.size;
                    Some(o)
                })
                .collect();
            let r = std::f64::consts::FRAC_1_SQRT_2;
            for (i, b) in blocks.iter().enumerate() {
                let off = offsets[i];
                match partner[i] {
                    None => {
                        for k in 0..b.size {
                            for row in 0..p {
                                v[(row, off + k)] = Complex64::new(q[(row, off + k)], 0.0);
                            }
                        }
                    }
                    Some(j) => {
                        // The block with positive imaginary part takes `a + ib`,
                        // its partner `a − ib`; a and b are Q's columns of the
                        // two blocks.
                        let (lead, other) = if b.eigenvalue.im > 0.0 { (i, j) } else { (j, i) };
                        let sign = if i == lead { 1.0 } else { -1.0 };
                        for k in 0..b.size {
                            let a = q.column(offsets[lead] + k);
                            let bb = q.column(offsets[other] + k);
                            let col = CMat::from_fn(p, 1, |row, _| {
                                Complex64::new(a[row] * r, sign * bb[row] * r)
                            });
                            v.set_column(off + k, &col.column(0));
                        }
                    }
                }
            }
            linalg::cinverse(&v)?
        }
    };

    let jf = JordanForm::from_similarity(blocks.to_vec(), p_mat)?;
    let a_c = jf.assemble();
    let scale = linalg::cnorm2(&a_c).max(1.0);
    if !linalg::is_effectively_real(&a_c, 1e-12 * scale) {
        return Err(SysIdError::InvalidInput(
            "assembled A0 is not real; check conjugate pairing of P".into(),
        ));
    }
    let a0 = linalg::real_part(&a_c);
    let spec = SystemSpec::new(a0, noise, x0)?;
    Ok(SystemSpec {
        jordan: Some(jf),
        ..spec
    })
}

/// For each block, the index of its conjugate partner (`None` for real).
fn pair_conjugates(blocks: &[JordanBlock]) -> Result<Vec<Option<usize>>> {
    let mut partner = vec![None; blocks.len()];
    for i in 0..blocks.len() {
        let lam = blocks[i].eigenvalue;
        if lam.im == 0.0 || partner[i].is_some() {
            continue;
        }
        let found = (0..blocks.len()).find(|&j| {
            j != i && partner[j].is_none() && blocks[j].size == blocks[i].size && is_conjugate(lam, blocks[j].eigenvalue)
        });
        match found {
            Some(j) => {
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
            None => {
                return Err(SysIdError::InvalidInput(format!(
                    "complex eigenvalue {lam} (size {}) has no conjugate partner",
                    blocks[i].size
                )))
            }
        }
    }
    Ok(partner)
}

/// `x(t+1) = A_x x(t) + A_u u(t)` under feedback `u(t) = L x(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSystem {
    pub ax: Mat,
    pub au: Mat,
    pub l: Mat,
}

impl ControlSystem {
    pub fn p(&self) -> usize {
        self.ax.nrows()
    }

    pub fn r(&self) -> usize {
        self.au.ncols()
    }

    /// `Θ₀ = [A_x A_u]`.
    pub fn theta(&self) -> Mat {
        let (p, r) = (self.p(), self.r());
        let mut t = Mat::zeros(p, p + r);
        t.view_mut((0, 0), (p, p)).copy_from(&self.ax);
        t.view_mut((0, p), (p, r)).copy_from(&self.au);
        t
    }
}

pub fn closed_loop(cs: &ControlSystem) -> Result<Mat> {
    let p = linalg::check_square(&cs.ax, "Ax")?;
    let r = cs.au.ncols();
    if cs.au.nrows() != p || cs.l.nrows() != r || cs.l.ncols() != p {
        return Err(SysIdError::InvalidInput(format!(
            "inconsistent dimensions: Ax {p}x{p}, Au {}x{}, L {}x{}",
            cs.au.nrows(),
            r,
            cs.l.nrows(),
            cs.l.ncols()
        )));
    }
    Ok(&cs.ax + &cs.au * &cs.l)
}

/// A rule mapping assumed dynamics `(A_x, A_u)` to a feedback gain `L`.
pub trait FeedbackDesigner: Sync {
    fn design(&self, ax: &Mat, au: &Mat) -> Result<Mat>;
}

/// Infinite-horizon discrete LQR with weights `qI`, `rI`, solved by
/// Riccati value iteration.
#[derive(Debug, Clone, Copy)]
pub struct Lqr {
    pub q: f64,
    pub r: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Lqr {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 1.0,
            max_iter: 100_000,
            tol: 1e-12,
        }
    }
}

impl FeedbackDesigner for Lqr {
    fn design(&self, ax: &Mat, au: &Mat) -> Result<Mat> {
        let p = ax.nrows();
        let m = au.ncols();
        let qm = linalg::identity(p) * self.q;
        let rm = linalg::identity(m) * self.r;
        let mut x = qm.clone();
        for _ in 0..self.max_iter {
            let btx = au.transpose() * &x;
            let s = &rm + &btx * au;
            let gain = s
                .clone()
                .cholesky()
                .ok_or_else(|| SysIdError::Numeric("R + B'XB not positive definite".into()))?
                .solve(&(&btx * ax));
            let next = &qm + ax.transpose() * &x * ax - (ax.transpose() * &x * au) * &gain;
            let next = (&next + next.transpose()) * 0.5;
            let diff = (&next - &x).amax();
            let size = next.amax();
            x = next;
            if !size.is_finite() || size > 1e200 {
                return Err(SysIdError::Numeric("Riccati iteration diverged (not stabilizable)".into()));
            }
            if diff <= self.tol * size.max(1.0) {
                return Ok(-gain);
            }
        }
        Err(SysIdError::Numeric("Riccati iteration did not converge".into()))
    }
}

/// Spectral radius.
pub fn lambda_max(a: &Mat) -> Result<f64> {
    Ok(spectral::eig_extremes(a)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Gaussian `Δ` scaled to `‖Δ‖₂ = magnitude·‖Θ₀‖₂`.
    GlobalAwgn,
    /// One entry of `Θ₀` shifted by `±magnitude·‖Θ₀‖₂`; index `2·k + s` for
    /// row-major entry `k` and sign `s` (0 for +, 1 for −).
    SingleEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub magnitude: f64,
    pub index: usize,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub mode: PerturbationMode,
    pub nominal_lambda_max: f64,
    pub points: Vec<SensitivityPoint>,
}

impl SensitivityCurve {
    /// Smallest magnitude at which some point has `λmax > 1`.
    pub fn crossing(&self) -> Option<f64> {
        self.points
            .iter()
            .filter(|pt| pt.lambda_max > 1.0)
            .map(|pt| pt.magnitude)
            .min_by(f64::total_cmp)
    }
}

fn perturbed_lambda_max(cs: &ControlSystem, delta: &Mat, designer: &dyn FeedbackDesigner) -> f64 {
    let (p, r) = (cs.p(), cs.r());
    let theta = cs.theta() + delta;
    let ax_hat = theta.view((0, 0), (p, p)).into_owned();
    let au_hat = theta.view((0, p), (p, r)).into_owned();
    // A design failure on the perturbed model is recorded as NaN.
    match designer.design(&ax_hat, &au_hat) {
        Ok(l) => lambda_max(&(&cs.ax + &cs.au * l)).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

/// `λmax(A_x + A_u L̂)` where `L̂` is designed from `Θ₀ + Δ`. Global mode runs
/// `trials` draws per magnitude; single-entry mode scans every entry and
/// both signs.
pub fn sensitivity_scan(
    cs: &ControlSystem,
    mode: PerturbationMode,
    magnitudes: &[f64],
    trials: usize,
    designer: &dyn FeedbackDesigner,
    seed: u64,
) -> Result<SensitivityCurve> {
    let (p, r) = (cs.p(), cs.r());
    if cs.au.nrows() != p {
        return Err(SysIdError::InvalidInput("Au must have p rows".into()));
    }
    let nominal_l = designer
        .design(&cs.ax, &cs.au)
        .map_err(|e| SysIdError::Config(format!("designer fails on the nominal system: {e}")))?;
    let nominal = lambda_max(&(&cs.ax + &cs.au * &nominal_l))?;
    let theta_norm = linalg::norm2(&cs.theta());
    let cols = p + r;

    let jobs: Vec<(usize, usize)> = match mode {
        PerturbationMode::GlobalAwgn => (0..magnitudes.len())
            .flat_map(|m| (0..trials).map(move |t| (m, t)))
            .collect(),
        PerturbationMode::SingleEntry => (0..magnitudes.len())
            .flat_map(|m| (0..2 * p * cols).map(move |k| (m, k)))
            .collect(),
    };

    let points: Vec<SensitivityPoint> = jobs
        .par_iter()
        .map(|&(mi, idx)| {
            let mag = magnitudes[mi];
            let target = mag * theta_norm;
            let delta = match mode {
                PerturbationMode::GlobalAwgn => {
                    let mut rng = noise::trial_rng(seed, mi as u64, idx as u64);
                    let g = Mat::from_fn(p, cols, |_, _| StandardNormal.sample(&mut rng));
                    let gn = linalg::norm2(&g);
                    if gn > 0.0 {
                        g * (target / gn)
                    } else {
                        g
                    }
                }
                PerturbationMode::SingleEntry => {
                    let k = idx / 2;
                    let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
                    let mut d = Mat::zeros(p, cols);
                    d[(k / cols, k % cols)] = sign * target;
                    d
                }
            };
            let lambda_max = if mag == 0.0 {
                nominal
            } else {
                perturbed_lambda_max(cs, &delta, designer)
            };
            SensitivityPoint {
                magnitude: mag,
                index: idx,
                lambda_max,
            }
        })
        .collect();

    Ok(SensitivityCurve {
        mode,
        nominal_lambda_max: nominal,
        points,
    })
}

/// A randomly generated system together with the scan that destabilized it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitiveInstance {
    pub system: ControlSystem,
    pub candidate: usize,
    pub curve: SensitivityCurve,
}

/// Draws random `(A_x, A_u)` with Gaussian entries (`A_x` scaled by a factor
/// in `[1, 4]`) until the nominal design is stabilizing and a global scan
/// over `magnitudes` produces `λmax > 1`.
pub fn find_sensitive_instance(
    p: usize,
    r: usize,
    magnitudes: &[f64],
    trials: usize,
    designer: &dyn FeedbackDesigner,
    seed: u64,
    max_candidates: usize,
) -> Result<Option<SensitiveInstance>> {
    for candidate in 0..max_candidates {
        let mut rng = noise::trial_rng(seed, u64::MAX, candidate as u64);
        let scale: f64 = rng.random_range(1.0..4.0);
        let ax = Mat::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng)) * scale;
        let au = Mat::from_fn(p, r, |_, _| StandardNormal.sample(&mut rng));
        let Ok(l) = designer.design(&ax, &au) else {
            continue;
        };
        let cs = ControlSystem { ax, au, l };
        if lambda_max(&closed_loop(&cs)?)? >= 1.0 {
            continue;
        }
        let curve = sensitivity_scan(&cs, PerturbationMode::GlobalAwgn, magnitudes, trials, designer, seed ^ candidate as u64)?;
        if curve.crossing().is_some() {
            return Ok(Some(SensitiveInstance {
                system: cs,
                candidate,
                curve,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn spec(a: Mat, noise: NoiseModel, x0: Vec<f64>) -> SystemSpec {
        SystemSpec::new(a, noise, InitialState::Fixed(x0)).unwrap()
    }

    #[test]
    fn fixed_point_and_growth() {
        let s = spec(linalg::identity(2), NoiseModel::zero(2), vec![1.0, -2.0]);
        let tr = simulate(&s, 5, 1).unwrap();
        assert!(tr.states.iter().all(|x| *x == dvector![1.0, -2.0]));

        let s = spec(Mat::from_element(1, 1, 2.0), NoiseModel::zero(1), vec![1.0]);
        let tr = simulate(&s, 10, 1).unwrap();
        for (t, x) in tr.states.iter().enumerate() {
            assert_eq!(x[0], 2f64.powi(t as i32));
        }
    }

    #[test]
    fn pure_noise_when_a_is_zero() {
        let s = spec(Mat::zeros(2, 2), NoiseModel::standard_gaussian(2), vec![0.0, 0.0]);
        let tr = simulate(&s, 20, 3).unwrap();
        for t in 0..20 {
            assert_eq!(tr.states[t + 1], tr.noises[t]);
        }
    }

    #[test]
    fn overflow_truncates_or_errors() {
        let s = spec(Mat::from_element(1, 1, 1e100), NoiseModel::zero(1), vec![1.0]);
        let tr = simulate(&s, 10, 0).unwrap();
        assert_eq!(tr.overflowed_at, Some(3));
        assert_eq!(tr.states.len(), 3);

        let s = spec(Mat::from_element(1, 1, 1e200), NoiseModel::zero(1), vec![1e100]);
        assert!(matches!(simulate(&s, 10, 0), Err(SysIdError::Overflow { t: 1 })));
    }

    #[test]
    fn jordan_construction_examples() {
        let mut rng = noise::trial_rng(0, 0, 0);
        let one = SimilaritySpec::Given(CMat::identity(1, 1));
        let s = make_system_from_jordan(&[JordanBlock::real(0.5, 1)], &one, NoiseModel::zero(1), InitialState::zero(1), &mut rng).unwrap();
        assert_eq!(s.a0, Mat::from_element(1, 1, 0.5));

        let eye = SimilaritySpec::Given(CMat::identity(2, 2));
        let s = make_system_from_jordan(&[JordanBlock::real(2.0, 2)], &eye, NoiseModel::zero(2), InitialState::zero(2), &mut rng).unwrap();
        assert_eq!(s.a0, Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]));
    }

    #[test]
    fn conjugate_pairs_give_real_matrix() {
        let mut rng = noise::trial_rng(5, 0, 0);
        let z = Complex64::new(0.3, 0.4);
        let blocks = [JordanBlock::new(z, 2), JordanBlock::real(1.5, 1), JordanBlock::new(z.conj(), 2)];
        let s = make_system_from_jordan(&blocks, &SimilaritySpec::RandomWellconditioned, NoiseModel::zero(5), InitialState::zero(5), &mut rng).unwrap();
        let jf = s.jordan.as_ref().unwrap();
        assert!(jf.condition < 10.0);
        let err = linalg::cnorm2(&(jf.assemble() - linalg::to_complex(&s.a0)));
        assert!(err < 1e-12);
    }

    #[test]
    fn unpaired_complex_is_rejected() {
        let mut rng = noise::trial_rng(5, 0, 0);
        let blocks = [JordanBlock::new(Complex64::new(0.3, 0.4), 1), JordanBlock::real(0.2, 1)];
        let r = make_system_from_jordan(&blocks, &SimilaritySpec::RandomWellconditioned, NoiseModel::zero(2), InitialState::zero(2), &mut rng);
        assert!(matches!(r, Err(SysIdError::InvalidInput(_))));
    }

    #[test]
    fn closed_loop_examples() {
        let ax = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let au = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
        let cs = ControlSystem { ax: ax.clone(), au: au.clone(), l: Mat::zeros(1, 2) };
        assert_eq!(closed_loop(&cs).unwrap(), ax);
        let cs = ControlSystem { ax: ax.clone(), au: Mat::zeros(2, 1), l: Mat::from_row_slice(1, 2, &[5.0, 6.0]) };
        assert_eq!(closed_loop(&cs).unwrap(), ax);
        let cs = ControlSystem { ax: Mat::zeros(2, 2), au: linalg::identity(2), l: linalg::identity(2) };
        assert_eq!(closed_loop(&cs).unwrap(), linalg::identity(2));
        let bad = ControlSystem { ax, au, l: Mat::zeros(2, 2) };
        assert!(closed_loop(&bad).is_err());
    }

    #[test]
    fn lqr_stabilizes_unstable_scalar() {
        let ax = Mat::from_element(1, 1, 2.0);
        let au = Mat::from_element(1, 1, 1.0);
        let l = Lqr::default().design(&ax, &au).unwrap();
        // Scalar DARE: x = 1 + 4x − 4x²/(1+x) → x² − 4x − 1 = 0.
        let x = 2.0 + 5f64.sqrt();
        assert!((l[(0, 0)] + 2.0 * x / (1.0 + x)).abs() < 1e-9);
        assert!((2.0 + l[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn zero_magnitude_gives_nominal() {
        let cs = ControlSystem {
            ax: Mat::from_row_slice(2, 2, &[1.2, 0.3, 0.0, 0.7]),
            au: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            l: Mat::zeros(1, 2),
        };
        for mode in [PerturbationMode::GlobalAwgn, PerturbationMode::SingleEntry] {
            let c = sensitivity_scan(&cs, mode, &[0.0], 5, &Lqr::default(), 1).unwrap();
            assert!(c.points.iter().all(|pt| pt.lambda_max == c.nominal_lambda_max));
            assert!(c.crossing().is_none());
        }
    }
}
