//! Filter-augmented state-and-fault estimator.
//!
//! Sensor faults enter the measurement equation, not the state equation, so
//! a standard observer cannot see them. Feeding the measurements through a
//! stable first-order filter bank `xi' = Phi (y_m - xi)` moves the fault
//! into the dynamics of the augmented state `[x; xi]`; appending a
//! constant-fault state (`f_s' = 0`) then lets one Luenberger-style gain
//! estimate plant states, filter states and the fault magnitude together:
//!
//! ```text
//! A_g = [[A,     0,   0 ],      C_g = [0  I  0]
//!        [Phi C, -Phi, Phi F],
//!        [0,     0,   0 ]]
//! x_g_hat' = A_g x_g_hat + B_g u + L (y_e - C_g x_g_hat)
//! ```
//!
//! The observer gain is placed by solving the Sylvester equation of the dual
//! system over a deterministic family of parameter matrices and keeping the
//! candidate whose slowest closed-loop mode is best conditioned; long-horizon
//! estimation-error decay is governed by that mode, so its eigenvalue
//! condition number is the robustness figure of merit.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::StateSpace;
use crate::sim::integrate_step;
use crate::{r64, Real};

/// Plant states extended with the measurement-filter states.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem<T = f64> {
    /// (n+q) x (n+q) block matrix `[[A, 0], [Phi C, -Phi]]`.
    pub a_e: DMatrix<T>,
    /// (n+q) x m input matrix `[B; 0]`.
    pub b_e: DMatrix<T>,
    /// (n+q) x 1 fault column `[0; Phi F]`.
    pub f_e: DMatrix<T>,
    /// q x (n+q) output matrix `[0 I]` selecting the filter states.
    pub c_e: DMatrix<T>,
    /// q x q filter matrix; `-Phi` must be Hurwitz.
    pub phi: DMatrix<T>,
    n_plant: usize,
}

impl<T: Real> AugmentedSystem<T> {
    /// Number of plant states.
    pub fn n_plant(&self) -> usize {
        self.n_plant
    }

    /// Number of filter states (= measured outputs).
    pub fn n_outputs(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.a_e.nrows()
    }
}

/// Extend a state space with filter states `xi' = Phi (y_m - xi)`.
pub fn augment<T: Real>(ss: &StateSpace<T>, phi: &DMatrix<T>) -> Result<AugmentedSystem<T>> {
    let n = ss.n_states();
    let q = ss.n_outputs();
    if phi.nrows() != q || phi.ncols() != q {
        return Err(Error::Dimension(format!(
            "filter matrix must be {q}x{q} to match the output count (got {}x{})",
            phi.nrows(),
            phi.ncols()
        )));
    }
    let unstable = phi
        .complex_eigenvalues()
        .iter()
        .any(|ev| ev.re <= T::zero());
    if unstable {
        return Err(Error::Domain(
            "measurement filter must be stable: every eigenvalue of Phi must have positive real part".into(),
        ));
    }

    let mut a_e = DMatrix::zeros(n + q, n + q);
    a_e.view_mut((0, 0), (n, n)).copy_from(&ss.a);
    a_e.view_mut((n, 0), (q, n)).copy_from(&(phi * &ss.c));
    a_e.view_mut((n, n), (q, q)).copy_from(&(-phi));

    let mut b_e = DMatrix::zeros(n + q, ss.n_inputs());
    b_e.view_mut((0, 0), (n, ss.n_inputs())).copy_from(&ss.b);

    let mut f_e = DMatrix::zeros(n + q, 1);
    f_e.view_mut((n, 0), (q, 1)).copy_from(&(phi * &ss.f));

    let mut c_e = DMatrix::zeros(q, n + q);
    c_e.view_mut((0, n), (q, q))
        .copy_from(&DMatrix::identity(q, q));

    Ok(AugmentedSystem {
        a_e,
        b_e,
        f_e,
        c_e,
        phi: phi.clone(),
        n_plant: n,
    })
}

/// Composite matrices with the fault modeled as a constant state.
///
/// `A_g = [[A_e, F_e], [0, 0]]`, `B_g = [B_e; 0]`, `C_g = [C_e, 0]`.
pub fn build_observer_matrices<T: Real>(
    aug: &AugmentedSystem<T>,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let ne = aug.n_states();
    let m = aug.b_e.ncols();
    let q = aug.n_outputs();

    let mut a_g = DMatrix::zeros(ne + 1, ne + 1);
    a_g.view_mut((0, 0), (ne, ne)).copy_from(&aug.a_e);
    a_g.view_mut((0, ne), (ne, 1)).copy_from(&aug.f_e);

    let mut b_g = DMatrix::zeros(ne + 1, m);
    b_g.view_mut((0, 0), (ne, m)).copy_from(&aug.b_e);

    let mut c_g = DMatrix::zeros(q, ne + 1);
    c_g.view_mut((0, 0), (q, ne)).copy_from(&aug.c_e);

    (a_g, b_g, c_g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub observable: bool,
}

/// Stacked observability matrix `[C; CA; ...; CA^(n-1)]`.
pub fn observability_matrix<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let q = c.nrows();
    let mut stacked = DMatrix::zeros(q * n, n);
    let mut block = c.clone();
    for i in 0..n {
        stacked.view_mut((i * q, 0), (q, n)).copy_from(&block);
        block = &block * a;
    }
    stacked
}

/// Numerical rank of the observability matrix.
pub fn observability_rank<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> Result<ObservabilityReport> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "A must be square and C must have matching columns (A {}x{}, C {}x{})",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let stacked = observability_matrix(a, c);
    let svd = stacked.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().fold(T::zero(), |m, &s| m.max(s));
    let dims = r64::<T>(stacked.nrows().max(stacked.ncols()) as f64);
    let tol = max_sv * dims * T::default_epsilon();
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    Ok(ObservabilityReport {
        rank,
        observable: rank == n,
    })
}

// Deterministic 64-bit generator driving the placement candidate search.
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform sample in [-2, 2).
    fn next_sym<T: Real>(&mut self) -> T {
        let unit = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        r64(unit * 4.0 - 2.0)
    }
}

const PLACEMENT_SEED: u64 = 42;
const PLACEMENT_TRIALS: usize = 2000;
const PLACEMENT_SHORTLIST: usize = 8;

// (slow-mode condition, parameter matrix, inverse eigenvector matrix)
type Candidate<T> = (T, DMatrix<Complex<T>>, DMatrix<Complex<T>>);

/// Result of a pole placement: the gain and the spectrum it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedGain<T = f64> {
    /// n x q observer gain.
    pub l: DMatrix<T>,
    pub achieved_poles: Vec<Complex<T>>,
    /// Eigenvalue condition number of the slowest placed mode; governs the
    /// long-horizon estimation-error envelope.
    pub slow_mode_condition: T,
}

fn sort_key<T: Real>(z: &Complex<T>) -> (f64, f64) {
    (
        z.re.to_f64().unwrap_or(f64::NAN),
        z.im.to_f64().unwrap_or(f64::NAN),
    )
}

fn sorted_spectrum<T: Real>(mut poles: Vec<Complex<T>>) -> Vec<Complex<T>> {
    poles.sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).unwrap());
    poles
}

/// Largest pairwise relative deviation between two equally sorted spectra.
pub fn spectrum_mismatch<T: Real>(achieved: &[Complex<T>], targets: &[Complex<T>]) -> T {
    assert_eq!(achieved.len(), targets.len());
    let a = sorted_spectrum(achieved.to_vec());
    let t = sorted_spectrum(targets.to_vec());
    let mut worst = T::zero();
    for (x, y) in a.iter().zip(&t) {
        let diff = complex_abs(Complex::new(x.re - y.re, x.im - y.im));
        let scale = complex_abs(*y).max(T::default_epsilon());
        worst = worst.max(diff / scale);
    }
    worst
}

fn complex_abs<T: Real>(z: Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|v| Complex::new(v, T::zero()))
}

/// Index of the conjugate partner for each target, `None` for real targets.
/// Errors unless complex targets come in exact conjugate pairs.
fn conjugate_partners<T: Real>(targets: &[Complex<T>]) -> Result<Vec<Option<usize>>> {
    let tol = r64::<T>(1e-9);
    let mut partner = vec![None; targets.len()];
    let mut j = 0;
    while j < targets.len() {
        if targets[j].im.abs() > tol {
            let conj = Complex::new(targets[j].re, -targets[j].im);
            let next = targets.get(j + 1).copied();
            let matches = next
                .map(|n| complex_abs(Complex::new(n.re - conj.re, n.im - conj.im)) <= tol * (T::one() + complex_abs(conj)))
                .unwrap_or(false);
            if !matches {
                return Err(Error::Placement(format!(
                    "complex target {} + {}i has no conjugate partner",
                    targets[j].re, targets[j].im
                )));
            }
            partner[j] = Some(j + 1);
            j += 2;
        } else {
            j += 1;
        }
    }
    Ok(partner)
}

/// Place the observer poles of `(A, C)`: find `L` so that the spectrum of
/// `A - L C` equals `targets`.
///
/// Works on the dual pair `(A', C')`: for a parameter matrix `G`, the
/// Sylvester relation `(A' - C'K) X = X diag(targets)` gives column-wise
/// linear systems `(A' - lambda_j I) x_j = C' g_j`, and `K = G X^(-1)`
/// places the spectrum whenever `X` is invertible; `L = K'`. A fixed-seed
/// family of `G` candidates is scanned and the winner minimizes the
/// slowest mode's eigenvalue condition number `|x_slow| |row_slow(X^-1)|`
/// (the columns of `X` are the left eigenvectors of `A - L C`).
///
/// The targets must be closed under conjugation, match the state dimension,
/// and avoid the open-loop spectrum (the Sylvester systems are singular at
/// an open-loop eigenvalue).
pub fn place_observer_poles<T: Real>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    targets: &[Complex<T>],
) -> Result<PlacedGain<T>> {
    let n = a.nrows();
    let q = c.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "A must be square and C must have matching columns (A {}x{}, C {}x{})",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    if targets.len() != n {
        return Err(Error::Placement(format!(
            "need exactly {n} target poles (got {})",
            targets.len()
        )));
    }
    let report = observability_rank(a, c)?;
    if !report.observable {
        return Err(Error::Unobservable {
            rank: report.rank,
            dim: n,
        });
    }

    let targets = sorted_spectrum(targets.to_vec());
    let partner = conjugate_partners(&targets)?;
    let slow = targets
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.re.abs())
                .partial_cmp(&b.1.re.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
        .expect("non-empty targets");

    // pre-factor the per-pole solves: P_j = (A' - lambda_j I)^(-1) C'
    let m_dual = to_complex(&a.transpose());
    let n_dual = to_complex(&c.transpose());
    let identity = DMatrix::<Complex<T>>::identity(n, n);
    let mut pre = Vec::with_capacity(n);
    for lambda in &targets {
        let shifted = &m_dual - &identity * *lambda;
        let solved = shifted.lu().solve(&n_dual).ok_or_else(|| {
            Error::Placement(format!(
                "target {} + {}i coincides with an open-loop eigenvalue",
                lambda.re, lambda.im
            ))
        })?;
        pre.push(solved);
    }

    let mut rng = SplitMix64::new(PLACEMENT_SEED);
    let mut shortlist: Vec<Candidate<T>> = Vec::new();
    for _ in 0..PLACEMENT_TRIALS {
        let g = random_parameter_matrix(&mut rng, q, n, &partner);
        let mut x = DMatrix::<Complex<T>>::zeros(n, n);
        for (j, solved) in pre.iter().enumerate() {
            let col = solved * g.column(j);
            x.column_mut(j).copy_from(&col);
        }
        let inv = match x.clone().lu().try_inverse() {
            Some(inv) => inv,
            None => continue,
        };
        let kappa = column_norm(&x, slow) * row_norm(&inv, slow);
        if !kappa.is_finite() {
            continue;
        }
        let pos = shortlist.partition_point(|(k, _, _)| *k < kappa);
        if pos < PLACEMENT_SHORTLIST {
            shortlist.insert(pos, (kappa, g, inv));
            shortlist.truncate(PLACEMENT_SHORTLIST);
        }
    }

    for (kappa, g, inv) in shortlist {
        let k_dual = &g * &inv;
        let worst_im = k_dual
            .iter()
            .fold(T::zero(), |m, z| m.max(z.im.abs()));
        let scale = k_dual
            .iter()
            .fold(T::one(), |m, z| m.max(z.re.abs()));
        if worst_im > r64::<T>(1e-6) * scale {
            continue;
        }
        let l = DMatrix::from_fn(n, q, |i, j| k_dual[(j, i)].re);
        let closed = a - &l * c;
        let achieved: Vec<Complex<T>> = closed.complex_eigenvalues().iter().copied().collect();
        if spectrum_mismatch(&achieved, &targets) <= r64(1e-9) {
            return Ok(PlacedGain {
                l,
                achieved_poles: sorted_spectrum(achieved),
                slow_mode_condition: kappa,
            });
        }
    }
    Err(Error::Placement(
        "no parameter candidate achieved the requested spectrum".into(),
    ))
}

fn random_parameter_matrix<T: Real>(
    rng: &mut SplitMix64,
    q: usize,
    n: usize,
    partner: &[Option<usize>],
) -> DMatrix<Complex<T>> {
    let mut g = DMatrix::<Complex<T>>::zeros(q, n);
    let mut j = 0;
    while j < n {
        match partner[j] {
            Some(pj) => {
                for i in 0..q {
                    let re: T = rng.next_sym();
                    let im: T = rng.next_sym();
                    g[(i, j)] = Complex::new(re, im);
                    g[(i, pj)] = Complex::new(re, -im);
                }
                j += 2;
            }
            None => {
                for i in 0..q {
                    g[(i, j)] = Complex::new(rng.next_sym(), T::zero());
                }
                j += 1;
            }
        }
    }
    g
}

fn column_norm<T: Real>(m: &DMatrix<Complex<T>>, j: usize) -> T {
    m.column(j)
        .iter()
        .fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im)
        .sqrt()
}

fn row_norm<T: Real>(m: &DMatrix<Complex<T>>, i: usize) -> T {
    m.row(i)
        .iter()
        .fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im)
        .sqrt()
}

/// Complete estimator design: composite matrices plus a placed gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDesign<T = f64> {
    pub a_g: DMatrix<T>,
    pub b_g: DMatrix<T>,
    pub c_g: DMatrix<T>,
    /// (n+q+1) x q gain stacking the state rows `L_x` over the fault row `L_f`.
    pub gain: DMatrix<T>,
    pub target_poles: Vec<Complex<T>>,
    pub achieved_poles: Vec<Complex<T>>,
    pub slow_mode_condition: T,
    n_plant: usize,
}

impl<T: Real> ObserverDesign<T> {
    pub fn new(aug: &AugmentedSystem<T>, targets: &[Complex<T>]) -> Result<Self> {
        if let Some(bad) = targets.iter().find(|t| t.re >= T::zero()) {
            return Err(Error::Placement(format!(
                "observer target poles must be strictly stable (got {} + {}i)",
                bad.re, bad.im
            )));
        }
        let (a_g, b_g, c_g) = build_observer_matrices(aug);
        let placed = place_observer_poles(&a_g, &c_g, targets)?;
        let abscissa = placed
            .achieved_poles
            .iter()
            .fold(T::from_f64(f64::NEG_INFINITY).unwrap(), |m, p| m.max(p.re));
        debug_assert!(abscissa < T::zero());
        Ok(ObserverDesign {
            a_g,
            b_g,
            c_g,
            gain: placed.l,
            target_poles: sorted_spectrum(targets.to_vec()),
            achieved_poles: placed.achieved_poles,
            slow_mode_condition: placed.slow_mode_condition,
            n_plant: aug.n_plant(),
        })
    }

    /// Number of augmented states (plant + filter), excluding the fault state.
    pub fn n_augmented(&self) -> usize {
        self.a_g.nrows() - 1
    }

    pub fn n_plant(&self) -> usize {
        self.n_plant
    }

    pub fn n_outputs(&self) -> usize {
        self.c_g.nrows()
    }

    /// State rows of the gain (the `L_x` block).
    pub fn gain_states(&self) -> DMatrix<T> {
        self.gain.rows(0, self.n_augmented()).into_owned()
    }

    /// Fault row of the gain (the `L_f` block).
    pub fn gain_fault(&self) -> DMatrix<T> {
        self.gain.rows(self.n_augmented(), 1).into_owned()
    }
}

/// Estimates carried between observer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T = f64> {
    /// Estimated augmented state `[x_hat; xi_hat]`.
    pub x_hat_e: DVector<T>,
    /// Estimated sensor-fault magnitude.
    pub f_hat_s: T,
}

impl<T: Real> ObserverState<T> {
    pub fn zero(design: &ObserverDesign<T>) -> Self {
        ObserverState {
            x_hat_e: DVector::zeros(design.n_augmented()),
            f_hat_s: T::zero(),
        }
    }

    pub fn to_vector(&self) -> DVector<T> {
        let ne = self.x_hat_e.len();
        let mut z = DVector::zeros(ne + 1);
        z.rows_mut(0, ne).copy_from(&self.x_hat_e);
        z[ne] = self.f_hat_s;
        z
    }

    pub fn from_vector(z: &DVector<T>) -> Self {
        let ne = z.len() - 1;
        ObserverState {
            x_hat_e: z.rows(0, ne).into_owned(),
            f_hat_s: z[ne],
        }
    }

    /// Predicted filtered measurement `y_e_hat = C_e x_hat_e`.
    pub fn predicted_output(&self, design: &ObserverDesign<T>) -> DVector<T> {
        let z = self.to_vector();
        &design.c_g * z
    }
}

/// Advance the estimator one step against a frozen measurement `y_e`.
///
/// Integrates `x_g_hat' = (A_g - L C_g) x_g_hat + B_g u + L y_e` with the
/// same fixed-step scheme the plant uses. When the estimator runs inside a
/// scenario loop the engine integrates it jointly with the plant instead,
/// which lets the correction term see the measurement evolve within the
/// step; this entry point serves standalone estimation at a fixed sample.
pub fn observer_step<T: Real>(
    state: &ObserverState<T>,
    design: &ObserverDesign<T>,
    u: T,
    y_e: &DVector<T>,
    dt: T,
) -> Result<ObserverState<T>> {
    let q = design.n_outputs();
    if y_e.len() != q {
        return Err(Error::Dimension(format!(
            "measurement must have {q} entries (got {})",
            y_e.len()
        )));
    }
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("dt must be positive (got {dt})")));
    }
    let a_cl = &design.a_g - &design.gain * &design.c_g;
    let m = design.b_g.ncols();
    let mut b_aug = DMatrix::zeros(design.a_g.nrows(), m + q);
    b_aug.view_mut((0, 0), (design.b_g.nrows(), m)).copy_from(&design.b_g);
    b_aug
        .view_mut((0, m), (design.gain.nrows(), q))
        .copy_from(&design.gain);
    let mut input = DVector::zeros(m + q);
    input[0] = u;
    input.rows_mut(m, q).copy_from(y_e);
    let next = integrate_step(&a_cl, &b_aug, &state.to_vector(), &input, dt)?;
    Ok(ObserverState::from_vector(&next))
}

/// Target estimator poles shipped with the scrubber model.
pub fn default_observer_poles<T: Real>() -> Vec<Complex<T>> {
    vec![
        Complex::new(r64(-54.4047), r64(33.5101)),
        Complex::new(r64(-54.4047), r64(-33.5101)),
        Complex::new(r64(-2.7588), T::zero()),
        Complex::new(r64(-0.1951), T::zero()),
        Complex::new(r64(-0.5291), T::zero()),
    ]
}

/// Gain retained from an earlier design pass, stored output-major (each row
/// pairs with one measured output). The `design` command reports the
/// spectrum this gain actually achieves next to the target poles; it is kept
/// for comparison only and is not used by the shipped loop.
pub fn legacy_gain_output_major<T: Real>() -> DMatrix<T> {
    DMatrix::from_row_slice(
        2,
        5,
        &[
            r64(-80.0016),
            r64(0.6563),
            r64(8.4656),
            r64(-0.2843),
            r64(0.2234),
            r64(18.9379),
            r64(-0.2651),
            r64(3.4306),
            r64(0.0377),
            r64(0.0301),
        ],
    )
}
