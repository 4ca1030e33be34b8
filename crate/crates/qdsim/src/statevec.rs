//! Dense state-vector and density-operator engine for small qubit registers.
//!
//! Convention used by every module in this crate: qubit 0 is the most
//! significant index bit, so the basis ket |b0 b1 .. b_{n-1}> sits at
//! amplitude index sum_q b_q << (n-1-q). Global phase is never normalized
//! away; use [`equal_up_to_phase`] to compare states physically.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

pub(crate) const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance for algebraic identities (unitarity, orthonormality, norms).
pub const TOL_ALGEBRA: f64 = 1e-12;
/// Tolerance for eigenvalue positivity of reduced density operators.
pub const TOL_EIGEN: f64 = 1e-10;
/// Tolerance for state fidelity checks (key pairs, distillation).
pub const TOL_FIDELITY: f64 = 1e-9;

/// Residual branch weight below which a measured qubit counts as definite.
const DEFINITE_RESIDUAL: f64 = 1e-9;
/// Branch probability below which sampling it signals an internal bug.
const P_NEGLIGIBLE: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("qubit {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("gate of arity {arity} applied to {targets} target qubits")]
    ArityMismatch { arity: usize, targets: usize },
    #[error("duplicate target qubit {qubit}")]
    DuplicateTarget { qubit: usize },
    #[error("amplitude vector of length {len} is not a positive power of two")]
    BadDimension { len: usize },
    #[error("vector norm {norm} too far from 1")]
    NotNormalized { norm: f64 },
    #[error("matrix is not unitary within {tol}")]
    NotUnitary { tol: f64 },
    #[error("basis kets are not orthonormal within {tol}")]
    NotOrthonormal { tol: f64 },
    #[error("projection onto a branch of probability {prob:.3e}")]
    ZeroProbabilityBranch { prob: f64 },
    #[error("qubit {qubit} is not definite: residual branch weight {residual:.3e}")]
    NotDefinite { qubit: usize, residual: f64 },
    #[error("keep set is empty")]
    EmptyKeepSet,
    #[error("operands have different qubit counts ({a} vs {b})")]
    SizeMismatch { a: usize, b: usize },
}

/// Pure state of `n_qubits` physical qubits as 2^n complex amplitudes.
#[derive(Clone, Debug)]
pub struct Ket {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Ket {
    /// |0..0> on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        assert!(n_qubits >= 1, "register needs at least one qubit");
        let mut amps = vec![C_ZERO; 1 << n_qubits];
        amps[0] = C_ONE;
        Ket { n_qubits, amps }
    }

    /// Computational basis ket |b0 b1 ..> from bit values.
    pub fn from_bits(bits: &[u8]) -> Self {
        assert!(!bits.is_empty());
        let n = bits.len();
        let mut index = 0usize;
        for (q, &b) in bits.iter().enumerate() {
            debug_assert!(b <= 1);
            index |= (b as usize) << (n - 1 - q);
        }
        let mut amps = vec![C_ZERO; 1 << n];
        amps[index] = C_ONE;
        Ket { n_qubits: n, amps }
    }

    /// Builds a state from raw amplitudes; the vector is validated to be a
    /// power-of-two length and normalized (within 1e-9), then rescaled to
    /// exact unit norm.
    pub fn from_amps(amps: Vec<Complex64>) -> Result<Self, StateError> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(StateError::BadDimension { len });
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(StateError::NotNormalized { norm });
        }
        let scale = 1.0 / norm;
        let amps = amps.into_iter().map(|a| a * scale).collect();
        Ok(Ket { n_qubits: len.trailing_zeros() as usize, amps })
    }

    /// Equal superposition helper for single-qubit states a|0> + b|1>.
    pub fn single(a: Complex64, b: Complex64) -> Result<Self, StateError> {
        Ket::from_amps(vec![a, b])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amp(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// <self|other>.
    pub fn inner(&self, other: &Ket) -> Complex64 {
        debug_assert_eq!(self.n_qubits, other.n_qubits);
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |<self|other>|^2.
    pub fn fidelity(&self, other: &Ket) -> f64 {
        self.inner(other).norm_sqr()
    }

    fn shift_of(&self, qubit: usize) -> usize {
        self.n_qubits - 1 - qubit
    }

    fn check_qubit(&self, qubit: usize) -> Result<(), StateError> {
        if qubit >= self.n_qubits {
            return Err(StateError::QubitOutOfRange { qubit, n_qubits: self.n_qubits });
        }
        Ok(())
    }

    /// Product state; `other`'s qubits are appended after `self`'s.
    pub fn tensor(&self, other: &Ket) -> Ket {
        let n = self.n_qubits + other.n_qubits;
        let mut amps = vec![C_ZERO; 1 << n];
        let bd = other.amps.len();
        for (ia, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            for (ib, b) in other.amps.iter().enumerate() {
                amps[ia * bd + ib] = a * b;
            }
        }
        Ket { n_qubits: n, amps }
    }

    /// Applies `gate` to `targets` (targets[0] is the gate's most significant
    /// qubit), identity elsewhere.
    pub fn apply(&self, gate: &Gate, targets: &[usize]) -> Result<Ket, StateError> {
        let k = gate.arity();
        if targets.len() != k {
            return Err(StateError::ArityMismatch { arity: k, targets: targets.len() });
        }
        for (i, &t) in targets.iter().enumerate() {
            self.check_qubit(t)?;
            if targets[..i].contains(&t) {
                return Err(StateError::DuplicateTarget { qubit: t });
            }
        }
        let dim = 1usize << k;
        let shifts: Vec<usize> = targets.iter().map(|&t| self.shift_of(t)).collect();
        let tmask: usize = shifts.iter().map(|&s| 1usize << s).sum();
        let mut out = self.amps.clone();
        let mut idxs = vec![0usize; dim];
        let mut sub = vec![C_ZERO; dim];
        for base in 0..self.amps.len() {
            if base & tmask != 0 {
                continue;
            }
            for g in 0..dim {
                let mut idx = base;
                for (j, &s) in shifts.iter().enumerate() {
                    if (g >> (k - 1 - j)) & 1 == 1 {
                        idx |= 1 << s;
                    }
                }
                idxs[g] = idx;
                sub[g] = self.amps[idx];
            }
            for (r, &ir) in idxs.iter().enumerate() {
                let mut acc = C_ZERO;
                for (c, &v) in sub.iter().enumerate() {
                    acc += gate.entry(r, c) * v;
                }
                out[ir] = acc;
            }
        }
        Ok(Ket { n_qubits: self.n_qubits, amps: out })
    }

    /// Born probability of reading `outcome` when measuring `qubit` in `basis`.
    pub fn branch_probability(
        &self,
        qubit: usize,
        basis: &MeasureBasis,
        outcome: u8,
    ) -> Result<f64, StateError> {
        self.check_qubit(qubit)?;
        let step = 1usize << self.shift_of(qubit);
        let b = basis.ket(outcome);
        let mut p = 0.0;
        for i0 in (0..self.amps.len()).filter(|i| i & step == 0) {
            let coeff = b[0].conj() * self.amps[i0] + b[1].conj() * self.amps[i0 | step];
            p += coeff.norm_sqr();
        }
        Ok(p)
    }

    /// Projects `qubit` onto the `outcome` basis ket and renormalizes.
    /// Returns the branch probability together with the collapsed state.
    pub fn project(
        &self,
        qubit: usize,
        basis: &MeasureBasis,
        outcome: u8,
    ) -> Result<(f64, Ket), StateError> {
        self.check_qubit(qubit)?;
        let step = 1usize << self.shift_of(qubit);
        let b = basis.ket(outcome);
        let mut out = vec![C_ZERO; self.amps.len()];
        let mut p = 0.0;
        for i0 in (0..self.amps.len()).filter(|i| i & step == 0) {
            let i1 = i0 | step;
            let coeff = b[0].conj() * self.amps[i0] + b[1].conj() * self.amps[i1];
            p += coeff.norm_sqr();
            out[i0] = coeff * b[0];
            out[i1] = coeff * b[1];
        }
        if p < P_NEGLIGIBLE {
            return Err(StateError::ZeroProbabilityBranch { prob: p });
        }
        let scale = 1.0 / p.sqrt();
        for a in &mut out {
            *a *= scale;
        }
        Ok((p, Ket { n_qubits: self.n_qubits, amps: out }))
    }

    /// Born-rule measurement of one qubit in the given basis. Returns the
    /// sampled outcome bit and the renormalized collapsed state.
    pub fn measure(
        &self,
        qubit: usize,
        basis: &MeasureBasis,
        rng: &mut impl Rng,
    ) -> Result<(u8, Ket), StateError> {
        let p0 = self.branch_probability(qubit, basis, 0)?;
        let outcome = if rng.random::<f64>() < p0 { 0 } else { 1 };
        let (p, state) = self.project(qubit, basis, outcome).map_err(|e| match e {
            // Sampling a branch of negligible probability means the sampler
            // and the projector disagree, which is an internal logic error.
            StateError::ZeroProbabilityBranch { prob } => {
                panic!("sampled a branch of probability {prob:.3e}")
            }
            other => other,
        })?;
        debug_assert!(p > 0.0);
        Ok((outcome, state))
    }

    /// Removes a qubit that is in a definite computational state, returning
    /// the state of the remaining qubits. Errors if the qubit still carries
    /// weight in both branches.
    pub fn drop_qubit(&self, qubit: usize) -> Result<Ket, StateError> {
        self.check_qubit(qubit)?;
        assert!(self.n_qubits >= 2, "cannot drop the last qubit");
        let step = 1usize << self.shift_of(qubit);
        let mut w = [0.0f64; 2];
        for (i, a) in self.amps.iter().enumerate() {
            w[usize::from(i & step != 0)] += a.norm_sqr();
        }
        let residual = w[0].min(w[1]);
        if residual > DEFINITE_RESIDUAL {
            return Err(StateError::NotDefinite { qubit, residual });
        }
        let bit = usize::from(w[1] > w[0]);
        let scale = 1.0 / w[bit].sqrt();
        let keep_val = if bit == 1 { step } else { 0 };
        let mut amps = Vec::with_capacity(self.amps.len() / 2);
        for (i, a) in self.amps.iter().enumerate() {
            if i & step == keep_val {
                amps.push(a * scale);
            }
        }
        Ok(Ket { n_qubits: self.n_qubits - 1, amps })
    }

    /// Reduced density operator over `keep` (row/column qubit order follows
    /// `keep`'s order).
    pub fn reduced_density(&self, keep: &[usize]) -> Result<DensityOp, StateError> {
        if keep.is_empty() {
            return Err(StateError::EmptyKeepSet);
        }
        for (i, &q) in keep.iter().enumerate() {
            self.check_qubit(q)?;
            if keep[..i].contains(&q) {
                return Err(StateError::DuplicateTarget { qubit: q });
            }
        }
        let k = keep.len();
        let dim = 1usize << k;
        let keep_shifts: Vec<usize> = keep.iter().map(|&q| self.shift_of(q)).collect();
        let env_shifts: Vec<usize> = (0..self.n_qubits)
            .filter(|q| !keep.contains(q))
            .map(|q| self.shift_of(q))
            .collect();
        let spread = |g: usize, shifts: &[usize]| -> usize {
            let mut idx = 0usize;
            for (j, &s) in shifts.iter().enumerate() {
                if (g >> (shifts.len() - 1 - j)) & 1 == 1 {
                    idx |= 1 << s;
                }
            }
            idx
        };
        let mut m = vec![C_ZERO; dim * dim];
        for e in 0..(1usize << env_shifts.len()) {
            let ebits = spread(e, &env_shifts);
            for r in 0..dim {
                let ir = ebits | spread(r, &keep_shifts);
                let ar = self.amps[ir];
                if ar.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    let ic = ebits | spread(c, &keep_shifts);
                    m[r * dim + c] += ar * self.amps[ic].conj();
                }
            }
        }
        Ok(DensityOp { n_qubits: k, m })
    }
}

/// Smallest ||a - lambda*b|| over unit phases lambda. The optimal lambda is
/// the phase of <b|a>; the residual is evaluated by element-wise subtraction
/// so distances far below sqrt(epsilon) are resolved.
pub fn phase_aligned_distance(a: &Ket, b: &Ket) -> f64 {
    assert_eq!(a.n_qubits, b.n_qubits, "states must have equal size");
    let ip = b.inner(a);
    let lambda = if ip.norm() > 0.0 { ip / ip.norm() } else { C_ONE };
    let diff_sq: f64 = a
        .amps
        .iter()
        .zip(&b.amps)
        .map(|(x, y)| (x - lambda * y).norm_sqr())
        .sum();
    diff_sq.sqrt()
}

/// True iff there is a unit phase lambda with ||a - lambda*b|| <= tol.
pub fn equal_up_to_phase(a: &Ket, b: &Ket, tol: f64) -> bool {
    a.n_qubits == b.n_qubits && phase_aligned_distance(a, b) <= tol
}

/// Unitary matrix on `arity` qubits, row-major over 2^arity basis states.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    arity: usize,
    m: Vec<Complex64>,
}

impl Gate {
    /// Validates unitarity within 1e-12.
    pub fn new(arity: usize, m: Vec<Complex64>) -> Result<Self, StateError> {
        let dim = 1usize << arity;
        if m.len() != dim * dim {
            return Err(StateError::BadDimension { len: m.len() });
        }
        let g = Gate { arity, m };
        if !g.is_unitary(TOL_ALGEBRA) {
            return Err(StateError::NotUnitary { tol: TOL_ALGEBRA });
        }
        Ok(g)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        1 << self.arity
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.m[r * self.dim() + c]
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let dim = self.dim();
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = C_ZERO;
                for k in 0..dim {
                    acc += self.entry(r, k) * self.entry(c, k).conj();
                }
                let expect = if r == c { C_ONE } else { C_ZERO };
                if (acc - expect).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn identity(arity: usize) -> Gate {
        let dim = 1usize << arity;
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            m[r * dim + r] = C_ONE;
        }
        Gate { arity, m }
    }

    fn from_reals(arity: usize, entries: &[f64]) -> Gate {
        Gate { arity, m: entries.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }

    pub fn sigma_x() -> Gate {
        Gate::from_reals(1, &[0.0, 1.0, 1.0, 0.0])
    }

    pub fn sigma_z() -> Gate {
        Gate::from_reals(1, &[1.0, 0.0, 0.0, -1.0])
    }

    /// -i sigma_y = |1><0| - |0><1|: sends |0> to |1> and |1> to -|0>.
    pub fn minus_i_sigma_y() -> Gate {
        Gate::from_reals(1, &[0.0, -1.0, 1.0, 0.0])
    }

    pub fn hadamard() -> Gate {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Gate::from_reals(1, &[h, h, h, -h])
    }

    /// Phase gate S = diag(1, i).
    pub fn phase_s() -> Gate {
        Gate {
            arity: 1,
            m: vec![C_ONE, C_ZERO, C_ZERO, Complex64::new(0.0, 1.0)],
        }
    }

    /// diag(1, e^{i phi}).
    pub fn phase(phi: f64) -> Gate {
        Gate {
            arity: 1,
            m: vec![C_ONE, C_ZERO, C_ZERO, Complex64::from_polar(1.0, phi)],
        }
    }

    /// Real rotation [[cos t, sin t], [-sin t, cos t]]; sends |0> to
    /// cos t|0> - sin t|1>.
    pub fn rotation(theta: f64) -> Gate {
        let (s, c) = theta.sin_cos();
        Gate::from_reals(1, &[c, s, -s, c])
    }

    pub fn cnot() -> Gate {
        Gate::sigma_x().controlled()
    }

    /// Matrix product self * other (self applied second).
    pub fn mul(&self, other: &Gate) -> Gate {
        assert_eq!(self.arity, other.arity);
        let dim = self.dim();
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            for k in 0..dim {
                let a = self.entry(r, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    m[r * dim + c] += a * other.entry(k, c);
                }
            }
        }
        Gate { arity: self.arity, m }
    }

    /// Kronecker product; `self` acts on the more significant qubits.
    pub fn kron(&self, other: &Gate) -> Gate {
        let (da, db) = (self.dim(), other.dim());
        let dim = da * db;
        let mut m = vec![C_ZERO; dim * dim];
        for ra in 0..da {
            for ca in 0..da {
                let a = self.entry(ra, ca);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for rb in 0..db {
                    for cb in 0..db {
                        m[(ra * db + rb) * dim + (ca * db + cb)] = a * other.entry(rb, cb);
                    }
                }
            }
        }
        Gate { arity: self.arity + other.arity, m }
    }

    pub fn dagger(&self) -> Gate {
        let dim = self.dim();
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                m[r * dim + c] = self.entry(c, r).conj();
            }
        }
        Gate { arity: self.arity, m }
    }

    /// |0><0| (x) I + |1><1| (x) self; the control becomes the new most
    /// significant gate qubit (targets[0] at application time).
    pub fn controlled(&self) -> Gate {
        let d = self.dim();
        let dim = 2 * d;
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..d {
            m[r * dim + r] = C_ONE;
            for c in 0..d {
                m[(d + r) * dim + (d + c)] = self.entry(r, c);
            }
        }
        Gate { arity: self.arity + 1, m }
    }
}

/// Orthonormal single-qubit measurement basis; `ket(b)` is the state that
/// reports outcome bit `b`.
#[derive(Clone, Debug)]
pub struct MeasureBasis {
    label: &'static str,
    kets: [[Complex64; 2]; 2],
}

impl MeasureBasis {
    pub fn new(label: &'static str, kets: [[Complex64; 2]; 2]) -> Result<Self, StateError> {
        for k in &kets {
            let n = (k[0].norm_sqr() + k[1].norm_sqr()).sqrt();
            if (n - 1.0).abs() > TOL_ALGEBRA {
                return Err(StateError::NotOrthonormal { tol: TOL_ALGEBRA });
            }
        }
        let ip = kets[0][0].conj() * kets[1][0] + kets[0][1].conj() * kets[1][1];
        if ip.norm() > TOL_ALGEBRA {
            return Err(StateError::NotOrthonormal { tol: TOL_ALGEBRA });
        }
        Ok(MeasureBasis { label, kets })
    }

    /// Computational basis {|0>, |1>}.
    pub fn z() -> MeasureBasis {
        MeasureBasis {
            label: "Z",
            kets: [[C_ONE, C_ZERO], [C_ZERO, C_ONE]],
        }
    }

    /// {|+>, |->}; outcome 0 means |+>.
    pub fn x() -> MeasureBasis {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        MeasureBasis {
            label: "X",
            kets: [[h, h], [h, -h]],
        }
    }

    /// Circular basis {(|0>+i|1>)/sqrt2, (|0>-i|1>)/sqrt2}; outcome 0 means
    /// the +i ket.
    pub fn ycirc() -> MeasureBasis {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = Complex64::new(h, 0.0);
        let i = Complex64::new(0.0, h);
        MeasureBasis {
            label: "Ycirc",
            kets: [[r, i], [r, -i]],
        }
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn ket(&self, outcome: u8) -> &[Complex64; 2] {
        &self.kets[usize::from(outcome != 0)]
    }

    /// Unitary sending ket(b) to |b>, used to leave measured qubits in
    /// computational frame after a collapse.
    pub fn to_computational(&self) -> Gate {
        let k = &self.kets;
        Gate {
            arity: 1,
            m: vec![k[0][0].conj(), k[0][1].conj(), k[1][0].conj(), k[1][1].conj()],
        }
    }
}

/// Density operator over `n_qubits`, row-major 2^n x 2^n.
#[derive(Clone, Debug)]
pub struct DensityOp {
    n_qubits: usize,
    m: Vec<Complex64>,
}

impl DensityOp {
    pub fn from_ket(k: &Ket) -> DensityOp {
        let dim = k.dim();
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            let ar = k.amps[r];
            if ar.norm_sqr() == 0.0 {
                continue;
            }
            for c in 0..dim {
                m[r * dim + c] = ar * k.amps[c].conj();
            }
        }
        DensityOp { n_qubits: k.n_qubits, m }
    }

    /// Statistical mixture sum_i w_i |k_i><k_i|; weights must sum to 1.
    pub fn from_mixture(parts: &[(f64, &Ket)]) -> Result<DensityOp, StateError> {
        assert!(!parts.is_empty());
        let n = parts[0].1.n_qubits;
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(StateError::NotNormalized { norm: total });
        }
        let dim = 1usize << n;
        let mut m = vec![C_ZERO; dim * dim];
        for (w, k) in parts {
            if k.n_qubits != n {
                return Err(StateError::SizeMismatch { a: n, b: k.n_qubits });
            }
            for r in 0..dim {
                let ar = k.amps[r];
                if ar.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    m[r * dim + c] += w * ar * k.amps[c].conj();
                }
            }
        }
        Ok(DensityOp { n_qubits: n, m })
    }

    pub fn maximally_mixed(n_qubits: usize) -> DensityOp {
        let dim = 1usize << n_qubits;
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            m[r * dim + r] = Complex64::new(1.0 / dim as f64, 0.0);
        }
        DensityOp { n_qubits, m }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.m[r * self.dim() + c]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|r| self.entry(r, r)).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let dim = self.dim();
        for r in 0..dim {
            for c in r..dim {
                if (self.entry(r, c) - self.entry(c, r).conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Traces out all qubits not in `keep`.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityOp, StateError> {
        if keep.is_empty() {
            return Err(StateError::EmptyKeepSet);
        }
        for (i, &q) in keep.iter().enumerate() {
            if q >= self.n_qubits {
                return Err(StateError::QubitOutOfRange { qubit: q, n_qubits: self.n_qubits });
            }
            if keep[..i].contains(&q) {
                return Err(StateError::DuplicateTarget { qubit: q });
            }
        }
        let k = keep.len();
        let out_dim = 1usize << k;
        let keep_shifts: Vec<usize> = keep.iter().map(|&q| self.n_qubits - 1 - q).collect();
        let env_shifts: Vec<usize> = (0..self.n_qubits)
            .filter(|q| !keep.contains(q))
            .map(|q| self.n_qubits - 1 - q)
            .collect();
        let spread = |g: usize, shifts: &[usize]| -> usize {
            let mut idx = 0usize;
            for (j, &s) in shifts.iter().enumerate() {
                if (g >> (shifts.len() - 1 - j)) & 1 == 1 {
                    idx |= 1 << s;
                }
            }
            idx
        };
        let dim = self.dim();
        let mut m = vec![C_ZERO; out_dim * out_dim];
        for e in 0..(1usize << env_shifts.len()) {
            let ebits = spread(e, &env_shifts);
            for r in 0..out_dim {
                let ir = ebits | spread(r, &keep_shifts);
                for c in 0..out_dim {
                    let ic = ebits | spread(c, &keep_shifts);
                    m[r * out_dim + c] += self.m[ir * dim + ic];
                }
            }
        }
        Ok(DensityOp { n_qubits: k, m })
    }

    /// Real eigenvalues in ascending order (the operator is assumed
    /// Hermitian, which holds for every density operator this crate builds).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let dim = self.dim();
        let m = DMatrix::from_fn(dim, dim, |r, c| self.m[r * dim + c]);
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
        ev
    }

    /// Trace distance (1/2)||rho - sigma||_1.
    pub fn trace_distance(&self, other: &DensityOp) -> Result<f64, StateError> {
        if self.n_qubits != other.n_qubits {
            return Err(StateError::SizeMismatch { a: self.n_qubits, b: other.n_qubits });
        }
        let dim = self.dim();
        let mut diff = self.clone();
        for i in 0..dim * dim {
            diff.m[i] -= other.m[i];
        }
        Ok(0.5 * diff.eigenvalues().iter().map(|l| l.abs()).sum::<f64>())
    }

    /// Von Neumann entropy in bits; eigenvalues inside [-1e-10, 0] are
    /// clamped to zero.
    pub fn von_neumann_entropy_bits(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|&l| -l * l.log2())
            .sum()
    }

    /// <psi| rho |psi>.
    pub fn fidelity_with_ket(&self, psi: &Ket) -> Result<f64, StateError> {
        if self.n_qubits != psi.n_qubits {
            return Err(StateError::SizeMismatch { a: self.n_qubits, b: psi.n_qubits });
        }
        let dim = self.dim();
        let mut acc = C_ZERO;
        for r in 0..dim {
            for c in 0..dim {
                acc += psi.amps[r].conj() * self.m[r * dim + c] * psi.amps[c];
            }
        }
        Ok(acc.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ket(amps: &[Complex64]) -> Ket {
        Ket::from_amps(amps.to_vec()).unwrap()
    }

    pub(crate) fn phi_plus() -> Ket {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        ket(&[c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0)])
    }

    #[test]
    fn tensor_of_basis_kets_is_basis_ket() {
        let t = Ket::from_bits(&[0]).tensor(&Ket::from_bits(&[1]));
        assert_eq!(t.amp(0), C_ZERO);
        assert_eq!(t.amp(1), C_ONE);
        assert_eq!(t.amp(2), C_ZERO);
        assert_eq!(t.amp(3), C_ZERO);
    }

    #[test]
    fn tensor_respects_linearity() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = ket(&[c(h, 0.0), c(h, 0.0)]);
        let t = plus.tensor(&Ket::from_bits(&[0]));
        // (|00> + |10>)/sqrt2
        assert!((t.amp(0).re - h).abs() < 1e-15);
        assert!((t.amp(2).re - h).abs() < 1e-15);
        assert_eq!(t.amp(1), C_ZERO);
        assert_eq!(t.amp(3), C_ZERO);
    }

    #[test]
    fn tensor_prefixes_first_operand() {
        // |0> (x) |01| : the single qubit becomes the most significant one.
        let t = Ket::from_bits(&[0]).tensor(&Ket::from_bits(&[0, 1]));
        assert_eq!(t.amp(0b001), C_ONE);
    }

    #[test]
    fn apply_sigma_x_flips_msb() {
        let out = Ket::from_bits(&[0, 1]).apply(&Gate::sigma_x(), &[0]).unwrap();
        assert_eq!(out.amp(0b11), C_ONE);
    }

    #[test]
    fn apply_hadamard_makes_plus() {
        let out = Ket::from_bits(&[0]).apply(&Gate::hadamard(), &[0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.amp(0).re - h).abs() < 1e-15);
        assert!((out.amp(1).re - h).abs() < 1e-15);
    }

    #[test]
    fn cnot_on_three_qubit_superposition() {
        // (|0>|01> + |1>|10>)/sqrt2 with CNOT on qubits 1 -> 2 gives
        // (|0>|01> + |1>|11>)/sqrt2.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![C_ZERO; 8];
        amps[0b001] = c(h, 0.0);
        amps[0b110] = c(h, 0.0);
        let state = ket(&amps);
        let out = state.apply(&Gate::cnot(), &[1, 2]).unwrap();
        assert!((out.amp(0b001).re - h).abs() < 1e-15);
        assert!((out.amp(0b111).re - h).abs() < 1e-15);
        assert_eq!(out.amp(0b110), C_ZERO);
    }

    #[test]
    fn minus_i_sigma_y_action() {
        let g = Gate::minus_i_sigma_y();
        let out0 = Ket::from_bits(&[0]).apply(&g, &[0]).unwrap();
        assert_eq!(out0.amp(1), C_ONE);
        let out1 = Ket::from_bits(&[1]).apply(&g, &[0]).unwrap();
        assert_eq!(out1.amp(0), c(-1.0, 0.0));
    }

    #[test]
    fn apply_rejects_bad_targets() {
        let s = Ket::zero(2);
        assert_eq!(
            s.apply(&Gate::cnot(), &[0]).unwrap_err(),
            StateError::ArityMismatch { arity: 2, targets: 1 }
        );
        assert_eq!(
            s.apply(&Gate::cnot(), &[0, 2]).unwrap_err(),
            StateError::QubitOutOfRange { qubit: 2, n_qubits: 2 }
        );
        assert_eq!(
            s.apply(&Gate::cnot(), &[1, 1]).unwrap_err(),
            StateError::DuplicateTarget { qubit: 1 }
        );
    }

    #[test]
    fn measure_definite_state_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..32 {
            let (bit, post) = Ket::from_bits(&[0]).measure(0, &MeasureBasis::z(), &mut rng).unwrap();
            assert_eq!(bit, 0);
            assert_eq!(post.amp(0), C_ONE);
        }
    }

    #[test]
    fn measure_plus_in_x_is_deterministic() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = ket(&[c(h, 0.0), c(h, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..32 {
            let (bit, _) = plus.measure(0, &MeasureBasis::x(), &mut rng).unwrap();
            assert_eq!(bit, 0);
        }
    }

    #[test]
    fn measure_collapses_entangled_partner() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..32 {
            let (bit, post) = phi_plus().measure(0, &MeasureBasis::z(), &mut rng).unwrap();
            let (bit2, _) = post.measure(1, &MeasureBasis::z(), &mut rng).unwrap();
            assert_eq!(bit, bit2);
        }
    }

    #[test]
    fn measurement_statistics_on_plus() {
        // 1e5 Z measurements of |+>; P(0) must sit within 5 sigma of 1/2.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = ket(&[c(h, 0.0), c(h, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let trials = 100_000u32;
        let mut zeros = 0u32;
        for _ in 0..trials {
            let (bit, _) = plus.measure(0, &MeasureBasis::z(), &mut rng).unwrap();
            zeros += u32::from(bit == 0);
        }
        let p = f64::from(zeros) / f64::from(trials);
        let sigma = (0.25 / f64::from(trials)).sqrt();
        assert!((p - 0.5).abs() < 5.0 * sigma, "p = {p}");
    }

    #[test]
    fn x_measurement_of_three_qubit_resource_leaves_quoted_residual() {
        // Measuring the first qubit of (|0>|01> + |1>|10>)/sqrt2 in X with
        // outcome |+> leaves (|++> - |-->)/sqrt2 on the remaining qubits.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![C_ZERO; 8];
        amps[0b001] = c(h, 0.0);
        amps[0b110] = c(h, 0.0);
        let state = ket(&amps);
        let (_p, post) = state.project(0, &MeasureBasis::x(), 0).unwrap();
        let hh = Gate::hadamard().kron(&Gate::hadamard());
        let plus_plus = Ket::zero(2).apply(&hh, &[0, 1]).unwrap();
        let minus_minus = Ket::from_bits(&[1, 1]).apply(&hh, &[0, 1]).unwrap();
        let mut rest = vec![C_ZERO; 4];
        for i in 0..4 {
            rest[i] = (plus_plus.amp(i) - minus_minus.amp(i)) * h;
        }
        // the measured qubit stays in its |+> eigenstate after projection
        let plus = ket(&[c(h, 0.0), c(h, 0.0)]);
        let expect = plus.tensor(&ket(&rest));
        assert!(equal_up_to_phase(&post, &expect, 1e-12));
    }

    #[test]
    fn project_zero_probability_branch_errors() {
        let err = Ket::from_bits(&[0]).project(0, &MeasureBasis::z(), 1).unwrap_err();
        assert!(matches!(err, StateError::ZeroProbabilityBranch { .. }));
    }

    #[test]
    fn equal_up_to_phase_accepts_global_phase() {
        let s = phi_plus();
        let phased = s.apply(&Gate::phase(1.234), &[0]).unwrap();
        let phased = phased.apply(&Gate::phase(1.234), &[1]).unwrap();
        // diag phases on |00>+|11> give e^{i 2.468}|11> only; build a true
        // global phase instead.
        let lam = Complex64::from_polar(1.0, 0.777);
        let g = Ket::from_amps(s.amps().iter().map(|a| a * lam).collect()).unwrap();
        assert!(equal_up_to_phase(&s, &g, 1e-12));
        assert!(!equal_up_to_phase(&s, &phased, 1e-6));
    }

    #[test]
    fn equal_up_to_phase_rejects_orthogonal_and_accepts_sign() {
        let s01 = Ket::from_bits(&[0, 1]);
        let s10 = Ket::from_bits(&[1, 0]);
        assert!(!equal_up_to_phase(&s01, &s10, 1e-9));
        let neg = Ket::from_amps(s01.amps().iter().map(|a| -a).collect()).unwrap();
        assert!(equal_up_to_phase(&s01, &neg, 1e-12));
    }

    #[test]
    fn drop_qubit_removes_definite_qubit() {
        let s = phi_plus().tensor(&Ket::from_bits(&[1]));
        let out = s.drop_qubit(2).unwrap();
        assert!(equal_up_to_phase(&out, &phi_plus(), 1e-12));
        let err = phi_plus().drop_qubit(0).unwrap_err();
        assert!(matches!(err, StateError::NotDefinite { .. }));
    }

    #[test]
    fn reduced_density_of_bell_half_is_maximally_mixed() {
        let rho = phi_plus().reduced_density(&[0]).unwrap();
        assert!(rho.trace_distance(&DensityOp::maximally_mixed(1)).unwrap() < 1e-12);
    }

    #[test]
    fn reduced_density_of_product_is_pure() {
        let s = phi_plus().tensor(&Ket::from_bits(&[1]));
        let rho = s.reduced_density(&[2]).unwrap();
        assert!((rho.fidelity_with_ket(&Ket::from_bits(&[1])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_density_of_ghz_like_state_is_code_mixture() {
        // Tracing the two "key" qubits out of (|00>|01> + |11>|10>)/sqrt2
        // leaves the even mixture of |01> and |10|.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![C_ZERO; 16];
        amps[0b0001] = c(h, 0.0);
        amps[0b1110] = c(h, 0.0);
        let state = ket(&amps);
        let rho = state.reduced_density(&[2, 3]).unwrap();
        let m01 = Ket::from_bits(&[0, 1]);
        let m10 = Ket::from_bits(&[1, 0]);
        let expect = DensityOp::from_mixture(&[(0.5, &m01), (0.5, &m10)]).unwrap();
        assert!(rho.trace_distance(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn keep_all_gives_projector() {
        let s = phi_plus();
        let rho = s.reduced_density(&[0, 1]).unwrap();
        assert!((rho.fidelity_with_ket(&s).unwrap() - 1.0).abs() < 1e-12);
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_keep_set_rejected() {
        assert_eq!(phi_plus().reduced_density(&[]).unwrap_err(), StateError::EmptyKeepSet);
    }

    #[test]
    fn density_entropy_and_eigenvalues() {
        let mixed = DensityOp::maximally_mixed(2);
        assert!((mixed.von_neumann_entropy_bits() - 2.0).abs() < 1e-12);
        let pure = DensityOp::from_ket(&phi_plus());
        assert!(pure.von_neumann_entropy_bits().abs() < 1e-9);
        let ev = pure.eigenvalues();
        assert!((ev.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gate_constructors_are_unitary() {
        for g in [
            Gate::sigma_x(),
            Gate::sigma_z(),
            Gate::minus_i_sigma_y(),
            Gate::hadamard(),
            Gate::phase_s(),
            Gate::phase(0.37),
            Gate::rotation(1.1),
            Gate::cnot(),
            Gate::cnot().controlled(),
        ] {
            assert!(g.is_unitary(1e-12));
        }
    }

    #[test]
    fn gate_new_rejects_non_unitary() {
        let m = vec![C_ONE, C_ONE, C_ZERO, C_ONE];
        assert_eq!(Gate::new(1, m).unwrap_err(), StateError::NotUnitary { tol: 1e-12 });
    }

    #[test]
    fn rotation_matches_quoted_example() {
        // quarter-turn sends |0> to -|1>
        let out = Ket::from_bits(&[0])
            .apply(&Gate::rotation(std::f64::consts::FRAC_PI_2), &[0])
            .unwrap();
        assert!((out.amp(1).re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_to_computational_aligns_outcomes() {
        for basis in [MeasureBasis::x(), MeasureBasis::ycirc()] {
            for outcome in [0u8, 1] {
                let k = basis.ket(outcome);
                let s = ket(&[k[0], k[1]]);
                let out = s.apply(&basis.to_computational(), &[0]).unwrap();
                assert!(equal_up_to_phase(&out, &Ket::from_bits(&[outcome]), 1e-12));
            }
        }
    }

    fn random_unitary(arity: usize, rng: &mut ChaCha8Rng) -> Gate {
        // Gram-Schmidt on a random complex matrix, run twice so the columns
        // are orthonormal to machine precision.
        let dim = 1usize << arity;
        let mut cols: Vec<Vec<Complex64>> = (0..dim)
            .map(|_| (0..dim).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
            .collect();
        for _ in 0..2 {
            for i in 0..dim {
                for j in 0..i {
                    let ip: Complex64 =
                        cols[j].iter().zip(&cols[i]).map(|(a, b)| a.conj() * b).sum();
                    for k in 0..dim {
                        let prev = cols[j][k];
                        cols[i][k] -= ip * prev;
                    }
                }
                let n = cols[i].iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                for k in 0..dim {
                    cols[i][k] /= n;
                }
            }
        }
        let mut m = vec![C_ZERO; dim * dim];
        for r in 0..dim {
            for cix in 0..dim {
                m[r * dim + cix] = cols[cix][r];
            }
        }
        Gate::new(arity, m).unwrap()
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Ket {
        let dim = 1usize << n;
        let amps: Vec<Complex64> =
            (0..dim).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        Ket::from_amps(amps.into_iter().map(|a| a / norm).collect()).unwrap()
    }

    #[test]
    fn norm_preserved_over_random_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut state = random_state(4, &mut rng);
        for i in 0..1000 {
            let arity = 1 + (i % 2);
            let g = random_unitary(arity, &mut rng);
            let t0 = i % 4;
            let targets: Vec<usize> =
                if arity == 1 { vec![t0] } else { vec![t0, (t0 + 1) % 4] };
            state = state.apply(&g, &targets).unwrap();
            assert!((state.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_then_dagger_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let g = random_unitary(2, &mut rng);
            let s = random_state(3, &mut rng);
            let roundtrip = s.apply(&g, &[1, 2]).unwrap().apply(&g.dagger(), &[1, 2]).unwrap();
            assert!(equal_up_to_phase(&roundtrip, &s, 1e-12));
            let mut diff = 0.0f64;
            for i in 0..s.dim() {
                diff += (roundtrip.amp(i) - s.amp(i)).norm_sqr();
            }
            assert!(diff.sqrt() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_output_is_valid_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let s = random_state(4, &mut rng);
            let rho = s.reduced_density(&[1, 3]).unwrap();
            assert!(rho.is_hermitian(1e-12));
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            assert!(rho.trace().im.abs() < 1e-12);
            assert!(rho.eigenvalues().iter().all(|&l| l >= -1e-10));
        }
    }

    #[test]
    fn density_partial_trace_matches_ket_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = random_state(3, &mut rng);
        let via_ket = s.reduced_density(&[0, 2]).unwrap();
        let via_density = DensityOp::from_ket(&s).partial_trace(&[0, 2]).unwrap();
        assert!(via_ket.trace_distance(&via_density).unwrap() < 1e-12);
    }

    #[test]
    fn controlled_gate_blocks() {
        let cu = Gate::minus_i_sigma_y().controlled();
        let idle = Ket::from_bits(&[0, 1]).apply(&cu, &[0, 1]).unwrap();
        assert_eq!(idle.amp(0b01), C_ONE);
        let active = Ket::from_bits(&[1, 0]).apply(&cu, &[0, 1]).unwrap();
        assert_eq!(active.amp(0b11), C_ONE);
    }
}
