//! Two-photon logical qubits that ride out collective channel noise.
//!
//! Two codes are provided. The `Dp` code lives in span{|01>, |10>} and is
//! immune to collective dephasing; the `R` code lives in span{|phi+>, |psi->}
//! and is immune to collective rotation. Both carry one logical bit per two
//! photons and admit the same two logical unitaries U0 (identity) and U1
//! (logical bit flip with a sign twist), which is what the encryption layer
//! builds on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::statevec::{Gate, Ket, StateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Dp,
    R,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalState {
    L0,
    L1,
    Lplus,
    Lminus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalFamily {
    Computational,
    Superposition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalOp {
    U0,
    U1,
}

impl LogicalState {
    pub const ALL: [LogicalState; 4] =
        [LogicalState::L0, LogicalState::L1, LogicalState::Lplus, LogicalState::Lminus];

    pub fn family(self) -> LogicalFamily {
        match self {
            LogicalState::L0 | LogicalState::L1 => LogicalFamily::Computational,
            LogicalState::Lplus | LogicalState::Lminus => LogicalFamily::Superposition,
        }
    }

    /// 0 for L0/Lplus, 1 for L1/Lminus.
    pub fn bit(self) -> u8 {
        match self {
            LogicalState::L0 | LogicalState::Lplus => 0,
            LogicalState::L1 | LogicalState::Lminus => 1,
        }
    }

    pub fn from_family_bit(family: LogicalFamily, bit: u8) -> LogicalState {
        match (family, bit & 1) {
            (LogicalFamily::Computational, 0) => LogicalState::L0,
            (LogicalFamily::Computational, _) => LogicalState::L1,
            (LogicalFamily::Superposition, 0) => LogicalState::Lplus,
            (LogicalFamily::Superposition, _) => LogicalState::Lminus,
        }
    }

    pub fn computational_from_bit(bit: u8) -> LogicalState {
        LogicalState::from_family_bit(LogicalFamily::Computational, bit)
    }
}

impl LogicalOp {
    pub fn from_bit(bit: u8) -> LogicalOp {
        if bit & 1 == 0 { LogicalOp::U0 } else { LogicalOp::U1 }
    }
}

pub fn phi_plus() -> Ket {
    bell(1.0, 0)
}

pub fn phi_minus() -> Ket {
    bell(-1.0, 0)
}

pub fn psi_plus() -> Ket {
    bell(1.0, 1)
}

pub fn psi_minus() -> Ket {
    bell(-1.0, 1)
}

fn bell(sign: f64, flip: usize) -> Ket {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = vec![num_complex::Complex64::ZERO; 4];
    amps[flip] = h.into();
    amps[3 - flip] = (sign * h).into();
    Ket::from_amps(amps).unwrap()
}

/// The two-qubit code ket for a logical state.
pub fn encode(enc: Encoding, s: LogicalState) -> Ket {
    match enc {
        Encoding::Dp => match s {
            LogicalState::L0 => Ket::from_bits(&[0, 1]),
            LogicalState::L1 => Ket::from_bits(&[1, 0]),
            LogicalState::Lplus => psi_plus(),
            LogicalState::Lminus => psi_minus(),
        },
        Encoding::R => match s {
            LogicalState::L0 => phi_plus(),
            LogicalState::L1 => psi_minus(),
            LogicalState::Lplus => superpose(&phi_plus(), &psi_minus(), 1.0),
            LogicalState::Lminus => superpose(&phi_plus(), &psi_minus(), -1.0),
        },
    }
}

fn superpose(a: &Ket, b: &Ket, sign: f64) -> Ket {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ket::from_amps((0..a.dim()).map(|i| (a.amp(i) + sign * b.amp(i)) * h).collect()).unwrap()
}

/// The 4x4 physical realization of a logical unitary.
///
/// U1 acts as L0 -> L1, L1 -> -L0, Lplus -> -Lminus, Lminus -> Lplus for
/// both encodings; squared it is -I on the whole two-qubit space.
pub fn logical_gate(enc: Encoding, op: LogicalOp) -> Gate {
    match op {
        LogicalOp::U0 => Gate::identity(2),
        LogicalOp::U1 => match enc {
            Encoding::Dp => Gate::minus_i_sigma_y().kron(&Gate::sigma_x()),
            Encoding::R => Gate::identity(1).kron(&Gate::minus_i_sigma_y()),
        },
    }
}

/// 8x8 controlled-U1: control qubit is the most significant gate input,
/// |0> leaves the code pair alone, |1> applies U1.
pub fn controlled_logical_gate(enc: Encoding) -> Gate {
    logical_gate(enc, LogicalOp::U1).controlled()
}

/// Key-rotation matrix [[cos t, sin t], [-sin t, cos t]].
pub fn rotation_gate(theta: f64) -> Gate {
    Gate::rotation(theta)
}

/// Three-photon resource (A, C1, C2): the code-basis copy of |phi+> with A
/// as the bare half and (C1, C2) as the encoded half.
pub fn prepare_resource(enc: Encoding) -> Ket {
    let a0 = Ket::from_bits(&[0]).tensor(&encode(enc, LogicalState::L0));
    let a1 = Ket::from_bits(&[1]).tensor(&encode(enc, LogicalState::L1));
    superpose(&a0, &a1, 1.0)
}

/// Unitary stage of key distillation, applied at the given qubit indices of
/// a possibly larger register. The r code first maps onto the dp-style form
/// via S on all three qubits then H on all three; both codes finish with
/// CNOT(c1 -> c2), after which C2 is |1> and (A, C1) hold |phi+>.
pub fn distill_transform(
    enc: Encoding,
    state: &Ket,
    a: usize,
    c1: usize,
    c2: usize,
) -> Result<Ket, StateError> {
    let mut s = state.clone();
    if enc == Encoding::R {
        for gate in [Gate::phase_s(), Gate::hadamard()] {
            for q in [a, c1, c2] {
                s = s.apply(&gate, &[q])?;
            }
        }
    }
    s.apply(&Gate::cnot(), &[c1, c2])
}

/// Full distillation on a standalone 3-qubit resource: returns the 3-qubit
/// post state (C2 not yet measured).
pub fn distill_key_dp(state: &Ket) -> Result<Ket, StateError> {
    distill_transform(Encoding::Dp, state, 0, 1, 2)
}

pub fn distill_key_r(state: &Ket) -> Result<Ket, StateError> {
    distill_transform(Encoding::R, state, 0, 1, 2)
}

/// Result of measuring one logical qubit in a declared family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discrimination {
    Logical(LogicalState),
    /// Outcome outside the family's honest support (dp computational 00/11).
    Tamper,
}

#[derive(Clone, Debug)]
pub struct Discriminated {
    pub verdict: Discrimination,
    /// Raw single-photon outcome bits (after any basis-change Hadamards).
    pub bits: (u8, u8),
    /// Post-measurement register; both measured qubits are left Z-definite.
    pub state: Ket,
}

/// Reads out one logical qubit using only single-photon Z measurements,
/// preceded by the code's basis-change Hadamards where needed:
///
/// - dp computational: Z, Z; 01 -> L0, 10 -> L1, else Tamper.
/// - dp superposition: H on both qubits, then Z, Z; even parity -> Lplus.
/// - r computational: Z, Z; even parity -> L0, odd -> L1.
/// - r superposition: H on the second qubit, then Z, Z; even -> Lplus.
pub fn discriminate(
    enc: Encoding,
    family: LogicalFamily,
    state: &Ket,
    q1: usize,
    q2: usize,
    rng: &mut impl Rng,
) -> Result<Discriminated, StateError> {
    let mut s = state.clone();
    match (enc, family) {
        (Encoding::Dp, LogicalFamily::Computational) | (Encoding::R, LogicalFamily::Computational) => {}
        (Encoding::Dp, LogicalFamily::Superposition) => {
            s = s.apply(&Gate::hadamard(), &[q1])?;
            s = s.apply(&Gate::hadamard(), &[q2])?;
        }
        (Encoding::R, LogicalFamily::Superposition) => {
            s = s.apply(&Gate::hadamard(), &[q2])?;
        }
    }
    let z = crate::statevec::MeasureBasis::z();
    let (b1, s) = s.measure(q1, &z, rng)?;
    let (b2, s) = s.measure(q2, &z, rng)?;
    let parity_even = b1 == b2;
    let verdict = match (enc, family) {
        (Encoding::Dp, LogicalFamily::Computational) => match (b1, b2) {
            (0, 1) => Discrimination::Logical(LogicalState::L0),
            (1, 0) => Discrimination::Logical(LogicalState::L1),
            _ => Discrimination::Tamper,
        },
        (Encoding::Dp, LogicalFamily::Superposition)
        | (Encoding::R, LogicalFamily::Superposition) => Discrimination::Logical(
            LogicalState::from_family_bit(LogicalFamily::Superposition, u8::from(!parity_even)),
        ),
        (Encoding::R, LogicalFamily::Computational) => Discrimination::Logical(
            LogicalState::from_family_bit(LogicalFamily::Computational, u8::from(!parity_even)),
        ),
    };
    Ok(Discriminated { verdict, bits: (b1, b2), state: s })
}

/// Weight of a two-qubit ket outside the encoding's code space.
pub fn code_leakage(enc: Encoding, state: &Ket) -> f64 {
    let l0 = encode(enc, LogicalState::L0);
    let l1 = encode(enc, LogicalState::L1);
    let inside = l0.inner(state).norm_sqr() + l1.inner(state).norm_sqr();
    (1.0 - inside).max(0.0)
}

/// The maximally mixed state on the code space (not on the full two-qubit
/// space): (|L0><L0| + |L1><L1|)/2.
pub fn code_mixed(enc: Encoding) -> crate::statevec::DensityOp {
    let l0 = encode(enc, LogicalState::L0);
    let l1 = encode(enc, LogicalState::L1);
    crate::statevec::DensityOp::from_mixture(&[(0.5, &l0), (0.5, &l1)]).unwrap()
}
