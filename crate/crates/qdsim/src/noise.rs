//! Collective channel noise.
//!
//! A transmission block is the set of qubits that cross the channel
//! together; the channel draws one parameter per block and applies the same
//! single-qubit unitary to every traveling qubit. Forward and return
//! transmissions are separate blocks and draw independently.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::statevec::{Gate, Ket, StateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Dephasing,
    Rotation,
    Ideal,
}

/// How the per-block channel parameter is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLaw {
    /// Independent uniform draw from [0, 2*pi) per block.
    Uniform,
    /// Same fixed angle for every block.
    Fixed(f64),
    /// Deterministic cycle indexed by block id.
    Cycle(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub law: ParamLaw,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        NoiseModel { kind: NoiseKind::Ideal, law: ParamLaw::Fixed(0.0) }
    }

    pub fn dephasing(law: ParamLaw) -> Self {
        NoiseModel { kind: NoiseKind::Dephasing, law }
    }

    pub fn rotation(law: ParamLaw) -> Self {
        NoiseModel { kind: NoiseKind::Rotation, law }
    }

    /// Draws the single channel parameter for one transmission block.
    pub fn draw(&self, block_id: u64, rng: &mut impl Rng) -> NoiseDraw {
        let angle = if self.kind == NoiseKind::Ideal {
            0.0
        } else {
            match &self.law {
                ParamLaw::Uniform => rng.random::<f64>() * std::f64::consts::TAU,
                ParamLaw::Fixed(angle) => *angle,
                ParamLaw::Cycle(angles) => {
                    assert!(!angles.is_empty(), "cycle law needs at least one angle");
                    angles[(block_id % angles.len() as u64) as usize]
                }
            }
        };
        NoiseDraw { block_id, angle }
    }

    /// Applies an already-drawn block parameter to the listed qubits.
    pub fn apply_draw(
        &self,
        state: &Ket,
        traveling: &[usize],
        draw: &NoiseDraw,
    ) -> Result<Ket, StateError> {
        match self.kind {
            NoiseKind::Ideal => Ok(state.clone()),
            NoiseKind::Dephasing => apply_dephasing(state, traveling, draw.angle),
            NoiseKind::Rotation => apply_rotation(state, traveling, draw.angle),
        }
    }
}

/// Record of one channel crossing: which block and which angle acted on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub block_id: u64,
    pub angle: f64,
}

/// diag(1, e^{i phi}) on each listed qubit.
pub fn apply_dephasing(state: &Ket, qubits: &[usize], phi: f64) -> Result<Ket, StateError> {
    apply_each(state, qubits, &Gate::phase(phi))
}

/// Real rotation sending |0> to cos(t)|0> + sin(t)|1> on each listed qubit.
pub fn apply_rotation(state: &Ket, qubits: &[usize], theta: f64) -> Result<Ket, StateError> {
    apply_each(state, qubits, &collective_rotation_gate(theta))
}

/// The rotation-channel unitary [[cos t, -sin t], [sin t, cos t]].
pub fn collective_rotation_gate(theta: f64) -> Gate {
    Gate::rotation(-theta)
}

fn apply_each(state: &Ket, qubits: &[usize], gate: &Gate) -> Result<Ket, StateError> {
    let mut out = state.clone();
    for &q in qubits {
        out = out.apply(gate, &[q])?;
    }
    Ok(out)
}

/// Sends one block through the channel: draws a single angle for the block
/// and hits every traveling qubit with it. Returns the noisy state and the
/// draw record. Ideal channels pass the state through and record angle 0.
pub fn transmit_block(
    state: &Ket,
    traveling: &[usize],
    model: &NoiseModel,
    block_id: u64,
    rng: &mut impl Rng,
) -> Result<(Ket, NoiseDraw), StateError> {
    let draw = model.draw(block_id, rng);
    let out = model.apply_draw(state, traveling, &draw)?;
    Ok((out, draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::equal_up_to_phase;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bell(signs: [f64; 4]) -> Ket {
        Ket::from_amps(signs.iter().map(|&s| c(s * H, 0.0)).collect()).unwrap()
    }

    fn phi_plus() -> Ket {
        bell([1.0, 0.0, 0.0, 1.0])
    }

    fn phi_minus() -> Ket {
        bell([1.0, 0.0, 0.0, -1.0])
    }

    fn psi_plus() -> Ket {
        bell([0.0, 1.0, 1.0, 0.0])
    }

    fn psi_minus() -> Ket {
        bell([0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn dephasing_preserves_antiparallel_pairs_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            for state in [psi_plus(), psi_minus()] {
                let noisy = apply_dephasing(&state, &[0, 1], phi).unwrap();
                assert!(equal_up_to_phase(&noisy, &state, 1e-12));
            }
        }
    }

    #[test]
    fn dephasing_damages_phi_plus_at_quarter_period() {
        let noisy =
            apply_dephasing(&phi_plus(), &[0, 1], std::f64::consts::FRAC_PI_2).unwrap();
        let fid = noisy.fidelity(&phi_plus());
        assert!(fid < 1.0);
        // both qubits pick up e^{i phi}, so fidelity is cos(phi)^2 = 0 here
        assert!(fid < 1e-12, "fid = {fid}");
    }

    #[test]
    fn rotation_preserves_phi_plus_and_psi_minus_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            for state in [phi_plus(), psi_minus()] {
                let noisy = apply_rotation(&state, &[0, 1], theta).unwrap();
                assert!(equal_up_to_phase(&noisy, &state, 1e-12));
            }
        }
    }

    #[test]
    fn rotation_moves_phi_minus() {
        let noisy =
            apply_rotation(&phi_minus(), &[0, 1], std::f64::consts::FRAC_PI_4).unwrap();
        assert!(noisy.fidelity(&phi_minus()) < 1.0 - 1e-3);
    }

    #[test]
    fn rotation_gate_matches_column_convention() {
        // U_r |0> = cos t |0> + sin t |1>
        let t = 0.37f64;
        let out = Ket::from_bits(&[0]).apply(&collective_rotation_gate(t), &[0]).unwrap();
        assert!((out.amp(0).re - t.cos()).abs() < 1e-15);
        assert!((out.amp(1).re - t.sin()).abs() < 1e-15);
    }

    #[test]
    fn channel_is_linear_at_fixed_angle() {
        let a = Ket::from_bits(&[0, 1]);
        let b = Ket::from_bits(&[1, 1]);
        let alpha = c(0.6, 0.0);
        let beta = c(0.0, 0.8);
        let combo = Ket::from_amps(
            (0..4).map(|i| alpha * a.amp(i) + beta * b.amp(i)).collect(),
        )
        .unwrap();
        for apply in [apply_dephasing, apply_rotation] {
            let lhs = apply(&combo, &[0, 1], 0.91).unwrap();
            let na = apply(&a, &[0, 1], 0.91).unwrap();
            let nb = apply(&b, &[0, 1], 0.91).unwrap();
            for i in 0..4 {
                let rhs = alpha * na.amp(i) + beta * nb.amp(i);
                assert!((lhs.amp(i) - rhs).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn transmit_block_ideal_is_identity_with_zero_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let state = phi_plus();
        let (out, draw) =
            transmit_block(&state, &[0, 1], &NoiseModel::ideal(), 3, &mut rng).unwrap();
        assert_eq!(draw, NoiseDraw { block_id: 3, angle: 0.0 });
        for i in 0..4 {
            assert_eq!(out.amp(i), state.amp(i));
        }
    }

    #[test]
    fn transmit_block_honors_fixed_and_cycle_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = NoiseModel::rotation(ParamLaw::Fixed(0.25));
        let (_, draw) = transmit_block(&phi_plus(), &[0, 1], &model, 0, &mut rng).unwrap();
        assert_eq!(draw.angle, 0.25);

        let cyc = NoiseModel::dephasing(ParamLaw::Cycle(vec![0.1, 0.2, 0.3]));
        for (block, expect) in [(0u64, 0.1), (1, 0.2), (2, 0.3), (3, 0.1), (4, 0.2)] {
            let (_, d) = transmit_block(&phi_plus(), &[0, 1], &cyc, block, &mut rng).unwrap();
            assert_eq!(d.angle, expect);
        }
    }

    #[test]
    fn uniform_draws_are_independent_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let model = NoiseModel::dephasing(ParamLaw::Uniform);
        let mut angles = Vec::new();
        for block in 0..64 {
            let (_, d) = transmit_block(&phi_plus(), &[0, 1], &model, block, &mut rng).unwrap();
            assert!((0.0..std::f64::consts::TAU).contains(&d.angle));
            angles.push(d.angle);
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        assert_eq!(angles.len(), 64, "independent draws must not collide");
    }

    #[test]
    fn noise_applies_only_to_traveling_qubits() {
        // dephase qubit 1 of |+>|+>: qubit 0's reduced state is untouched
        let plus = Ket::from_amps(vec![c(H, 0.0), c(H, 0.0)]).unwrap();
        let both = plus.tensor(&plus);
        let out = apply_dephasing(&both, &[1], std::f64::consts::PI).unwrap();
        let rho0 = out.reduced_density(&[0]).unwrap();
        let expect = both.reduced_density(&[0]).unwrap();
        assert!(rho0.trace_distance(&expect).unwrap() < 1e-12);
        let rho1 = out.reduced_density(&[1]).unwrap();
        assert!(rho1.fidelity_with_ket(&plus).unwrap() < 1e-12);
    }
}
