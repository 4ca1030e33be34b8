//! Eavesdropping strategies and their detection statistics.
//!
//! Each strategy is a [`ChannelTap`] that manipulates slots in flight. The
//! attacker only ever forwards qubits she physically holds; there is no way
//! to copy amplitudes, so "resending" always means measuring and preparing a
//! fresh state, or substituting qubits of her own.
//!
//! The `oracle` submodule computes the exact check-pass probabilities for
//! every strategy by direct Born-rule enumeration, independently of the
//! sampled engine, so Monte Carlo rates have something rigorous to match.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::logical::{
    self, discriminate, encode, Discrimination, Encoding, LogicalFamily, LogicalState,
};
use crate::protocol::{
    run_dialogue, share_key, ChannelTap, MessagePair, ProtocolConfig, Slot, SlotKind,
};
use crate::protocol::transcript::{AbortCause, AbortInfo, Stage};
use crate::statevec::{Gate, Ket, MeasureBasis, StateError};

/// What the attacker substitutes for captured key-share qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionPolicy {
    /// Send a freshly encoded logical state drawn uniformly.
    RandomLogical,
    /// Send both halves of the attacker's own |phi+> pair.
    BellSubstitute,
    /// Swallow the transmission entirely.
    Block,
}

/// Which slots an entangling probe touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Probe every traveling pair (the attacker cannot tell slots apart).
    AllTraveling,
    /// Probe only message slots, granting the attacker perfect knowledge of
    /// the decoy positions. Used to show the ciphertext stays opaque even
    /// against this overpowered variant.
    MessageOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Measure each traveling pair in a guessed logical family, resend the
    /// inferred state.
    InterceptResendLogical,
    /// Measure each traveling qubit separately in Z, resend the outcome.
    InterceptResendPhysical,
    /// Capture the key-share halves and substitute per policy.
    CaptureSc { policy: SubstitutionPolicy },
    /// Entangle a fresh ancilla with the first traveling qubit.
    EntangleAncilla { target: TargetPolicy },
}

/// Everything the attacker has written down.
#[derive(Clone, Debug, Default)]
pub struct EveRecord {
    /// Z readouts of captured key-share pairs, one entry per kept slot.
    pub captured_bits: Vec<(u8, u8)>,
    /// (family guessed, verdict) per intercepted traveling pair.
    pub intercept_verdicts: Vec<(LogicalFamily, Discrimination)>,
    /// Z pairs from single-qubit interception.
    pub physical_bits: Vec<(u8, u8)>,
    /// (message index, ancilla bit) from entangling probes.
    pub message_ancilla: Vec<(usize, u8)>,
    /// Ancilla bits harvested from non-message slots.
    pub other_ancilla: Vec<u8>,
    /// Everything said on the public channel.
    pub announcements: Vec<(usize, u8)>,
}

/// A live attack: strategy plus accumulated records.
pub struct Attack {
    pub kind: AttackKind,
    encoding: Encoding,
    pub record: EveRecord,
}

impl Attack {
    pub fn new(kind: AttackKind, encoding: Encoding) -> Attack {
        Attack { kind, encoding, record: EveRecord::default() }
    }

    /// Measures out and removes every attacker-owned ancilla, returning the
    /// bits in ascending original-index order.
    fn harvest_ancillas(slot: &mut Slot, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut idxs = std::mem::take(&mut slot.eve);
        idxs.sort_unstable();
        let z = MeasureBasis::z();
        let mut bits = Vec::with_capacity(idxs.len());
        for &q in &idxs {
            let (b, post) = slot.state.measure(q, &z, rng).expect("ancilla readout");
            bits.push(b);
            slot.state = post;
        }
        for &q in idxs.iter().rev() {
            slot.drop_qubit(q).expect("ancilla drop");
        }
        bits
    }

    /// Swaps the (measured, now definite) traveling pair for a fresh one.
    fn replace_traveling(slot: &mut Slot, fresh: Ket) {
        let (t1, t2) = slot.traveling;
        if slot.state.n_qubits() == 2 {
            slot.state = fresh;
            slot.traveling = (0, 1);
        } else {
            slot.drop_qubit(t1.max(t2)).expect("drop traveling");
            slot.drop_qubit(t1.min(t2)).expect("drop traveling");
            let n = slot.state.n_qubits();
            slot.state = slot.state.tensor(&fresh);
            slot.traveling = (n, n + 1);
        }
    }
}

impl ChannelTap for Attack {
    fn tap(
        &mut self,
        stage: Stage,
        slot: &mut Slot,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), StateError> {
        match (self.kind, stage) {
            (AttackKind::CaptureSc { policy }, Stage::KeyShare) => {
                let substitute = match policy {
                    SubstitutionPolicy::RandomLogical => {
                        encode(self.encoding, LogicalState::ALL[rng.random_range(0..4)])
                    }
                    SubstitutionPolicy::BellSubstitute => logical::phi_plus(),
                    SubstitutionPolicy::Block => unreachable!("blocked stage is never tapped"),
                };
                let (t1, t2) = slot.traveling;
                slot.eve.push(t1);
                slot.eve.push(t2);
                let n = slot.state.n_qubits();
                slot.state = slot.state.tensor(&substitute);
                slot.traveling = (n, n + 1);
            }
            (AttackKind::InterceptResendLogical, Stage::Forward) => {
                let family = if rng.random_bool(0.5) {
                    LogicalFamily::Computational
                } else {
                    LogicalFamily::Superposition
                };
                let (t1, t2) = slot.traveling;
                let out = discriminate(self.encoding, family, &slot.state, t1, t2, rng)?;
                slot.state = out.state;
                self.record.intercept_verdicts.push((family, out.verdict));
                if let Discrimination::Logical(s) = out.verdict {
                    Self::replace_traveling(slot, encode(self.encoding, s));
                }
                // on a tamper verdict she forwards the measured wreckage
            }
            (AttackKind::InterceptResendPhysical, Stage::Forward) => {
                let z = MeasureBasis::z();
                let (t1, t2) = slot.traveling;
                let (b1, post) = slot.state.measure(t1, &z, rng)?;
                let (b2, post) = post.measure(t2, &z, rng)?;
                slot.state = post;
                self.record.physical_bits.push((b1, b2));
                // post-measurement qubits are already the resent |b1 b2>
            }
            (AttackKind::EntangleAncilla { target }, Stage::Forward) => {
                if target == TargetPolicy::MessageOnly
                    && !matches!(slot.kind, SlotKind::Message { .. })
                {
                    return Ok(());
                }
                let anc = slot.append_eve_ancilla();
                let control = slot.traveling.0;
                slot.state = slot.state.apply(&Gate::cnot(), &[control, anc])?;
            }
            _ => {}
        }
        Ok(())
    }

    fn finalize(
        &mut self,
        _stage: Stage,
        slot: &mut Slot,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), StateError> {
        if slot.eve.is_empty() {
            return Ok(());
        }
        let bits = Self::harvest_ancillas(slot, rng);
        match (self.kind, slot.kind) {
            (AttackKind::CaptureSc { .. }, _) => {
                assert_eq!(bits.len(), 2);
                self.record.captured_bits.push((bits[0], bits[1]));
            }
            (AttackKind::EntangleAncilla { .. }, SlotKind::Message { index }) => {
                for b in bits {
                    self.record.message_ancilla.push((index, b));
                }
            }
            _ => self.record.other_ancilla.extend(bits),
        }
        Ok(())
    }

    fn blocks(&self, stage: Stage) -> bool {
        stage == Stage::KeyShare
            && self.kind == AttackKind::CaptureSc { policy: SubstitutionPolicy::Block }
    }

    fn hear_announcement(&mut self, index: usize, m_final: u8) {
        self.record.announcements.push((index, m_final));
    }
}

/// Outcome of one attacked protocol run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AttackTrial {
    pub trial: u32,
    pub detected: bool,
    pub abort: Option<AbortInfo>,
}

/// Detection rate over many independent seeded trials.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DetectionStats {
    pub trials: u32,
    pub detected: u32,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

const Z_95: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
/// At 0 or n successes the score equation has an exact root at 0 or 1; pin
/// those bounds so float residue cannot push an exact rate outside the band.
pub fn wilson_interval(successes: u32, trials: u32, z: f64) -> (f64, f64) {
    assert!(trials > 0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

/// Runs key share plus one dialogue round under attack. A run counts as
/// detected when it aborts from a check the honest parties watch (sampling,
/// decoy, tamper, or a missing block); a distillation failure halts the run
/// but is not credited as detection.
pub fn run_attack_trial(cfg: &ProtocolConfig, kind: AttackKind, trial: u32) -> AttackTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64 + 1);
    let mut attack = Attack::new(kind, cfg.encoding);
    let mut next_block = 0;
    let (key, _) = share_key(cfg, &mut attack, &mut next_block, &mut rng);
    let abort = match key {
        Err(a) => Some(a),
        Ok(key) => {
            let msgs = MessagePair::random(cfg.n, &mut rng);
            let out = run_dialogue(cfg, &msgs, key, &mut attack, &mut next_block, &mut rng);
            out.result.aborted
        }
    };
    let detected = abort.is_some_and(|a| a.cause != AbortCause::DistillFailure);
    AttackTrial { trial, detected, abort }
}

/// Monte Carlo detection estimate; trial i always uses RNG stream i+1 of the
/// configured seed, so results are identical regardless of thread count.
pub fn estimate_detection(cfg: &ProtocolConfig, kind: AttackKind, trials: u32) -> DetectionStats {
    assert!(trials > 0);
    let detected = (0..trials)
        .into_par_iter()
        .map(|t| run_attack_trial(cfg, kind, t).detected as u32)
        .sum::<u32>();
    let rate = detected as f64 / trials as f64;
    let (wilson_low, wilson_high) = wilson_interval(detected, trials, Z_95);
    DetectionStats { trials, detected, rate, wilson_low, wilson_high }
}

/// Result of letting a clairvoyant entangling probe watch a long exchange.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OpacityReport {
    pub qubits: u32,
    pub correct_pair_guesses: u32,
    pub accuracy: f64,
    /// Exact accuracy of the probe's best guess rule, from enumeration.
    pub expected_accuracy: f64,
    /// Exact Holevo information of the probe's quantum record about the
    /// secret bit pair, in bits.
    pub holevo_bits: f64,
}

/// Runs dialogue rounds under a message-only entangling probe until at least
/// `min_qubits` message qubits have crossed, then scores the attacker's best
/// guess of each secret pair (j, k): she reads her ancilla as the traveling
/// bit, flips a fair coin for j, and solves the announcement for k.
pub fn ciphertext_opacity_experiment(cfg: &ProtocolConfig, min_qubits: u32) -> OpacityReport {
    let mut cfg = cfg.clone();
    cfg.decoy_count = 0;
    cfg.introspect = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut attack = Attack::new(
        AttackKind::EntangleAncilla { target: TargetPolicy::MessageOnly },
        cfg.encoding,
    );
    let mut next_block = 0;
    let (key, _) = share_key(&cfg, &mut attack, &mut next_block, &mut rng);
    let mut key = key.expect("probe is silent during key share");

    let mut qubits = 0u32;
    let mut correct = 0u32;
    while qubits < min_qubits {
        let msgs = MessagePair::random(cfg.n, &mut rng);
        let out = run_dialogue(&cfg, &msgs, key, &mut attack, &mut next_block, &mut rng);
        assert!(out.result.aborted.is_none(), "probe run cannot abort without decoys");
        key = out.key.expect("key returns home");

        let mut eve_bit = vec![0u8; cfg.n];
        for (i, e) in attack.record.message_ancilla.drain(..) {
            eve_bit[i] = e;
        }
        let mut heard = vec![0u8; cfg.n];
        for (i, a) in attack.record.announcements.drain(..) {
            heard[i] = a;
        }
        for i in 0..cfg.n {
            let m_guess = eve_bit[i];
            let j_guess: u8 = rng.random_range(0..2);
            let k_guess = heard[i] ^ m_guess ^ j_guess;
            if j_guess == msgs.alice_bits[i] && k_guess == msgs.bob_bits[i] {
                correct += 1;
            }
            qubits += 1;
        }
    }
    OpacityReport {
        qubits,
        correct_pair_guesses: correct,
        accuracy: correct as f64 / qubits as f64,
        expected_accuracy: oracle::pair_guess_accuracy(cfg.encoding),
        holevo_bits: oracle::eavesdropper_ciphertext_mutual_information(cfg.encoding),
    }
}

/// Exact probabilities by direct Born-rule enumeration. Nothing here shares
/// code with the sampled engine paths: readout tables are restated and every
/// probability comes from projector sums on explicit states.
pub mod oracle {
    use super::*;
    use crate::logical::{controlled_logical_gate, prepare_resource};
    use crate::protocol::sampling_check_ok;
    use crate::protocol::transcript::CheckBasis;
    use crate::statevec::DensityOp;

    /// Joint distribution of a family readout on qubits (q1, q2) of `state`,
    /// with any other qubits traced out by the Born rule.
    pub fn discrimination_distribution(
        enc: Encoding,
        family: LogicalFamily,
        state: &Ket,
        q1: usize,
        q2: usize,
    ) -> Vec<(Discrimination, f64)> {
        let mut rotated = state.clone();
        let h = Gate::hadamard();
        match (enc, family) {
            (Encoding::Dp, LogicalFamily::Superposition) => {
                rotated = rotated.apply(&h, &[q1]).unwrap().apply(&h, &[q2]).unwrap();
            }
            (Encoding::R, LogicalFamily::Superposition) => {
                rotated = rotated.apply(&h, &[q2]).unwrap();
            }
            _ => {}
        }
        let z = MeasureBasis::z();
        let mut dist: Vec<(Discrimination, f64)> = Vec::new();
        for b1 in 0..2u8 {
            let p1 = rotated.branch_probability(q1, &z, b1).unwrap();
            if p1 <= 0.0 {
                continue;
            }
            let (_, after1) = rotated.project(q1, &z, b1).unwrap();
            for b2 in 0..2u8 {
                let p2 = after1.branch_probability(q2, &z, b2).unwrap();
                let p = p1 * p2;
                if p <= 0.0 {
                    continue;
                }
                let verdict = readout_verdict(enc, family, b1, b2);
                match dist.iter_mut().find(|(v, _)| *v == verdict) {
                    Some((_, acc)) => *acc += p,
                    None => dist.push((verdict, p)),
                }
            }
        }
        dist
    }

    fn readout_verdict(enc: Encoding, family: LogicalFamily, b1: u8, b2: u8) -> Discrimination {
        use Discrimination::*;
        use LogicalState::*;
        let even = b1 == b2;
        match (enc, family) {
            (Encoding::Dp, LogicalFamily::Computational) => match (b1, b2) {
                (0, 1) => Logical(L0),
                (1, 0) => Logical(L1),
                _ => Tamper,
            },
            (Encoding::Dp, LogicalFamily::Superposition) => {
                Logical(if even { Lplus } else { Lminus })
            }
            (Encoding::R, LogicalFamily::Computational) => Logical(if even { L0 } else { L1 }),
            (Encoding::R, LogicalFamily::Superposition) => {
                Logical(if even { Lplus } else { Lminus })
            }
        }
    }

    /// Probability that the receiver's readout of `state` in the prepared
    /// state's family reproduces the prepared state.
    fn check_pass_probability(enc: Encoding, prepared: LogicalState, state: &Ket) -> f64 {
        discrimination_distribution(enc, prepared.family(), state, 0, 1)
            .into_iter()
            .filter(|(v, _)| *v == Discrimination::Logical(prepared))
            .map(|(_, p)| p)
            .sum()
    }

    /// Exact probability that one decoy check passes under the given attack.
    pub fn decoy_pass_probability(kind: AttackKind, enc: Encoding) -> f64 {
        let quarter = 0.25;
        match kind {
            AttackKind::InterceptResendLogical => LogicalState::ALL
                .iter()
                .map(|&prepared| {
                    let sent = encode(enc, prepared);
                    [LogicalFamily::Computational, LogicalFamily::Superposition]
                        .iter()
                        .map(|&guess| {
                            discrimination_distribution(enc, guess, &sent, 0, 1)
                                .into_iter()
                                .map(|(verdict, p)| match verdict {
                                    Discrimination::Logical(s) => {
                                        p * check_pass_probability(enc, prepared, &encode(enc, s))
                                    }
                                    // wreckage never matches a prepared state
                                    Discrimination::Tamper => 0.0,
                                })
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                        * 0.5
                })
                .sum::<f64>()
                * quarter,
            AttackKind::InterceptResendPhysical => LogicalState::ALL
                .iter()
                .map(|&prepared| {
                    let sent = encode(enc, prepared);
                    let z = MeasureBasis::z();
                    let mut total = 0.0;
                    for b1 in 0..2u8 {
                        let p1 = sent.branch_probability(0, &z, b1).unwrap();
                        if p1 <= 0.0 {
                            continue;
                        }
                        let (_, after) = sent.project(0, &z, b1).unwrap();
                        for b2 in 0..2u8 {
                            let p = p1 * after.branch_probability(1, &z, b2).unwrap();
                            if p <= 0.0 {
                                continue;
                            }
                            let resent = Ket::from_bits(&[b1, b2]);
                            total += p * check_pass_probability(enc, prepared, &resent);
                        }
                    }
                    total
                })
                .sum::<f64>()
                * quarter,
            AttackKind::EntangleAncilla { target: TargetPolicy::MessageOnly } => 1.0,
            AttackKind::EntangleAncilla { target: TargetPolicy::AllTraveling } => {
                LogicalState::ALL
                    .iter()
                    .map(|&prepared| {
                        let probed = encode(enc, prepared)
                            .tensor(&Ket::from_bits(&[0]))
                            .apply(&Gate::cnot(), &[0, 2])
                            .unwrap();
                        discrimination_distribution(enc, prepared.family(), &probed, 0, 1)
                            .into_iter()
                            .filter(|(v, _)| *v == Discrimination::Logical(prepared))
                            .map(|(_, p)| p)
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    * quarter
            }
            // key-share attacks never touch dialogue decoys
            AttackKind::CaptureSc { .. } => 1.0,
        }
    }

    /// Exact probability that one key-share sampling check passes after the
    /// traveling halves were captured and substituted.
    pub fn sample_pass_probability(policy: SubstitutionPolicy, enc: Encoding) -> f64 {
        let substitutes: Vec<(f64, Ket)> = match policy {
            SubstitutionPolicy::RandomLogical => {
                LogicalState::ALL.iter().map(|&s| (0.25, encode(enc, s))).collect()
            }
            SubstitutionPolicy::BellSubstitute => vec![(1.0, logical::phi_plus())],
            SubstitutionPolicy::Block => return 0.0,
        };
        let bases: [(CheckBasis, MeasureBasis); 2] = match enc {
            Encoding::Dp => [(CheckBasis::Z, MeasureBasis::z()), (CheckBasis::X, MeasureBasis::x())],
            Encoding::R => {
                [(CheckBasis::Z, MeasureBasis::z()), (CheckBasis::Ycirc, MeasureBasis::ycirc())]
            }
        };
        let resource = prepare_resource(enc);
        substitutes
            .into_iter()
            .map(|(w, sub)| {
                // qubits: A=0, captured halves 1 and 2, substitutes 3 and 4
                let full = resource.tensor(&sub);
                let per_basis: f64 = bases
                    .iter()
                    .map(|(label, basis)| {
                        let mut pass = 0.0;
                        for c1 in 0..2u8 {
                            let p1 = full.branch_probability(3, basis, c1).unwrap();
                            if p1 <= 0.0 {
                                continue;
                            }
                            let (_, s1) = full.project(3, basis, c1).unwrap();
                            for c2 in 0..2u8 {
                                let p2 = s1.branch_probability(4, basis, c2).unwrap();
                                if p2 <= 0.0 {
                                    continue;
                                }
                                let (_, s2) = s1.project(4, basis, c2).unwrap();
                                for a in 0..2u8 {
                                    let pa = s2.branch_probability(0, basis, a).unwrap();
                                    if pa <= 0.0 {
                                        continue;
                                    }
                                    if sampling_check_ok(enc, *label, a, (c1, c2)) {
                                        pass += p1 * p2 * pa;
                                    }
                                }
                            }
                        }
                        pass
                    })
                    .sum();
                w * per_basis / bases.len() as f64
            })
            .sum()
    }

    /// Probability that at least one of `checks` independent checks fails.
    /// Clamped: enumeration can land at 1 + O(eps) pass probability, which
    /// must not turn into a negative detection rate.
    pub fn detection_probability(pass_per_check: f64, checks: u32) -> f64 {
        (1.0 - pass_per_check.powi(checks as i32)).clamp(0.0, 1.0)
    }

    /// Probability that a Z probe bit copied from one half of a |phi+> pair
    /// still matches that half's Z value after both halves rotate by theta.
    pub fn ancilla_key_correlation(theta: f64) -> f64 {
        let r = logical::rotation_gate(theta);
        let probed = logical::phi_plus()
            .tensor(&Ket::from_bits(&[0]))
            .apply(&Gate::cnot(), &[0, 2])
            .unwrap()
            .apply(&r, &[0])
            .unwrap()
            .apply(&r, &[1])
            .unwrap();
        let z = MeasureBasis::z();
        let mut agree = 0.0;
        for a in 0..2u8 {
            let pa = probed.branch_probability(0, &z, a).unwrap();
            if pa <= 0.0 {
                continue;
            }
            let (_, s) = probed.project(0, &z, a).unwrap();
            agree += pa * s.branch_probability(2, &z, a).unwrap();
        }
        agree
    }

    /// Builds the five-qubit state (A, B, T1, T2, E) of one encrypted
    /// traveling qubit carrying bit `m`, probed by a CNOT onto E.
    fn probed_ciphertext(enc: Encoding, m: u8) -> Ket {
        logical::phi_plus()
            .tensor(&encode(enc, LogicalState::computational_from_bit(m)))
            .apply(&controlled_logical_gate(enc), &[0, 2, 3])
            .unwrap()
            .tensor(&Ket::from_bits(&[0]))
            .apply(&Gate::cnot(), &[2, 4])
            .unwrap()
    }

    /// Exact accuracy of the probe's pair-guess rule: read the ancilla as
    /// the traveling bit, coin-flip j, solve the announcement for k.
    pub fn pair_guess_accuracy(enc: Encoding) -> f64 {
        // the pair guess is right iff the j coin hits (1/2) and the ancilla
        // equals the true traveling bit
        let z = MeasureBasis::z();
        let p_match: f64 = (0..2u8)
            .map(|m| 0.5 * probed_ciphertext(enc, m).branch_probability(4, &z, m).unwrap())
            .sum();
        0.5 * p_match
    }

    /// Holevo information, in bits, of the probe's record (ancilla plus
    /// overheard announcement) about the secret pair (j, k).
    pub fn eavesdropper_ciphertext_mutual_information(enc: Encoding) -> f64 {
        // attach the announcement m ^ j ^ k as a sixth, classical qubit
        let states: Vec<Vec<Ket>> = (0..4u8)
            .map(|jk| {
                let (j, k) = (jk >> 1, jk & 1);
                (0..2u8)
                    .map(|m| probed_ciphertext(enc, m).tensor(&Ket::from_bits(&[m ^ j ^ k])))
                    .collect()
            })
            .collect();
        let eve_state = |kets: &[(f64, Ket)]| -> DensityOp {
            let refs: Vec<(f64, &Ket)> = kets.iter().map(|(w, k)| (*w, k)).collect();
            DensityOp::from_mixture(&refs).unwrap().partial_trace(&[4, 5]).unwrap()
        };
        let conditionals: Vec<DensityOp> = states
            .iter()
            .map(|per_m| eve_state(&[(0.5, per_m[0].clone()), (0.5, per_m[1].clone())]))
            .collect();
        let all: Vec<(f64, Ket)> =
            states.iter().flatten().map(|ket| (0.125, ket.clone())).collect();
        let average = eve_state(&all);
        average.von_neumann_entropy_bits()
            - conditionals.iter().map(|c| c.von_neumann_entropy_bits()).sum::<f64>() / 4.0
    }

    /// Per-run detection probability the Monte Carlo should reproduce.
    pub fn run_detection_probability(cfg: &ProtocolConfig, kind: AttackKind) -> f64 {
        match kind {
            AttackKind::CaptureSc { policy: SubstitutionPolicy::Block } => 1.0,
            AttackKind::CaptureSc { policy } => detection_probability(
                sample_pass_probability(policy, cfg.encoding),
                cfg.delta1 as u32,
            ),
            kind => detection_probability(
                decoy_pass_probability(kind, cfg.encoding),
                cfg.decoy_count as u32,
            ),
        }
    }
}
