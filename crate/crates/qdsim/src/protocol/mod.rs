//! Two-party dialogue engine.
//!
//! One round proceeds in five steps: share an EPR key over the noisy channel
//! (with sampling checks and distillation), encrypt traveling message qubits
//! with controlled logical gates keyed on the shared pairs, decrypt and
//! re-encode at the receiver, encode and announce at the sender, then rotate
//! the key for reuse. Both logical codes run through the same engine; the
//! encoding only changes the codec calls.
//!
//! States are processed one slot at a time (a slot is one logical qubit plus
//! whatever is entangled with it), which keeps registers small and exact. A
//! slot's qubit indices are bookkept explicitly so attack hooks can append
//! ancillas or swap traveling qubits without the engine caring.

pub mod transcript;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logical::{
    self, controlled_logical_gate, discriminate, encode, logical_gate, Discrimination, Encoding,
    LogicalFamily, LogicalOp, LogicalState,
};
use crate::noise::NoiseModel;
use crate::statevec::{Gate, Ket, MeasureBasis, StateError};
use transcript::{AbortCause, AbortInfo, CheckBasis, Event, Stage, Transcript};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("theta_key = {theta} rad is within 1e-9 of a forbidden angle (odd multiple of pi/4)")]
    ForbiddenTheta { theta: f64 },
    #[error("{field} must be at least {min} (got {got})")]
    TooSmall { field: &'static str, min: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigWarning {
    /// theta_key is a multiple of 2*pi: rotations do nothing.
    NullRotation,
}

/// Static parameters of one protocol deployment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub encoding: Encoding,
    /// Message length in bits (N).
    pub n: usize,
    /// Key-share sampling-check size.
    pub delta1: usize,
    /// Decoys inserted per transmission.
    pub decoy_count: usize,
    /// Key-rotation angle between rounds, radians.
    pub theta_key: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Disabled only for the mixedness control experiment.
    pub encryption_enabled: bool,
    /// Record in-flight reduced-state deviations during runs.
    pub introspect: bool,
}

impl ProtocolConfig {
    /// Defaults: delta1 = 16, decoy_count = 16, theta_key = pi/8, and the
    /// collective channel the encoding is built to survive.
    pub fn new(encoding: Encoding, n: usize) -> ProtocolConfig {
        let noise = match encoding {
            Encoding::Dp => NoiseModel::dephasing(crate::noise::ParamLaw::Uniform),
            Encoding::R => NoiseModel::rotation(crate::noise::ParamLaw::Uniform),
        };
        ProtocolConfig {
            encoding,
            n,
            delta1: 16,
            decoy_count: 16,
            theta_key: std::f64::consts::FRAC_PI_8,
            noise,
            seed: 0,
            encryption_enabled: true,
            introspect: false,
        }
    }

    /// Distance from theta to the nearest odd multiple of pi/4 (the angles
    /// at which rotated keys become vulnerable to ancilla correlation).
    pub fn theta_margin(theta: f64) -> f64 {
        let period = std::f64::consts::FRAC_PI_2;
        let m = (theta - std::f64::consts::FRAC_PI_4).rem_euclid(period);
        m.min(period - m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 1 {
            return Err(ConfigError::TooSmall { field: "n", min: 1, got: self.n });
        }
        if self.delta1 < 1 {
            return Err(ConfigError::TooSmall { field: "delta1", min: 1, got: self.delta1 });
        }
        if Self::theta_margin(self.theta_key) < 1e-9 {
            return Err(ConfigError::ForbiddenTheta { theta: self.theta_key });
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<ConfigWarning> {
        let tau = std::f64::consts::TAU;
        let m = self.theta_key.rem_euclid(tau);
        if m.min(tau - m) < 1e-12 {
            vec![ConfigWarning::NullRotation]
        } else {
            Vec::new()
        }
    }
}

/// What one slot is carrying.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    /// Key-share resource (A, C1, C2).
    Resource,
    /// Message qubit number `index`, possibly with its key pair attached.
    Message { index: usize },
    Decoy { prepared: LogicalState },
}

/// One logical qubit in flight together with everything entangled with it.
#[derive(Clone, Debug)]
pub struct Slot {
    pub state: Ket,
    pub kind: SlotKind,
    /// Indices of the two physical qubits currently crossing the channel.
    pub traveling: (usize, usize),
    /// Indices of the attached key pair (A_i, B_i), when riding along.
    pub key: Option<(usize, usize)>,
    /// Indices of attack-owned ancillas.
    pub eve: Vec<usize>,
}

impl Slot {
    /// Removes a Z-definite qubit and renumbers every stored index above it.
    pub fn drop_qubit(&mut self, q: usize) -> Result<(), StateError> {
        self.state = self.state.drop_qubit(q)?;
        let fix = |i: usize| if i > q { i - 1 } else { i };
        self.traveling = (fix(self.traveling.0), fix(self.traveling.1));
        self.key = self.key.map(|(a, b)| (fix(a), fix(b)));
        for e in &mut self.eve {
            *e = fix(*e);
        }
        Ok(())
    }

    /// Appends a fresh |0> ancilla owned by the attacker; returns its index.
    pub fn append_eve_ancilla(&mut self) -> usize {
        self.state = self.state.tensor(&Ket::from_bits(&[0]));
        let idx = self.state.n_qubits() - 1;
        self.eve.push(idx);
        idx
    }
}

/// Channel-access hook. The honest channel does nothing; attack strategies
/// implement this to touch slots in flight.
pub trait ChannelTap {
    /// Called once per slot right after channel noise is applied.
    fn tap(&mut self, stage: Stage, slot: &mut Slot, rng: &mut ChaCha8Rng)
        -> Result<(), StateError>;

    /// Called before the engine disassembles a slot; implementations must
    /// measure out and drop every index they left in `slot.eve`.
    fn finalize(
        &mut self,
        _stage: Stage,
        _slot: &mut Slot,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(), StateError> {
        Ok(())
    }

    /// True if the tap swallows the whole transmission (denial mode).
    fn blocks(&self, _stage: Stage) -> bool {
        false
    }

    /// Public announcements are audible to everyone, including attackers.
    fn hear_announcement(&mut self, _index: usize, _m_final: u8) {}
}

/// The empty tap: nothing is intercepted.
pub struct HonestChannel;

impl ChannelTap for HonestChannel {
    fn tap(
        &mut self,
        _stage: Stage,
        _slot: &mut Slot,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(), StateError> {
        Ok(())
    }
}

/// N shared EPR pairs; pair i is the 2-qubit ket (A_i, B_i).
#[derive(Clone, Debug)]
pub struct KeyRegister {
    pairs: Vec<Option<Ket>>,
    rotation_count: u32,
}

impl KeyRegister {
    fn from_pairs(pairs: Vec<Ket>) -> KeyRegister {
        KeyRegister { pairs: pairs.into_iter().map(Some).collect(), rotation_count: 0 }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn rotation_count(&self) -> u32 {
        self.rotation_count
    }

    pub fn pair(&self, i: usize) -> &Ket {
        self.pairs[i].as_ref().expect("key pair checked out")
    }

    fn take(&mut self, i: usize) -> Ket {
        self.pairs[i].take().expect("key pair already checked out")
    }

    fn put(&mut self, i: usize, pair: Ket) {
        assert_eq!(pair.n_qubits(), 2);
        assert!(self.pairs[i].is_none(), "slot {i} already occupied");
        self.pairs[i] = Some(pair);
    }

    /// Smallest fidelity between any pair and |phi+>.
    pub fn min_fidelity_phi_plus(&self) -> f64 {
        let target = logical::phi_plus();
        self.pairs
            .iter()
            .map(|p| p.as_ref().expect("key pair checked out").fidelity(&target))
            .fold(f64::INFINITY, f64::min)
    }

    /// Synchronized R(theta) on both halves of every pair.
    pub fn rotate(&mut self, theta: f64) {
        let r = logical::rotation_gate(theta);
        for pair in &mut self.pairs {
            let p = pair.take().expect("key pair checked out");
            let p = p.apply(&r, &[0]).expect("2-qubit pair").apply(&r, &[1]).expect("2-qubit pair");
            *pair = Some(p);
        }
        self.rotation_count += 1;
    }
}

/// Step-5 key refresh.
pub fn rotate_key(key: &mut KeyRegister, theta_key: f64) {
    key.rotate(theta_key);
}

/// The two parties' secret bits for one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessagePair {
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
}

impl MessagePair {
    pub fn new(alice_bits: Vec<u8>, bob_bits: Vec<u8>) -> MessagePair {
        assert_eq!(alice_bits.len(), bob_bits.len());
        assert!(alice_bits.iter().chain(&bob_bits).all(|&b| b <= 1));
        MessagePair { alice_bits, bob_bits }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> MessagePair {
        MessagePair {
            alice_bits: (0..n).map(|_| rng.random_range(0..2u8)).collect(),
            bob_bits: (0..n).map(|_| rng.random_range(0..2u8)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DialogueResult {
    /// Alice's reading of Bob's bits (empty if aborted before decode).
    pub alice_decoded: Vec<u8>,
    /// Bob's reading of Alice's bits.
    pub bob_decoded: Vec<u8>,
    pub aborted: Option<AbortInfo>,
}

/// Optional exact-state measurements collected during a run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Introspection {
    /// Per message qubit: trace distance of the in-flight traveling pair's
    /// reduced state from the code-space maximal mixture.
    pub ciphertext_deviation: Vec<f64>,
    /// Per message qubit: key-pair fidelity with |phi+> after decryption.
    pub key_fidelity_after_decrypt: Vec<f64>,
}

pub struct DialogueOutcome {
    pub result: DialogueResult,
    pub transcript: Transcript,
    /// The rotated key, present when every pair is back home (the key never
    /// leaves the lab after Step 1, so only forward-phase aborts lose pairs).
    pub key: Option<KeyRegister>,
    pub introspection: Introspection,
}

/// One transmission: a sequence of slots plus the sender's secret decoy map.
pub struct Block {
    pub slots: Vec<Slot>,
    /// (position in `slots`, prepared state); announced only at check time.
    pub decoy_layout: Vec<(usize, LogicalState)>,
}

/// Correlation test for one key-share sample, per encoding and basis choice.
/// For the parallel checks the responder's bits must differ and the first
/// must match the initiator's; for the parity checks the initiator's bit
/// must equal the responder's parity.
pub fn sampling_check_ok(enc: Encoding, basis: CheckBasis, a: u8, c: (u8, u8)) -> bool {
    match (enc, basis) {
        (Encoding::Dp, CheckBasis::Z) => c.0 != c.1 && a == c.0,
        (Encoding::Dp, CheckBasis::X) => a == c.0 ^ c.1,
        (Encoding::R, CheckBasis::Z) => a == c.0 ^ c.1,
        (Encoding::R, CheckBasis::Ycirc) => c.0 != c.1 && a == c.0,
        (enc, basis) => unreachable!("basis {basis:?} is not part of the {enc:?} check"),
    }
}

fn check_bases(enc: Encoding) -> (CheckBasis, MeasureBasis) {
    match enc {
        Encoding::Dp => (CheckBasis::X, MeasureBasis::x()),
        Encoding::R => (CheckBasis::Ycirc, MeasureBasis::ycirc()),
    }
}

/// Step 1: prepare N+delta1 resources, send the (C1, C2) halves through the
/// channel, verify delta1 random samples, distill the rest into key pairs.
pub fn share_key(
    cfg: &ProtocolConfig,
    tap: &mut dyn ChannelTap,
    next_block: &mut u64,
    rng: &mut ChaCha8Rng,
) -> (Result<KeyRegister, AbortInfo>, Transcript) {
    let mut transcript = Transcript::default();
    let total = cfg.n + cfg.delta1;
    let mut slots: Vec<Slot> = (0..total)
        .map(|_| Slot {
            state: logical::prepare_resource(cfg.encoding),
            kind: SlotKind::Resource,
            traveling: (1, 2),
            key: None,
            eve: Vec::new(),
        })
        .collect();

    if let Err(abort) = transmit(cfg, &mut slots, Stage::KeyShare, tap, next_block, rng, &mut transcript) {
        return (Err(abort), transcript);
    }

    // Bob picks delta1 sample positions and a basis pair for each; Alice
    // measures her half the same way; the resource's correlations decide.
    let mut sample_positions = rand::seq::index::sample(rng, total, cfg.delta1).into_vec();
    sample_positions.sort_unstable();
    let z = MeasureBasis::z();
    let (alt_label, alt_basis) = check_bases(cfg.encoding);
    for &pos in &sample_positions {
        let slot = &slots[pos];
        let (label, basis) = if rng.random_bool(0.5) { (CheckBasis::Z, &z) } else { (alt_label, &alt_basis) };
        let (c1, post) = slot.state.measure(slot.traveling.0, basis, rng).expect("sample C1");
        let (c2, post) = post.measure(slot.traveling.1, basis, rng).expect("sample C2");
        let (a, _) = post.measure(0, basis, rng).expect("sample A");
        let ok = sampling_check_ok(cfg.encoding, label, a, (c1, c2));
        transcript.push(Event::SamplingCheck {
            position: pos,
            basis: label,
            alice_bit: a,
            bob_bits: (c1, c2),
            ok,
        });
        if !ok {
            let abort = AbortInfo { stage: Stage::KeyShare, cause: AbortCause::SamplingCheck };
            transcript.push(Event::Abort { stage: abort.stage, cause: abort.cause });
            return (Err(abort), transcript);
        }
    }

    let mut pairs = Vec::with_capacity(cfg.n);
    for (pos, mut slot) in slots.into_iter().enumerate() {
        if sample_positions.binary_search(&pos).is_ok() {
            continue;
        }
        tap.finalize(Stage::KeyShare, &mut slot, rng).expect("tap finalize");
        assert!(slot.eve.is_empty(), "tap left ancillas in a key slot");
        let (c1, c2) = slot.traveling;
        slot.state = logical::distill_transform(cfg.encoding, &slot.state, 0, c1, c2)
            .expect("distill transform");
        let (marker, post) = slot.state.measure(c2, &z, rng).expect("marker qubit");
        if marker != 1 {
            let abort = AbortInfo { stage: Stage::KeyShare, cause: AbortCause::DistillFailure };
            transcript.push(Event::Abort { stage: abort.stage, cause: abort.cause });
            return (Err(abort), transcript);
        }
        slot.state = post;
        slot.drop_qubit(c2).expect("drop marker");
        assert_eq!(slot.state.n_qubits(), 2, "pair should be (A, C1)");
        pairs.push(slot.state);
    }
    (Ok(KeyRegister::from_pairs(pairs)), transcript)
}

/// Applies one block's channel noise and the attack tap to every slot.
fn transmit(
    cfg: &ProtocolConfig,
    slots: &mut [Slot],
    stage: Stage,
    tap: &mut dyn ChannelTap,
    next_block: &mut u64,
    rng: &mut ChaCha8Rng,
    transcript: &mut Transcript,
) -> Result<(), AbortInfo> {
    if tap.blocks(stage) {
        let abort = AbortInfo { stage, cause: AbortCause::MissingBlock };
        transcript.push(Event::Abort { stage, cause: abort.cause });
        return Err(abort);
    }
    let draw = cfg.noise.draw(*next_block, rng);
    *next_block += 1;
    for slot in slots.iter_mut() {
        let traveling = [slot.traveling.0, slot.traveling.1];
        slot.state = cfg.noise.apply_draw(&slot.state, &traveling, &draw).expect("channel noise");
        tap.tap(stage, slot, rng).expect("channel tap");
    }
    transcript.push(Event::BlockTransmitted { stage, noise: draw });
    Ok(())
}

/// Step 2: random traveling bits, encryption, decoy insertion.
pub fn alice_prepare_and_encrypt(
    cfg: &ProtocolConfig,
    key: &mut KeyRegister,
    rng: &mut ChaCha8Rng,
) -> (Block, Vec<u8>) {
    let m_record: Vec<u8> = (0..cfg.n).map(|_| rng.random_range(0..2u8)).collect();
    let cu = controlled_logical_gate(cfg.encoding);
    let message_slots: Vec<Slot> = m_record
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let pair = key.take(i);
            let mut state =
                pair.tensor(&encode(cfg.encoding, LogicalState::computational_from_bit(m)));
            if cfg.encryption_enabled {
                // control is A_i (qubit 0); targets are the traveling pair
                state = state.apply(&cu, &[0, 2, 3]).expect("encrypt");
            }
            Slot {
                state,
                kind: SlotKind::Message { index: i },
                traveling: (2, 3),
                key: Some((0, 1)),
                eve: Vec::new(),
            }
        })
        .collect();
    (interleave_decoys(cfg, message_slots, rng), m_record)
}

/// Inserts `decoy_count` random decoys at random positions among the slots.
fn interleave_decoys(cfg: &ProtocolConfig, message_slots: Vec<Slot>, rng: &mut ChaCha8Rng) -> Block {
    let total = message_slots.len() + cfg.decoy_count;
    let mut positions = rand::seq::index::sample(rng, total, cfg.decoy_count).into_vec();
    positions.sort_unstable();
    let mut decoy_layout = Vec::with_capacity(cfg.decoy_count);
    let mut slots = Vec::with_capacity(total);
    let mut messages = message_slots.into_iter();
    for pos in 0..total {
        if positions.binary_search(&pos).is_ok() {
            let prepared = LogicalState::ALL[rng.random_range(0..4)];
            decoy_layout.push((pos, prepared));
            slots.push(Slot {
                state: encode(cfg.encoding, prepared),
                kind: SlotKind::Decoy { prepared },
                traveling: (0, 1),
                key: None,
                eve: Vec::new(),
            });
        } else {
            slots.push(messages.next().expect("message count"));
        }
    }
    Block { slots, decoy_layout }
}

/// True iff a decoy's measured verdict matches its preparation.
pub fn decoy_pass(prepared: LogicalState, observed: Discrimination) -> bool {
    observed == Discrimination::Logical(prepared)
}

/// Measures every decoy in its announced family, records the comparisons,
/// and strips the decoy slots from the block. Any mismatch aborts.
pub fn measure_and_check_decoys(
    cfg: &ProtocolConfig,
    block: &mut Block,
    stage: Stage,
    tap: &mut dyn ChannelTap,
    rng: &mut ChaCha8Rng,
    transcript: &mut Transcript,
) -> Result<(), AbortInfo> {
    let mut failure = None;
    for &(pos, prepared) in &block.decoy_layout {
        let slot = &mut block.slots[pos];
        let (q1, q2) = slot.traveling;
        let out = discriminate(cfg.encoding, prepared.family(), &slot.state, q1, q2, rng)
            .expect("decoy readout");
        slot.state = out.state;
        tap.finalize(stage, slot, rng).expect("tap finalize");
        let ok = decoy_pass(prepared, out.verdict);
        transcript.push(Event::DecoyCheck {
            stage,
            position: pos,
            prepared,
            observed: out.verdict,
            ok,
        });
        if !ok && failure.is_none() {
            failure = Some(AbortInfo { stage, cause: AbortCause::DecoyCheck });
            break;
        }
    }
    if let Some(abort) = failure {
        transcript.push(Event::Abort { stage: abort.stage, cause: abort.cause });
        return Err(abort);
    }
    block.slots.retain(|s| !matches!(s.kind, SlotKind::Decoy { .. }));
    block.decoy_layout.clear();
    Ok(())
}

/// Step 3: decrypt with the key's B halves, read the traveling bits, return
/// fresh re-encoded qubits carrying Bob's bits, with new decoys.
pub fn bob_decrypt_reencode(
    cfg: &ProtocolConfig,
    key: &mut KeyRegister,
    block: Block,
    k_bits: &[u8],
    tap: &mut dyn ChannelTap,
    rng: &mut ChaCha8Rng,
    transcript: &mut Transcript,
    introspection: &mut Introspection,
) -> Result<(Block, Vec<u8>), AbortInfo> {
    assert_eq!(k_bits.len(), cfg.n);
    let cu = controlled_logical_gate(cfg.encoding);
    let mut m_seen = Vec::with_capacity(cfg.n);
    let mut return_slots = Vec::with_capacity(cfg.n);
    for mut slot in block.slots {
        let SlotKind::Message { index } = slot.kind else {
            panic!("decoys must be stripped before decryption")
        };
        let (_, kq_b) = slot.key.expect("message slot carries its key pair");
        let (t1, t2) = slot.traveling;
        if cfg.encryption_enabled {
            slot.state = slot.state.apply(&cu, &[kq_b, t1, t2]).expect("decrypt");
            // encrypt-then-decrypt flips |phi+> to |phi-> because the logical
            // flip squares to -I; a local sign fix on B restores the pair
            slot.state = slot.state.apply(&Gate::sigma_z(), &[kq_b]).expect("sign fix");
        }
        tap.finalize(Stage::Forward, &mut slot, rng).expect("tap finalize");
        assert!(slot.eve.is_empty(), "tap left ancillas in a message slot");
        let out = discriminate(cfg.encoding, LogicalFamily::Computational, &slot.state, t1, t2, rng)
            .expect("traveling readout");
        slot.state = out.state;
        let m = match out.verdict {
            Discrimination::Logical(s) => s.bit(),
            Discrimination::Tamper => {
                let abort = AbortInfo { stage: Stage::Forward, cause: AbortCause::Tamper };
                transcript.push(Event::Abort { stage: abort.stage, cause: abort.cause });
                return Err(abort);
            }
        };
        m_seen.push(m);
        // measured traveling qubits are definite; strip them, highest first
        slot.drop_qubit(t1.max(t2)).expect("drop traveling");
        slot.drop_qubit(t1.min(t2)).expect("drop traveling");
        let pair = slot.state;
        if cfg.introspect {
            introspection.key_fidelity_after_decrypt.push(pair.fidelity(&logical::phi_plus()));
        }
        key.put(index, pair);

        let fresh = encode(cfg.encoding, LogicalState::computational_from_bit(m));
        let encoded = fresh
            .apply(&logical_gate(cfg.encoding, LogicalOp::from_bit(k_bits[index])), &[0, 1])
            .expect("re-encode");
        return_slots.push(Slot {
            state: encoded,
            kind: SlotKind::Message { index },
            traveling: (0, 1),
            key: None,
            eve: Vec::new(),
        });
    }
    Ok((interleave_decoys(cfg, return_slots, rng), m_seen))
}

/// Step 4: apply Alice's coding, read out, announce.
pub fn alice_encode_announce(
    cfg: &ProtocolConfig,
    block: Block,
    j_bits: &[u8],
    tap: &mut dyn ChannelTap,
    rng: &mut ChaCha8Rng,
    transcript: &mut Transcript,
) -> Result<Vec<u8>, AbortInfo> {
    assert_eq!(j_bits.len(), cfg.n);
    let mut announced = vec![0u8; cfg.n];
    for mut slot in block.slots {
        let SlotKind::Message { index } = slot.kind else {
            panic!("decoys must be stripped before announcement")
        };
        let (t1, t2) = slot.traveling;
        slot.state = slot
            .state
            .apply(&logical_gate(cfg.encoding, LogicalOp::from_bit(j_bits[index])), &[t1, t2])
            .expect("final coding");
        tap.finalize(Stage::Return, &mut slot, rng).expect("tap finalize");
        let out = discriminate(cfg.encoding, LogicalFamily::Computational, &slot.state, t1, t2, rng)
            .expect("final readout");
        let m_final = match out.verdict {
            Discrimination::Logical(s) => s.bit(),
            Discrimination::Tamper => {
                let abort = AbortInfo { stage: Stage::Return, cause: AbortCause::Tamper };
                transcript.push(Event::Abort { stage: abort.stage, cause: abort.cause });
                return Err(abort);
            }
        };
        announced[index] = m_final;
        transcript.push(Event::Announcement { index, m_final });
        tap.hear_announcement(index, m_final);
    }
    Ok(announced)
}

/// Both directions decode with the same exclusive-or rule: each party
/// combines its own coding bit, its knowledge of the traveling bit, and the
/// public announcement.
pub fn decode_bits(own_bits: &[u8], m_bits: &[u8], announced: &[u8]) -> Vec<u8> {
    assert!(own_bits.len() == m_bits.len() && m_bits.len() == announced.len());
    own_bits
        .iter()
        .zip(m_bits)
        .zip(announced)
        .map(|((&o, &m), &a)| o ^ m ^ a)
        .collect()
}

/// Steps 2 through 5 for one round. The key is consumed; it comes back
/// rotated if every pair returned home.
pub fn run_dialogue(
    cfg: &ProtocolConfig,
    msgs: &MessagePair,
    mut key: KeyRegister,
    tap: &mut dyn ChannelTap,
    next_block: &mut u64,
    rng: &mut ChaCha8Rng,
) -> DialogueOutcome {
    assert_eq!(msgs.len(), cfg.n);
    assert_eq!(key.len(), cfg.n);
    let mut transcript = Transcript::default();
    let mut introspection = Introspection::default();

    let aborted_without_key = |transcript: Transcript, introspection: Introspection, abort| DialogueOutcome {
        result: DialogueResult {
            alice_decoded: Vec::new(),
            bob_decoded: Vec::new(),
            aborted: Some(abort),
        },
        transcript,
        key: None,
        introspection,
    };

    // Step 2: encrypt and send forward
    let (mut forward, m_record) = alice_prepare_and_encrypt(cfg, &mut key, rng);
    if let Err(abort) = transmit(cfg, &mut forward.slots, Stage::Forward, tap, next_block, rng, &mut transcript) {
        return aborted_without_key(transcript, introspection, abort);
    }
    if cfg.introspect {
        let mixed = logical::code_mixed(cfg.encoding);
        for slot in &forward.slots {
            if matches!(slot.kind, SlotKind::Message { .. }) {
                let rho = slot
                    .state
                    .reduced_density(&[slot.traveling.0, slot.traveling.1])
                    .expect("in-flight reduced state");
                introspection
                    .ciphertext_deviation
                    .push(rho.trace_distance(&mixed).expect("deviation"));
            }
        }
    }
    if let Err(abort) = measure_and_check_decoys(cfg, &mut forward, Stage::Forward, tap, rng, &mut transcript) {
        return aborted_without_key(transcript, introspection, abort);
    }

    // Step 3: decrypt, read, re-encode, send back
    let decrypt = bob_decrypt_reencode(
        cfg,
        &mut key,
        forward,
        &msgs.bob_bits,
        tap,
        rng,
        &mut transcript,
        &mut introspection,
    );
    let (mut back, m_seen) = match decrypt {
        Ok(v) => v,
        Err(abort) => return aborted_without_key(transcript, introspection, abort),
    };

    let aborted_with_key = |transcript: Transcript, introspection: Introspection, abort, key| DialogueOutcome {
        result: DialogueResult {
            alice_decoded: Vec::new(),
            bob_decoded: Vec::new(),
            aborted: Some(abort),
        },
        transcript,
        key: Some(key),
        introspection,
    };

    if let Err(abort) = transmit(cfg, &mut back.slots, Stage::Return, tap, next_block, rng, &mut transcript) {
        return aborted_with_key(transcript, introspection, abort, key);
    }
    if let Err(abort) = measure_and_check_decoys(cfg, &mut back, Stage::Return, tap, rng, &mut transcript) {
        return aborted_with_key(transcript, introspection, abort, key);
    }

    // Step 4: Alice's coding and the public announcements
    let announced = match alice_encode_announce(cfg, back, &msgs.alice_bits, tap, rng, &mut transcript) {
        Ok(v) => v,
        Err(abort) => return aborted_with_key(transcript, introspection, abort, key),
    };
    let alice_decoded = decode_bits(&msgs.alice_bits, &m_record, &announced);
    let bob_decoded = decode_bits(&msgs.bob_bits, &m_seen, &announced);

    // Step 5: refresh the key for the next round
    rotate_key(&mut key, cfg.theta_key);

    DialogueOutcome {
        result: DialogueResult { alice_decoded, bob_decoded, aborted: None },
        transcript,
        key: Some(key),
        introspection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseKind, ParamLaw};
    use crate::statevec::equal_up_to_phase;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn test_cfg(encoding: Encoding, n: usize) -> ProtocolConfig {
        let mut cfg = ProtocolConfig::new(encoding, n);
        cfg.delta1 = 4;
        cfg.decoy_count = 4;
        cfg
    }

    #[test]
    fn config_rejects_forbidden_angles() {
        let q = std::f64::consts::FRAC_PI_4;
        for bad in [q, -q, 3.0 * q, 5.0 * q, q + 1e-10, std::f64::consts::PI - q] {
            let mut cfg = ProtocolConfig::new(Encoding::Dp, 4);
            cfg.theta_key = bad;
            assert!(
                matches!(cfg.validate(), Err(ConfigError::ForbiddenTheta { .. })),
                "theta = {bad}"
            );
        }
        for good in [0.0, std::f64::consts::FRAC_PI_8, 1.0, std::f64::consts::PI] {
            let mut cfg = ProtocolConfig::new(Encoding::Dp, 4);
            cfg.theta_key = good;
            assert!(cfg.validate().is_ok(), "theta = {good}");
        }
    }

    #[test]
    fn config_rejects_degenerate_sizes() {
        let mut cfg = ProtocolConfig::new(Encoding::Dp, 0);
        assert!(matches!(cfg.validate(), Err(ConfigError::TooSmall { field: "n", .. })));
        cfg.n = 1;
        cfg.delta1 = 0;
        assert!(matches!(cfg.validate(), Err(ConfigError::TooSmall { field: "delta1", .. })));
        cfg.delta1 = 1;
        cfg.decoy_count = 0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn null_rotation_warning() {
        let mut cfg = ProtocolConfig::new(Encoding::Dp, 4);
        assert!(cfg.warnings().is_empty());
        cfg.theta_key = 0.0;
        assert_eq!(cfg.warnings(), vec![ConfigWarning::NullRotation]);
        cfg.theta_key = std::f64::consts::TAU;
        assert_eq!(cfg.warnings(), vec![ConfigWarning::NullRotation]);
    }

    #[test]
    fn sampling_truth_tables() {
        use CheckBasis::*;
        // dp, Z: anti-correlated responder bits led by the initiator's bit
        for a in 0..2u8 {
            for c1 in 0..2u8 {
                for c2 in 0..2u8 {
                    assert_eq!(
                        sampling_check_ok(Encoding::Dp, Z, a, (c1, c2)),
                        c1 != c2 && a == c1
                    );
                    assert_eq!(sampling_check_ok(Encoding::Dp, X, a, (c1, c2)), a == c1 ^ c2);
                    assert_eq!(sampling_check_ok(Encoding::R, Z, a, (c1, c2)), a == c1 ^ c2);
                    assert_eq!(
                        sampling_check_ok(Encoding::R, Ycirc, a, (c1, c2)),
                        c1 != c2 && a == c1
                    );
                }
            }
        }
    }

    #[test]
    fn share_key_produces_exact_pairs_under_matching_noise() {
        for (enc, kind) in [(Encoding::Dp, NoiseKind::Dephasing), (Encoding::R, NoiseKind::Rotation)] {
            let mut cfg = test_cfg(enc, 6);
            cfg.noise = NoiseModel { kind, law: ParamLaw::Uniform };
            let mut next_block = 0;
            let mut r = rng(11);
            let (key, transcript) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
            let key = key.expect("honest run never aborts");
            assert_eq!(key.len(), 6);
            assert!(key.min_fidelity_phi_plus() > 1.0 - 1e-9);
            let checks: Vec<_> = transcript
                .events
                .iter()
                .filter(|e| matches!(e, Event::SamplingCheck { .. }))
                .collect();
            assert_eq!(checks.len(), cfg.delta1);
            assert!(checks.iter().all(|e| matches!(e, Event::SamplingCheck { ok: true, .. })));
        }
    }

    #[test]
    fn share_key_samples_pass_both_bases_many_seeds() {
        for enc in [Encoding::Dp, Encoding::R] {
            let cfg = test_cfg(enc, 2);
            for seed in 0..20 {
                let mut next_block = 0;
                let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut rng(seed));
                assert!(key.is_ok());
            }
        }
    }

    #[test]
    fn dialogue_decodes_exactly_for_both_encodings() {
        for enc in [Encoding::Dp, Encoding::R] {
            let cfg = test_cfg(enc, 8);
            let mut r = rng(17);
            let mut next_block = 0;
            let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
            let key = key.unwrap();
            let msgs = MessagePair::random(8, &mut r);
            let out = run_dialogue(&cfg, &msgs, key, &mut HonestChannel, &mut next_block, &mut r);
            assert!(out.result.aborted.is_none());
            assert_eq!(out.result.alice_decoded, msgs.bob_bits);
            assert_eq!(out.result.bob_decoded, msgs.alice_bits);
            let key = out.key.expect("key survives an honest round");
            assert!(key.min_fidelity_phi_plus() > 1.0 - 1e-9);
            assert_eq!(key.rotation_count(), 1);
        }
    }

    #[test]
    fn announcement_algebra_holds_stepwise() {
        let cfg = {
            let mut c = test_cfg(Encoding::Dp, 6);
            c.noise = NoiseModel::ideal();
            c
        };
        let mut r = rng(23);
        let mut next_block = 0;
        let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        let mut key = key.unwrap();
        let msgs = MessagePair::random(6, &mut r);
        let mut transcript = Transcript::default();
        let mut intro = Introspection::default();

        let (mut fwd, m_record) = alice_prepare_and_encrypt(&cfg, &mut key, &mut r);
        transmit(&cfg, &mut fwd.slots, Stage::Forward, &mut HonestChannel, &mut next_block, &mut r, &mut transcript).unwrap();
        measure_and_check_decoys(&cfg, &mut fwd, Stage::Forward, &mut HonestChannel, &mut r, &mut transcript).unwrap();
        let (mut back, m_seen) = bob_decrypt_reencode(
            &cfg, &mut key, fwd, &msgs.bob_bits, &mut HonestChannel, &mut r, &mut transcript, &mut intro,
        )
        .unwrap();
        assert_eq!(m_seen, m_record, "decryption reveals the traveling bits exactly");
        transmit(&cfg, &mut back.slots, Stage::Return, &mut HonestChannel, &mut next_block, &mut r, &mut transcript).unwrap();
        measure_and_check_decoys(&cfg, &mut back, Stage::Return, &mut HonestChannel, &mut r, &mut transcript).unwrap();
        let announced =
            alice_encode_announce(&cfg, back, &msgs.alice_bits, &mut HonestChannel, &mut r, &mut transcript).unwrap();
        for i in 0..cfg.n {
            assert_eq!(announced[i], m_record[i] ^ msgs.alice_bits[i] ^ msgs.bob_bits[i]);
        }
        assert_eq!(decode_bits(&msgs.alice_bits, &m_record, &announced), msgs.bob_bits);
        assert_eq!(decode_bits(&msgs.bob_bits, &m_seen, &announced), msgs.alice_bits);
    }

    #[test]
    fn key_is_conserved_and_rotations_compose() {
        let cfg = test_cfg(Encoding::R, 4);
        let mut r = rng(29);
        let mut next_block = 0;
        let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        let mut key = key.unwrap();
        assert!(key.min_fidelity_phi_plus() > 1.0 - 1e-9);
        key.rotate(0.4);
        assert!(key.min_fidelity_phi_plus() > 1.0 - 1e-9);
        assert_eq!(key.rotation_count(), 1);

        // two rotations equal one by the summed angle
        let mut a = key.clone();
        a.rotate(0.3);
        a.rotate(0.5);
        let mut b = key.clone();
        b.rotate(0.8);
        for i in 0..a.len() {
            assert!(equal_up_to_phase(a.pair(i), b.pair(i), 1e-12));
        }
    }

    #[test]
    fn decoy_checks_pass_exactly_over_many_decoys() {
        // 10^4 honest decoys through an ideal channel: zero mismatches
        let mut cfg = test_cfg(Encoding::Dp, 1);
        cfg.noise = NoiseModel::ideal();
        let mut r = rng(31);
        let mut transcript = Transcript::default();
        let mut checked = 0usize;
        while checked < 10_000 {
            let count = 50;
            let mut slots = Vec::new();
            let mut layout = Vec::new();
            for pos in 0..count {
                let prepared = LogicalState::ALL[r.random_range(0..4)];
                layout.push((pos, prepared));
                slots.push(Slot {
                    state: encode(cfg.encoding, prepared),
                    kind: SlotKind::Decoy { prepared },
                    traveling: (0, 1),
                    key: None,
                    eve: Vec::new(),
                });
            }
            let mut block = Block { slots, decoy_layout: layout };
            let mut next_block = 0;
            transmit(&cfg, &mut block.slots, Stage::Forward, &mut HonestChannel, &mut next_block, &mut r, &mut transcript)
                .unwrap();
            measure_and_check_decoys(&cfg, &mut block, Stage::Forward, &mut HonestChannel, &mut r, &mut transcript)
                .expect("honest decoys never fail");
            checked += count;
        }
        assert!(transcript
            .events
            .iter()
            .filter_map(|e| match e {
                Event::DecoyCheck { ok, .. } => Some(*ok),
                _ => None,
            })
            .all(|ok| ok));
    }

    #[test]
    fn tampering_with_computational_decoy_aborts() {
        struct FlipFirstTraveling;
        impl ChannelTap for FlipFirstTraveling {
            fn tap(
                &mut self,
                _stage: Stage,
                slot: &mut Slot,
                _rng: &mut ChaCha8Rng,
            ) -> Result<(), StateError> {
                slot.state = slot.state.apply(&Gate::sigma_x(), &[slot.traveling.0])?;
                Ok(())
            }
        }
        let mut cfg = test_cfg(Encoding::Dp, 1);
        cfg.noise = NoiseModel::ideal();
        let mut r = rng(37);
        let mut transcript = Transcript::default();
        let slots = vec![Slot {
            state: encode(Encoding::Dp, LogicalState::L0),
            kind: SlotKind::Decoy { prepared: LogicalState::L0 },
            traveling: (0, 1),
            key: None,
            eve: Vec::new(),
        }];
        let mut block = Block { slots, decoy_layout: vec![(0, LogicalState::L0)] };
        let mut next_block = 0;
        transmit(&cfg, &mut block.slots, Stage::Forward, &mut FlipFirstTraveling, &mut next_block, &mut r, &mut transcript)
            .unwrap();
        let err = measure_and_check_decoys(
            &cfg,
            &mut block,
            Stage::Forward,
            &mut FlipFirstTraveling,
            &mut r,
            &mut transcript,
        )
        .unwrap_err();
        assert_eq!(err, AbortInfo { stage: Stage::Forward, cause: AbortCause::DecoyCheck });
        assert!(matches!(
            transcript.events.last(),
            Some(Event::Abort { cause: AbortCause::DecoyCheck, .. })
        ));
    }

    #[test]
    fn mismatched_noise_kind_aborts_dialogue() {
        // dp code under a rotation channel: decoys scramble and checks catch it
        let mut cfg = test_cfg(Encoding::Dp, 4);
        cfg.noise = NoiseModel::rotation(ParamLaw::Fixed(1.0));
        let mut r = rng(41);
        let mut next_block = 0;
        let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        // key share itself usually aborts; if it survived, the dialogue must catch it
        match key {
            Err(abort) => assert_eq!(abort.stage, Stage::KeyShare),
            Ok(key) => {
                let msgs = MessagePair::random(4, &mut r);
                let out = run_dialogue(&cfg, &msgs, key, &mut HonestChannel, &mut next_block, &mut r);
                assert!(out.result.aborted.is_some());
            }
        }
    }

    #[test]
    fn transcript_public_view_carries_no_private_fields() {
        let cfg = test_cfg(Encoding::R, 4);
        let mut r = rng(43);
        let mut next_block = 0;
        let (key, t1) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        let msgs = MessagePair::random(4, &mut r);
        let out = run_dialogue(&cfg, &msgs, key.unwrap(), &mut HonestChannel, &mut next_block, &mut r);
        for t in [&t1, &out.transcript] {
            let v = serde_json::to_value(t.public_view()).unwrap();
            let mut keys = Vec::new();
            collect_keys(&v, &mut keys);
            for k in &keys {
                assert!(
                    !k.contains("m_record") && !k.contains("m_seen") && !k.contains("noise") && !k.contains("angle"),
                    "private field {k} leaked into the public view"
                );
            }
            // announcements and check metadata are the only payloads
            assert!(keys.iter().any(|k| k == "announcements"));
        }
    }

    fn collect_keys(v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, val) in map {
                    out.push(k.clone());
                    collect_keys(val, out);
                }
            }
            serde_json::Value::Array(items) => {
                for item in items {
                    collect_keys(item, out);
                }
            }
            _ => {}
        }
    }

    #[test]
    fn dialogue_under_every_noise_kind_and_seeds() {
        for enc in [Encoding::Dp, Encoding::R] {
            for seed in 0..10 {
                let cfg = test_cfg(enc, 4);
                let mut r = rng(1000 + seed);
                let mut next_block = 0;
                let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
                let key = key.unwrap();
                let msgs = MessagePair::random(4, &mut r);
                let out = run_dialogue(&cfg, &msgs, key, &mut HonestChannel, &mut next_block, &mut r);
                assert!(out.result.aborted.is_none(), "{enc:?} seed {seed}");
                assert_eq!(out.result.alice_decoded, msgs.bob_bits);
                assert_eq!(out.result.bob_decoded, msgs.alice_bits);
            }
        }
    }

    #[test]
    fn introspection_reports_maximally_mixed_ciphertext() {
        for enc in [Encoding::Dp, Encoding::R] {
            let mut cfg = test_cfg(enc, 4);
            cfg.introspect = true;
            let mut r = rng(47);
            let mut next_block = 0;
            let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
            let msgs = MessagePair::random(4, &mut r);
            let out = run_dialogue(&cfg, &msgs, key.unwrap(), &mut HonestChannel, &mut next_block, &mut r);
            assert_eq!(out.introspection.ciphertext_deviation.len(), 4);
            for d in &out.introspection.ciphertext_deviation {
                assert!(*d < 1e-12, "{enc:?} deviation {d}");
            }
            for f in &out.introspection.key_fidelity_after_decrypt {
                assert!((f - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unencrypted_control_run_exposes_pure_ciphertext() {
        let mut cfg = test_cfg(Encoding::Dp, 4);
        cfg.encryption_enabled = false;
        cfg.introspect = true;
        let mut r = rng(53);
        let mut next_block = 0;
        let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        let msgs = MessagePair::random(4, &mut r);
        let out = run_dialogue(&cfg, &msgs, key.unwrap(), &mut HonestChannel, &mut next_block, &mut r);
        assert!(out.result.aborted.is_none());
        // decode still works (the scheme is correct, just not private)
        assert_eq!(out.result.alice_decoded, msgs.bob_bits);
        for d in &out.introspection.ciphertext_deviation {
            assert!((d - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn five_rounds_of_key_reuse_decode_perfectly() {
        let cfg = test_cfg(Encoding::Dp, 4);
        let mut r = rng(59);
        let mut next_block = 0;
        let (key, _) = share_key(&cfg, &mut HonestChannel, &mut next_block, &mut r);
        let mut key = key.unwrap();
        for round in 0..5 {
            let msgs = MessagePair::random(4, &mut r);
            let out = run_dialogue(&cfg, &msgs, key, &mut HonestChannel, &mut next_block, &mut r);
            assert!(out.result.aborted.is_none(), "round {round}");
            assert_eq!(out.result.alice_decoded, msgs.bob_bits);
            assert_eq!(out.result.bob_decoded, msgs.alice_bits);
            key = out.key.unwrap();
            assert!(key.min_fidelity_phi_plus() > 1.0 - 1e-9);
            assert_eq!(key.rotation_count(), round + 1);
        }
    }
}
