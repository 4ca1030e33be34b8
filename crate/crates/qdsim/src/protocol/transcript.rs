//! Run records and their public projection.
//!
//! The full [`Transcript`] is the simulation's event log, including channel
//! parameters nobody in the protocol can see. [`PublicView`] is what an
//! outside listener obtains: announcements, check metadata and abort flags,
//! never the private traveling-state bits.

use serde::{Deserialize, Serialize};

use crate::logical::{Discrimination, LogicalState};
use crate::noise::NoiseDraw;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    KeyShare,
    Forward,
    Return,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckBasis {
    Z,
    X,
    Ycirc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCause {
    /// Entanglement-correlation violation during key sharing.
    SamplingCheck,
    /// Decoy outcome differed from its preparation.
    DecoyCheck,
    /// Logical readout landed outside the code's honest support.
    Tamper,
    /// Distillation marker qubit read 0.
    DistillFailure,
    /// Transmission never arrived.
    MissingBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub stage: Stage,
    pub cause: AbortCause,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// One block crossed the channel (simulation-private: includes the draw).
    BlockTransmitted { stage: Stage, noise: NoiseDraw },
    /// One key-share sample was compared (public).
    SamplingCheck {
        position: usize,
        basis: CheckBasis,
        alice_bit: u8,
        bob_bits: (u8, u8),
        ok: bool,
    },
    /// One decoy was verified (public, announced after the block landed).
    DecoyCheck {
        stage: Stage,
        position: usize,
        prepared: LogicalState,
        observed: Discrimination,
        ok: bool,
    },
    /// Final logical readout for one message slot (public).
    Announcement { index: usize, m_final: u8 },
    /// The run stopped (public).
    Abort { stage: Stage, cause: AbortCause },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Transcript {
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn abort_info(&self) -> Option<AbortInfo> {
        self.events.iter().find_map(|e| match e {
            Event::Abort { stage, cause } => Some(AbortInfo { stage: *stage, cause: *cause }),
            _ => None,
        })
    }

    pub fn announcements(&self) -> Vec<(usize, u8)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Announcement { index, m_final } => Some((*index, *m_final)),
                _ => None,
            })
            .collect()
    }

    /// Everything an outside listener learns. Channel draws and any private
    /// measurement records are projected away.
    pub fn public_view(&self) -> PublicView {
        let mut view = PublicView::default();
        for event in &self.events {
            match event {
                Event::BlockTransmitted { .. } => {}
                Event::SamplingCheck { position, basis, alice_bit, bob_bits, ok } => {
                    view.sampling_checks.push(PublicSamplingCheck {
                        position: *position,
                        basis: *basis,
                        alice_bit: *alice_bit,
                        bob_bits: *bob_bits,
                        ok: *ok,
                    });
                }
                Event::DecoyCheck { stage, position, prepared, observed, ok } => {
                    view.decoy_checks.push(PublicDecoyCheck {
                        stage: *stage,
                        position: *position,
                        prepared: *prepared,
                        observed: *observed,
                        ok: *ok,
                    });
                }
                Event::Announcement { index, m_final } => {
                    view.announcements.push(PublicAnnouncement {
                        index: *index,
                        m_final: *m_final,
                    });
                }
                Event::Abort { stage, cause } => {
                    view.abort = Some(AbortInfo { stage: *stage, cause: *cause });
                }
            }
        }
        view
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PublicSamplingCheck {
    pub position: usize,
    pub basis: CheckBasis,
    pub alice_bit: u8,
    pub bob_bits: (u8, u8),
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PublicDecoyCheck {
    pub stage: Stage,
    pub position: usize,
    pub prepared: LogicalState,
    pub observed: Discrimination,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PublicAnnouncement {
    pub index: usize,
    pub m_final: u8,
}

/// The listener's record: announcements plus check metadata only.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PublicView {
    pub sampling_checks: Vec<PublicSamplingCheck>,
    pub decoy_checks: Vec<PublicDecoyCheck>,
    pub announcements: Vec<PublicAnnouncement>,
    pub abort: Option<AbortInfo>,
}
