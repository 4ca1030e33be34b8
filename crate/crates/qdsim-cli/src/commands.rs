//! The four subcommands. Every payload embeds the resolved config and, for
//! Monte Carlo quantities, the matching closed-form oracle value. Timing
//! goes to stderr only, so identical runs write identical payload bytes.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use qdsim::adversary::{
    estimate_detection, oracle, run_attack_trial, wilson_interval, Attack, AttackTrial,
    DetectionStats,
};
use qdsim::analysis::{
    announcement_leakage, comparison_table, df_invariance_suite, efficiency, identity_suite,
    mixedness_check, EfficiencyMode, EfficiencyReport, IdentityCheck, InvarianceEntry,
    LeakageReport,
};
use qdsim::logical::Encoding;
use qdsim::protocol::transcript::{AbortCause, AbortInfo, PublicView};
use qdsim::protocol::{
    run_dialogue, share_key, ChannelTap, DialogueOutcome, HonestChannel, KeyRegister,
    MessagePair, ProtocolConfig,
};

use crate::config::{OutputFormat, RunConfig};
use crate::output::{fmt_opt, tag, write_csv, write_json, write_text};
use crate::CliError;

const WILSON_Z_95: f64 = 1.959963984540054;

fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round + 1);
    rng
}

// dialogue

#[derive(Serialize)]
struct RoundRecord {
    round: u64,
    /// True when this round had to establish a key first (always true for
    /// round 0; later only after a forward-phase abort lost the pairs).
    key_reshared: bool,
    abort: Option<AbortInfo>,
    alice_decode_accuracy: Option<f64>,
    bob_decode_accuracy: Option<f64>,
    decoy_checks: usize,
    decoy_failures: usize,
    /// Largest in-flight deviation from the code-space maximal mixture;
    /// present only when introspection is on.
    max_ciphertext_deviation: Option<f64>,
    key_rotations: Option<u32>,
}

#[derive(Default)]
struct RoundDetail {
    alice_bits: Vec<u8>,
    bob_bits: Vec<u8>,
    alice_read: Vec<u8>,
    bob_read: Vec<u8>,
}

#[derive(Serialize)]
struct DialogueSummary {
    rounds: u32,
    aborted_rounds: u32,
    mean_decode_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct DialoguePayload<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    rounds: &'a [RoundRecord],
    summary: DialogueSummary,
}

fn bit_accuracy(read: &[u8], sent: &[u8]) -> f64 {
    assert_eq!(read.len(), sent.len());
    let hits = read.iter().zip(sent).filter(|(a, b)| a == b).count();
    hits as f64 / sent.len() as f64
}

pub fn cmd_dialogue(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let protocol = &cfg.protocol;
    let mut tap: Box<dyn ChannelTap> = match cfg.attack {
        Some(kind) => Box::new(Attack::new(kind, protocol.encoding)),
        None => Box::new(HonestChannel),
    };

    let mut key: Option<KeyRegister> = None;
    let mut next_block = 0u64;
    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(cfg.trials as usize);
    let mut details: Vec<RoundDetail> = Vec::with_capacity(cfg.trials as usize);

    for round in 0..cfg.trials as u64 {
        let round_started = Instant::now();
        let mut rng = round_rng(protocol.seed, round);
        let mut key_reshared = false;

        if key.is_none() {
            key_reshared = true;
            let (shared, transcript) =
                share_key(protocol, tap.as_mut(), &mut next_block, &mut rng);
            match shared {
                Ok(k) => key = Some(k),
                Err(abort) => {
                    let view = transcript.public_view();
                    rounds.push(RoundRecord {
                        round,
                        key_reshared,
                        abort: Some(abort),
                        alice_decode_accuracy: None,
                        bob_decode_accuracy: None,
                        decoy_checks: view.decoy_checks.len(),
                        decoy_failures: view.decoy_checks.iter().filter(|c| !c.ok).count(),
                        max_ciphertext_deviation: None,
                        key_rotations: None,
                    });
                    details.push(RoundDetail::default());
                    eprintln!("round {round}: {:?} (key share aborted)", round_started.elapsed());
                    continue;
                }
            }
        }

        let msgs = MessagePair::random(protocol.n, &mut rng);
        let DialogueOutcome { result, transcript, key: returned, introspection } = run_dialogue(
            protocol,
            &msgs,
            key.take().expect("key present after share"),
            tap.as_mut(),
            &mut next_block,
            &mut rng,
        );
        key = returned;

        let view = transcript.public_view();
        let (acc_a, acc_b) = if result.aborted.is_none() {
            (
                Some(bit_accuracy(&result.alice_decoded, &msgs.bob_bits)),
                Some(bit_accuracy(&result.bob_decoded, &msgs.alice_bits)),
            )
        } else {
            (None, None)
        };
        rounds.push(RoundRecord {
            round,
            key_reshared,
            abort: result.aborted,
            alice_decode_accuracy: acc_a,
            bob_decode_accuracy: acc_b,
            decoy_checks: view.decoy_checks.len(),
            decoy_failures: view.decoy_checks.iter().filter(|c| !c.ok).count(),
            max_ciphertext_deviation: protocol
                .introspect
                .then(|| mixedness_check(&introspection).max_deviation),
            key_rotations: key.as_ref().map(KeyRegister::rotation_count),
        });
        details.push(RoundDetail {
            alice_bits: msgs.alice_bits,
            bob_bits: msgs.bob_bits,
            alice_read: result.alice_decoded,
            bob_read: result.bob_decoded,
        });
        eprintln!("round {round}: {:?}", round_started.elapsed());
    }

    let aborted_rounds = rounds.iter().filter(|r| r.abort.is_some()).count() as u32;
    let accuracies: Vec<f64> = rounds
        .iter()
        .filter_map(|r| Some((r.alice_decode_accuracy? + r.bob_decode_accuracy?) / 2.0))
        .collect();
    let summary = DialogueSummary {
        rounds: cfg.trials,
        aborted_rounds,
        mean_decode_accuracy: (!accuracies.is_empty())
            .then(|| accuracies.iter().sum::<f64>() / accuracies.len() as f64),
    };

    let written = match cfg.format {
        OutputFormat::Json => write_json(
            &cfg.out,
            &DialoguePayload {
                schema: "qdsim.dialogue.v1",
                config: cfg,
                rounds: &rounds,
                summary,
            },
        ),
        OutputFormat::Csv => write_csv(&cfg.out, DIALOGUE_CSV_HEADER, &dialogue_rows(&rounds, &details)),
    };
    eprintln!("dialogue: {} rounds in {:?}", cfg.trials, started.elapsed());
    written
}

const DIALOGUE_CSV_HEADER: &[&str] = &[
    "schema",
    "round",
    "bit",
    "alice_bit",
    "bob_bit",
    "alice_read",
    "bob_read",
    "both_correct",
    "key_reshared",
    "abort_stage",
    "abort_cause",
];

/// One row per (round, message bit); rounds that aborted before any message
/// existed contribute a single placeholder row so every round is visible.
fn dialogue_rows(rounds: &[RoundRecord], details: &[RoundDetail]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (record, detail) in rounds.iter().zip(details) {
        let (stage, cause) = match record.abort {
            Some(a) => (tag(&a.stage), tag(&a.cause)),
            None => (String::new(), String::new()),
        };
        let decoded = !detail.alice_read.is_empty();
        if detail.alice_bits.is_empty() {
            rows.push(vec![
                "qdsim.dialogue.v1".into(),
                record.round.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                record.key_reshared.to_string(),
                stage.clone(),
                cause.clone(),
            ]);
            continue;
        }
        for bit in 0..detail.alice_bits.len() {
            let (alice_read, bob_read, both) = if decoded {
                let ok = detail.alice_read[bit] == detail.bob_bits[bit]
                    && detail.bob_read[bit] == detail.alice_bits[bit];
                (
                    detail.alice_read[bit].to_string(),
                    detail.bob_read[bit].to_string(),
                    ok.to_string(),
                )
            } else {
                (String::new(), String::new(), String::new())
            };
            rows.push(vec![
                "qdsim.dialogue.v1".into(),
                record.round.to_string(),
                bit.to_string(),
                detail.alice_bits[bit].to_string(),
                detail.bob_bits[bit].to_string(),
                alice_read,
                bob_read,
                both,
                record.key_reshared.to_string(),
                stage.clone(),
                cause.clone(),
            ]);
        }
    }
    rows
}

// attack

#[derive(Serialize)]
struct OracleComparison {
    /// Exact per-run detection probability from Born-rule enumeration.
    detection_probability: f64,
    within_wilson: bool,
}

#[derive(Serialize)]
struct AttackPayload<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    stats: DetectionStats,
    oracle: OracleComparison,
}

/// A control trial over the honest channel, stream-compatible with the
/// attacked trials so `--attack none` measures the false-positive rate.
fn honest_trial(cfg: &ProtocolConfig, trial: u32) -> AttackTrial {
    let mut rng = round_rng(cfg.seed, trial as u64);
    let mut tap = HonestChannel;
    let mut next_block = 0;
    let (key, _) = share_key(cfg, &mut tap, &mut next_block, &mut rng);
    let abort = match key {
        Err(a) => Some(a),
        Ok(key) => {
            let msgs = MessagePair::random(cfg.n, &mut rng);
            let out = run_dialogue(cfg, &msgs, key, &mut tap, &mut next_block, &mut rng);
            out.result.aborted
        }
    };
    let detected = abort.is_some_and(|a| a.cause != AbortCause::DistillFailure);
    AttackTrial { trial, detected, abort }
}

fn honest_detection(cfg: &ProtocolConfig, trials: u32) -> DetectionStats {
    let detected = (0..trials)
        .into_par_iter()
        .map(|t| u32::from(honest_trial(cfg, t).detected))
        .sum();
    let (wilson_low, wilson_high) = wilson_interval(detected, trials, WILSON_Z_95);
    DetectionStats {
        trials,
        detected,
        rate: detected as f64 / trials as f64,
        wilson_low,
        wilson_high,
    }
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let protocol = &cfg.protocol;
    let oracle_p = match cfg.attack {
        Some(kind) => oracle::run_detection_probability(protocol, kind),
        None => 0.0,
    };

    let written = match cfg.format {
        OutputFormat::Json => {
            let stats = match cfg.attack {
                Some(kind) => estimate_detection(protocol, kind, cfg.trials),
                None => honest_detection(protocol, cfg.trials),
            };
            eprintln!(
                "attack: {} trials, rate {:.4} vs oracle {:.4}",
                stats.trials, stats.rate, oracle_p
            );
            write_json(
                &cfg.out,
                &AttackPayload {
                    schema: "qdsim.attack.v1",
                    config: cfg,
                    stats,
                    oracle: OracleComparison {
                        detection_probability: oracle_p,
                        within_wilson: stats.wilson_low <= oracle_p
                            && oracle_p <= stats.wilson_high,
                    },
                },
            )
        }
        OutputFormat::Csv => {
            let trials: Vec<AttackTrial> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| match cfg.attack {
                    Some(kind) => run_attack_trial(protocol, kind, t),
                    None => honest_trial(protocol, t),
                })
                .collect();
            let rows: Vec<Vec<String>> = trials
                .iter()
                .map(|t| {
                    let (stage, cause) = match t.abort {
                        Some(a) => (tag(&a.stage), tag(&a.cause)),
                        None => (String::new(), String::new()),
                    };
                    vec![
                        "qdsim.attack.v1".into(),
                        t.trial.to_string(),
                        t.detected.to_string(),
                        stage,
                        cause,
                        oracle_p.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &cfg.out,
                &["schema", "trial", "detected", "abort_stage", "abort_cause", "oracle_detection_probability"],
                &rows,
            )
        }
    };
    eprintln!("attack: finished in {:?}", started.elapsed());
    written
}

// verify

const VERIFY_ANGLES: u32 = 200;

#[derive(Serialize)]
struct VerifyPayload<'a> {
    schema: &'static str,
    seed: u64,
    angles_per_state: u32,
    identities: &'a [IdentityCheck],
    invariance_matched: &'a [InvarianceEntry],
    /// Mismatched code/channel pairs, reported for contrast and never gated.
    invariance_cross_check: &'a [InvarianceEntry],
    all_passed: bool,
}

fn invariance_label(entry: &InvarianceEntry) -> String {
    format!("{} {} under {}", tag(&entry.encoding), tag(&entry.state), tag(&entry.noise_kind))
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let keep = |enc: Encoding| cfg.encoding_filter.is_none_or(|f| f == enc);

    let identities: Vec<IdentityCheck> = identity_suite()
        .into_iter()
        .filter(|c| {
            (c.name.starts_with("dp ") && keep(Encoding::Dp))
                || (c.name.starts_with("r ") && keep(Encoding::R))
        })
        .collect();
    let invariance = df_invariance_suite(cfg.protocol.seed, VERIFY_ANGLES);
    let matched: Vec<InvarianceEntry> =
        invariance.matched.into_iter().filter(|e| keep(e.encoding)).collect();
    let cross: Vec<InvarianceEntry> =
        invariance.cross_check.into_iter().filter(|e| keep(e.encoding)).collect();

    let all_passed =
        identities.iter().all(|c| c.passed) && matched.iter().all(|e| e.invariant);

    let written = if cfg.format_given {
        match cfg.format {
            OutputFormat::Json => write_json(
                &cfg.out,
                &VerifyPayload {
                    schema: "qdsim.verify.v1",
                    seed: cfg.protocol.seed,
                    angles_per_state: VERIFY_ANGLES,
                    identities: &identities,
                    invariance_matched: &matched,
                    invariance_cross_check: &cross,
                    all_passed,
                },
            ),
            OutputFormat::Csv => {
                let mut rows: Vec<Vec<String>> = Vec::new();
                for c in &identities {
                    rows.push(vec![
                        "qdsim.verify.v1".into(),
                        "identity".into(),
                        c.name.into(),
                        c.residual.to_string(),
                        c.passed.to_string(),
                    ]);
                }
                for (section, entries) in
                    [("invariance", &matched), ("cross_check", &cross)]
                {
                    for e in entries {
                        rows.push(vec![
                            "qdsim.verify.v1".into(),
                            section.into(),
                            invariance_label(e),
                            e.max_deviation.to_string(),
                            e.invariant.to_string(),
                        ]);
                    }
                }
                write_csv(&cfg.out, &["schema", "section", "name", "metric", "passed"], &rows)
            }
        }
    } else {
        write_text(&cfg.out, &verify_table(&identities, &matched, &cross, all_passed))
    };
    eprintln!("verify: finished in {:?}", started.elapsed());
    written?;
    if all_passed { Ok(()) } else { Err(CliError::ChecksFailed) }
}

fn verify_table(
    identities: &[IdentityCheck],
    matched: &[InvarianceEntry],
    cross: &[InvarianceEntry],
    all_passed: bool,
) -> String {
    use std::fmt::Write;
    let mut text = String::new();
    let gated = identities.len() + matched.len();
    writeln!(text, "algebra identities (amplitude residual, tolerance 1e-12)").unwrap();
    for c in identities {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(text, "  {mark}  {:<9.2e}  {}", c.residual, c.name).unwrap();
    }
    writeln!(text, "channel invariance ({VERIFY_ANGLES} random angles per state)").unwrap();
    for e in matched {
        let mark = if e.invariant { "PASS" } else { "FAIL" };
        writeln!(text, "  {mark}  {:<9.2e}  {}", e.max_deviation, invariance_label(e)).unwrap();
    }
    if !cross.is_empty() {
        writeln!(text, "mismatched channel, shown for contrast (not gated)").unwrap();
        for e in cross {
            let mark = if e.invariant { "still" } else { "moved" };
            writeln!(text, "  {mark}  {:<9.2e}  {}", e.max_deviation, invariance_label(e))
                .unwrap();
        }
    }
    if all_passed {
        writeln!(text, "verdict: all {gated} checks passed").unwrap();
    } else {
        writeln!(text, "verdict: FAILURES among {gated} checks").unwrap();
    }
    text
}

// report

#[derive(Serialize)]
struct ComparisonRow {
    scheme: &'static str,
    efficiency: f64,
}

#[derive(Serialize)]
struct LeakageSummary {
    mean_entropy_bits: Option<f64>,
    mean_leakage_bits: Option<f64>,
}

#[derive(Serialize)]
struct LeakageSection {
    /// "synthesized" when this run produced the transcript itself.
    source: &'static str,
    announcements: usize,
    honest: LeakageSummary,
    /// What the announcements would reveal if the initial-state bits were
    /// public; absent for supplied transcripts, whose true bits are unknown.
    counterfactual_public_m: Option<LeakageSummary>,
}

#[derive(Serialize)]
struct ReportPayload<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    efficiency: Vec<EfficiencyReport>,
    /// Published figures for two earlier schemes, quoted for context.
    comparison: Vec<ComparisonRow>,
    leakage: LeakageSection,
}

fn summarize(report: &LeakageReport) -> LeakageSummary {
    let mean = |xs: &[f64]| {
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    LeakageSummary {
        mean_entropy_bits: mean(&report.entropy_bits),
        mean_leakage_bits: mean(&report.leakage_bits),
    }
}

fn synthesize_view(protocol: &ProtocolConfig) -> Result<(PublicView, Vec<u8>), CliError> {
    let abort_text = |a: AbortInfo| {
        format!(
            "cannot synthesize an honest transcript: aborted at {} ({})",
            tag(&a.stage),
            tag(&a.cause)
        )
    };
    let mut rng = round_rng(protocol.seed, 0);
    let mut tap = HonestChannel;
    let mut next_block = 0;
    let (key, _) = share_key(protocol, &mut tap, &mut next_block, &mut rng);
    let key = key.map_err(|a| CliError::Config(abort_text(a)))?;
    let msgs = MessagePair::random(protocol.n, &mut rng);
    let outcome = run_dialogue(protocol, &msgs, key, &mut tap, &mut next_block, &mut rng);
    if let Some(a) = outcome.result.aborted {
        return Err(CliError::Config(abort_text(a)));
    }
    let view = outcome.transcript.public_view();
    // the sender's initial-state bits, reconstructed for the counterfactual
    let m_bits: Vec<u8> = view
        .announcements
        .iter()
        .map(|ann| ann.m_final ^ msgs.alice_bits[ann.index] ^ msgs.bob_bits[ann.index])
        .collect();
    Ok((view, m_bits))
}

pub fn cmd_report(cfg: &RunConfig, transcript: &Option<PathBuf>) -> Result<(), CliError> {
    let started = Instant::now();
    let (view, counterfactual_m, source) = match transcript {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Io(format!("cannot read transcript {}: {e}", path.display()))
            })?;
            let view: PublicView = serde_json::from_str(&text).map_err(|e| {
                CliError::Io(format!("unreadable transcript {}: {e}", path.display()))
            })?;
            (view, None, "transcript_file")
        }
        None => {
            let (view, m_bits) = synthesize_view(&cfg.protocol)?;
            (view, Some(m_bits), "synthesized")
        }
    };

    let bad_view =
        |e| CliError::Io(format!("transcript announcements are inconsistent: {e}"));
    let honest = announcement_leakage(&view, None).map_err(bad_view)?;
    let counterfactual = match &counterfactual_m {
        Some(m) => Some(announcement_leakage(&view, Some(m)).map_err(bad_view)?),
        None => None,
    };

    let modes =
        [EfficiencyMode::Qd, EfficiencyMode::QdWithKeyAmortizationOff, EfficiencyMode::QkdOtp];
    let efficiency_rows: Vec<EfficiencyReport> = modes.iter().map(|&m| efficiency(m)).collect();
    let comparison: Vec<ComparisonRow> = comparison_table()
        .into_iter()
        .map(|(scheme, efficiency)| ComparisonRow { scheme, efficiency })
        .collect();
    let leakage = LeakageSection {
        source,
        announcements: view.announcements.len(),
        honest: summarize(&honest),
        counterfactual_public_m: counterfactual.as_ref().map(summarize),
    };

    let written = match cfg.format {
        OutputFormat::Json => write_json(
            &cfg.out,
            &ReportPayload {
                schema: "qdsim.report.v1",
                config: cfg,
                efficiency: efficiency_rows,
                comparison,
                leakage,
            },
        ),
        OutputFormat::Csv => {
            let header = [
                "schema",
                "section",
                "name",
                "secret_bits",
                "qubits_used",
                "classical_bits",
                "efficiency",
                "mean_entropy_bits",
                "mean_leakage_bits",
            ];
            let mut rows: Vec<Vec<String>> = Vec::new();
            for r in &efficiency_rows {
                rows.push(vec![
                    "qdsim.report.v1".into(),
                    "efficiency".into(),
                    tag(&r.mode),
                    r.secret_bits.to_string(),
                    r.qubits_used.to_string(),
                    r.classical_bits.to_string(),
                    r.efficiency.to_string(),
                    String::new(),
                    String::new(),
                ]);
            }
            for r in &comparison {
                rows.push(vec![
                    "qdsim.report.v1".into(),
                    "comparison".into(),
                    r.scheme.into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    r.efficiency.to_string(),
                    String::new(),
                    String::new(),
                ]);
            }
            let leak_row = |name: &str, s: &LeakageSummary| {
                vec![
                    "qdsim.report.v1".into(),
                    "leakage".into(),
                    name.into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    fmt_opt(&s.mean_entropy_bits),
                    fmt_opt(&s.mean_leakage_bits),
                ]
            };
            rows.push(leak_row("honest", &leakage.honest));
            if let Some(cf) = &leakage.counterfactual_public_m {
                rows.push(leak_row("counterfactual_public_m", cf));
            }
            write_csv(&cfg.out, &header, &rows)
        }
    };
    eprintln!("report: finished in {:?}", started.elapsed());
    written
}
