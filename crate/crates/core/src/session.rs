//! Drives one party's state machine over a [`Channel`].
//!
//! | step | sender | message |
//! |---|---|---|
//! | 1 | P1 | `session_hello` |
//! | 2 | P2 | `he_public_key` |
//! | 3 | P1 | `p1_encrypted` |
//! | 4 | P2 | `p1_double` |
//! | 5 | P2 | `p2_encrypted`, `p2_digest` |
//! | 6 | P1 | `aggregates` |
//! | 7 | P2 | `masked_plain` (masked variant with encrypted output only) |
//!
//! A party that fails sends `p1_abort` or `p2_abort` carrying an error code
//! and stops; the peer surfaces it as [`ProtocolError::PeerAborted`].

use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::estimators::{AggregateReport, EstimatorSpec};
use crate::privatizer::DemographicRecord;
use crate::protocol::wire::{self, AggregateBody, AggregatesMsg};
use crate::protocol::{
    names, GovernancePolicy, KeyMode, OutputMode, P1EncRow, P1State, P2EncRow, P2Input, P2State, ProtocolError,
    SessionHello,
};
use crate::transport::{Channel, Direction, TransportError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1800);

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Wall-clock time per named step, in execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseTimings(pub Vec<(&'static str, Duration)>);

impl PhaseTimings {
    fn record<T>(&mut self, name: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((name, start.elapsed()));
        out
    }

    pub fn total(&self) -> Duration {
        self.0.iter().map(|(_, d)| *d).sum()
    }

    pub fn get(&self, name: &str) -> Option<Duration> {
        self.0.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
    }
}

#[derive(Clone, Debug)]
pub struct P1Params {
    pub estimator: EstimatorSpec,
    pub output_mode: OutputMode,
    pub min_modulus_bits: u32,
    pub timeout: Duration,
}

impl P1Params {
    pub fn new(estimator: EstimatorSpec, output_mode: OutputMode, key_mode: KeyMode) -> Self {
        P1Params { estimator, output_mode, min_modulus_bits: key_mode.modulus_bits(), timeout: DEFAULT_TIMEOUT }
    }
}

#[derive(Clone, Debug)]
pub struct P2Params {
    pub key_mode: KeyMode,
    pub governance_key: [u8; 32],
    pub timeout: Duration,
}

#[derive(Clone, Debug)]
pub struct PartyOutcome {
    pub report: Option<AggregateReport>,
    pub timings: PhaseTimings,
    /// Serialized party state after every step, for hygiene scans.
    pub snapshots: Vec<(&'static str, Vec<u8>)>,
    pub joined_rows: Option<usize>,
}

struct Link<'a> {
    channel: &'a Channel,
    outgoing: Direction,
    incoming: Direction,
    peer_abort: &'static str,
    own_abort: &'static str,
    timeout: Duration,
}

impl Link<'_> {
    fn send(&self, name: &str, records: Vec<Vec<u8>>) -> Result<(), SessionError> {
        Ok(self.channel.send_batch(self.outgoing, name, records)?)
    }

    fn recv(&self, name: &'static str) -> Result<Vec<Vec<u8>>, SessionError> {
        let (got, records) = self.channel.recv_any(self.incoming, &[name, self.peer_abort], self.timeout)?;
        if got == self.peer_abort {
            let (code, detail) = wire::decode_abort(&records);
            return Err(ProtocolError::PeerAborted { code, detail }.into());
        }
        Ok(records)
    }

    /// Tells the peer why we stopped. Best effort: the original error wins.
    fn abort(&self, err: &SessionError) {
        let (code, detail) = match err {
            SessionError::Protocol(ProtocolError::PeerAborted { .. }) => return,
            SessionError::Protocol(e) => (e.abort_code(), e.to_string()),
            SessionError::Transport(e) => ("transport".to_string(), e.to_string()),
        };
        let _ = self.channel.send_batch(self.outgoing, self.own_abort, wire::encode_abort(&code, &detail));
    }
}

/// P1's side of a session. `table` is consumed and erased.
pub fn run_p1<R: RngCore + CryptoRng>(
    channel: &Channel,
    params: &P1Params,
    policy: &mut GovernancePolicy,
    table: Vec<DemographicRecord>,
    rng: &mut R,
) -> Result<PartyOutcome, SessionError> {
    let link = Link {
        channel,
        outgoing: Direction::P1ToP2,
        incoming: Direction::P2ToP1,
        peer_abort: names::P2_ABORT,
        own_abort: names::P1_ABORT,
        timeout: params.timeout,
    };
    let result = p1_steps(&link, params, policy, table, rng);
    if let Err(e) = &result {
        link.abort(e);
    }
    result
}

fn p1_steps<R: RngCore + CryptoRng>(
    link: &Link<'_>,
    params: &P1Params,
    policy: &mut GovernancePolicy,
    table: Vec<DemographicRecord>,
    rng: &mut R,
) -> Result<PartyOutcome, SessionError> {
    let mut t = PhaseTimings::default();
    let mut snapshots = Vec::new();
    let mut p1 = t.record("keygen", || {
        P1State::new(link.channel.session_id(), params.estimator, params.output_mode, params.min_modulus_bits, rng)
    })?;
    link.send(names::SESSION_HELLO, p1.hello().encode())?;
    snapshots.push(("keygen", p1.snapshot_bytes()));

    let enc = t.record("p1_encrypt", || p1.p1_encrypt(table, rng))?;
    t.record("p1_send", || link.send(names::P1_ENCRYPTED, enc.iter().map(P1EncRow::to_record).collect()))?;
    drop(enc);
    snapshots.push(("p1_encrypt", p1.snapshot_bytes()));

    let pk = t.record("await_public_key", || -> Result<_, SessionError> {
        Ok(wire::decode_public_key(&link.recv(names::HE_PUBLIC_KEY)?)?)
    })?;
    p1.set_public_key(pk.clone())?;
    let arity = params.estimator.arity();
    let (shuffled, p2_rows, digests) = t.record("await_p2", || -> Result<_, SessionError> {
        let shuffled = link
            .recv(names::P1_DOUBLE)?
            .iter()
            .map(|r| P1EncRow::from_record(names::P1_DOUBLE, r))
            .collect::<Result<Vec<_>, _>>()?;
        let p2_rows = link
            .recv(names::P2_ENCRYPTED)?
            .iter()
            .map(|r| P2EncRow::from_record(r, &pk, arity))
            .collect::<Result<Vec<_>, _>>()?;
        let digests = wire::decode_digests(&link.recv(names::P2_DIGEST)?)?;
        Ok((shuffled, p2_rows, digests))
    })?;

    let joined = t.record("p1_join", || p1.p1_join(policy, shuffled, p2_rows, &digests))?;
    snapshots.push(("p1_join", p1.snapshot_bytes()));
    let joined_rows = joined.len();
    let msg = t.record("p1_compute", || p1.p1_compute(&joined, rng))?;
    drop(joined);
    link.send(names::AGGREGATES, msg.encode(&pk)?)?;
    snapshots.push(("p1_compute", p1.snapshot_bytes()));

    let report = if params.output_mode == OutputMode::Masked && matches!(msg.body, AggregateBody::Groups(_)) {
        let masked = t.record("await_masked", || -> Result<_, SessionError> {
            Ok(wire::decode_masked(&link.recv(names::MASKED_PLAIN)?, &pk)?)
        })?;
        Some(t.record("p1_unmask", || p1.p1_unmask(masked))?)
    } else {
        p1.report().cloned()
    };
    snapshots.push(("done", p1.snapshot_bytes()));
    Ok(PartyOutcome { report, timings: t, snapshots, joined_rows: Some(joined_rows) })
}

/// P2's side of a session. `values` builds P2's rows once the requested
/// estimator is known.
pub fn run_p2<R: RngCore + CryptoRng>(
    channel: &Channel,
    params: &P2Params,
    values: impl FnOnce(&EstimatorSpec) -> Vec<P2Input>,
    rng: &mut R,
) -> Result<PartyOutcome, SessionError> {
    let link = Link {
        channel,
        outgoing: Direction::P2ToP1,
        incoming: Direction::P1ToP2,
        peer_abort: names::P1_ABORT,
        own_abort: names::P2_ABORT,
        timeout: params.timeout,
    };
    let result = p2_steps(&link, params, values, rng);
    if let Err(e) = &result {
        link.abort(e);
    }
    result
}

fn p2_steps<R: RngCore + CryptoRng>(
    link: &Link<'_>,
    params: &P2Params,
    values: impl FnOnce(&EstimatorSpec) -> Vec<P2Input>,
    rng: &mut R,
) -> Result<PartyOutcome, SessionError> {
    let mut t = PhaseTimings::default();
    let mut snapshots = Vec::new();
    let hello = t.record("await_hello", || -> Result<_, SessionError> {
        Ok(SessionHello::decode(&link.recv(names::SESSION_HELLO)?)?)
    })?;
    let mut p2 = t.record("keygen", || -> Result<_, SessionError> {
        let he = params.key_mode.keypair(rng)?;
        Ok(P2State::new(link.channel.session_id(), hello, he, params.governance_key, rng)?)
    })?;
    let pk = p2.public_key().clone();
    link.send(names::HE_PUBLIC_KEY, wire::encode_public_key(&pk))?;
    snapshots.push(("keygen", p2.snapshot_bytes()));

    let incoming = t.record("await_p1", || -> Result<_, SessionError> {
        Ok(link
            .recv(names::P1_ENCRYPTED)?
            .iter()
            .map(|r| P1EncRow::from_record(names::P1_ENCRYPTED, r))
            .collect::<Result<Vec<_>, _>>()?)
    })?;
    let doubled = t.record("p2_double_encrypt_shuffle", || p2.p2_double_encrypt_shuffle(incoming, rng))?;
    link.send(names::P1_DOUBLE, doubled.iter().map(P1EncRow::to_record).collect())?;
    drop(doubled);
    snapshots.push(("p2_double_encrypt_shuffle", p2.snapshot_bytes()));

    let values = values(&p2.hello().estimator);
    let (rows, digests) = t.record("p2_encrypt", || p2.p2_encrypt(&values, rng))?;
    drop(values);
    t.record("p2_send", || -> Result<_, SessionError> {
        let records = rows.iter().map(|r| r.to_record(&pk)).collect::<Result<Vec<_>, _>>()?;
        link.send(names::P2_ENCRYPTED, records)?;
        link.send(names::P2_DIGEST, wire::encode_digests(&digests))
    })?;
    drop(rows);
    snapshots.push(("p2_encrypt", p2.snapshot_bytes()));

    let msg = t.record("await_aggregates", || -> Result<_, SessionError> {
        Ok(AggregatesMsg::decode(&link.recv(names::AGGREGATES)?, &pk)?)
    })?;
    let report = match (&msg.body, p2.hello().output_mode) {
        (AggregateBody::Groups(_), OutputMode::Masked) => {
            let masked = t.record("p2_decrypt_masked", || p2.p2_decrypt_masked(&msg))?;
            link.send(names::MASKED_PLAIN, wire::encode_masked(&masked))?;
            None
        }
        _ => t.record("p2_finalize", || p2.p2_finalize(&msg))?,
    };
    snapshots.push(("done", p2.snapshot_bytes()));
    Ok(PartyOutcome { report, timings: t, snapshots, joined_rows: None })
}

/// Both parties on two threads of this process.
#[derive(Clone, Debug)]
pub struct ThreadedSession {
    pub p1: P1Params,
    pub p2: P2Params,
    pub policy: GovernancePolicy,
}

impl ThreadedSession {
    /// Runs P1 on `channels.0` and P2 on `channels.1`, which must name the
    /// same session directory. Returns `(p1, p2)`.
    pub fn run<R1, R2>(
        mut self,
        channels: (Channel, Channel),
        table: Vec<DemographicRecord>,
        values: Vec<P2Input>,
        mut rng1: R1,
        mut rng2: R2,
    ) -> (Result<PartyOutcome, SessionError>, Result<PartyOutcome, SessionError>)
    where
        R1: RngCore + CryptoRng + Send,
        R2: RngCore + CryptoRng + Send,
    {
        let (c1, c2) = channels;
        let p2_params = self.p2.clone();
        std::thread::scope(|s| {
            let h2 = s.spawn(|| run_p2(&c2, &p2_params, |_| values, &mut rng2));
            let r1 = run_p1(&c1, &self.p1, &mut self.policy, table, &mut rng1);
            let r2 = h2.join().expect("P2 thread panicked");
            (r1, r2)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_report;
    use crate::race::ProbVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn data(n: usize, seed: u64) -> (Vec<DemographicRecord>, Vec<P2Input>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let table = (0..n)
            .map(|i| {
                let w: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
                DemographicRecord::new(format!("id{i}"), ProbVector::normalized(w).unwrap())
            })
            .collect();
        let values = (n / 4..n + 10)
            .map(|i| P2Input { member_id: format!("id{i}"), values: vec![rng.gen_range(0.0..1.0)] })
            .collect();
        (table, values)
    }

    fn channels(root: &std::path::Path, sid: &str) -> (Channel, Channel) {
        let p = Duration::from_millis(2);
        (
            Channel::open(root, sid).unwrap().with_poll_interval(p),
            Channel::open(root, sid).unwrap().with_poll_interval(p),
        )
    }

    fn p2_params() -> P2Params {
        P2Params { key_mode: KeyMode::Test1024, governance_key: [9; 32], timeout: Duration::from_secs(60) }
    }

    fn p1_params(mode: OutputMode) -> P1Params {
        P1Params { timeout: Duration::from_secs(60), ..P1Params::new(EstimatorSpec::output_metric(), mode, KeyMode::Test1024) }
    }

    #[test]
    fn both_variants_complete_and_leave_the_channel_empty() {
        for mode in [OutputMode::P2Learns, OutputMode::Masked] {
            let root = tempfile::tempdir().unwrap();
            let (a, b) = channels(root.path(), "s");
            let (table, values) = data(200, 1);
            let expected = oracle_report(&EstimatorSpec::output_metric(), &table, &values).unwrap();
            let session =
                ThreadedSession { p1: p1_params(mode), p2: p2_params(), policy: GovernancePolicy::new(10).unwrap() };
            let (r1, r2) =
                session.run((a, b), table, values, ChaCha20Rng::seed_from_u64(2), ChaCha20Rng::seed_from_u64(3));
            let (r1, r2) = (r1.unwrap(), r2.unwrap());
            let report = match mode {
                OutputMode::P2Learns => {
                    assert!(r1.report.is_none());
                    r2.report.unwrap()
                }
                OutputMode::Masked => {
                    assert!(r2.report.is_none());
                    r1.report.unwrap()
                }
            };
            assert!(report.max_abs_diff(&expected).unwrap() <= 2e-6);
            assert_eq!(r1.joined_rows, Some(150));
            assert!(r1.timings.get("p1_join").is_some());
            assert!(r2.timings.get("p2_encrypt").is_some());
            assert_eq!(std::fs::read_dir(root.path().join("s")).unwrap().count(), 0);
        }
    }

    #[test]
    fn governance_failure_reaches_p2() {
        let root = tempfile::tempdir().unwrap();
        let (a, b) = channels(root.path(), "g");
        let (table, values) = data(40, 4);
        let session = ThreadedSession {
            p1: p1_params(OutputMode::P2Learns),
            p2: p2_params(),
            policy: GovernancePolicy::new(1000).unwrap(),
        };
        let (r1, r2) = session.run((a, b), table, values, ChaCha20Rng::seed_from_u64(5), ChaCha20Rng::seed_from_u64(6));
        match r1 {
            Err(SessionError::Protocol(ProtocolError::Governance(_))) => {}
            other => panic!("{other:?}"),
        }
        match r2 {
            Err(SessionError::Protocol(ProtocolError::PeerAborted { code, .. })) => {
                assert_eq!(code, "governance.too_few_rows")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_sessions_time_out() {
        let root = tempfile::tempdir().unwrap();
        let a = Channel::open(root.path(), "one").unwrap().with_poll_interval(Duration::from_millis(2));
        let b = Channel::open(root.path(), "two").unwrap().with_poll_interval(Duration::from_millis(2));
        let (table, values) = data(10, 7);
        let short = Duration::from_millis(300);
        let session = ThreadedSession {
            p1: P1Params { timeout: short, ..p1_params(OutputMode::P2Learns) },
            p2: P2Params { timeout: short, ..p2_params() },
            policy: GovernancePolicy::new(1).unwrap(),
        };
        let (r1, r2) = session.run((a, b), table, values, ChaCha20Rng::seed_from_u64(8), ChaCha20Rng::seed_from_u64(9));
        assert!(matches!(r1, Err(SessionError::Transport(TransportError::Timeout { .. }))));
        assert!(matches!(r2, Err(SessionError::Transport(TransportError::Timeout { .. }))));
    }
}
