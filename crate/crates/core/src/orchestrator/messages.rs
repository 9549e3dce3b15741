//! Orchestrator <-> station messages and their wire form:
//! `u32 header_len | JSON header | u64 payload_len | payload`, little
//! endian. Parameters and bundles travel as the opaque payload; the header
//! only carries identifiers, round numbers and metric summaries.

use serde::{Deserialize, Serialize};

use super::{EpochSummary, OrchestratorError};
use crate::bundle::{TaskConfig, TrainBundle, TrainRegistry};
use crate::learner::{decode_parameters, encode_parameters};
use crate::partition::StationId;
use crate::station::Station;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Ask a station to pull the named train from the registry, run it and
    /// push the result back.
    PullTrain { train_id: String },
    /// Run the enclosed bundle and hand the result back directly.
    ExecuteTrain { bundle: Vec<u8> },
    /// Answer to either of the above. `bundle` holds the new snapshot, also
    /// when the visit failed.
    TrainResult { bundle: Vec<u8>, trace: Vec<EpochSummary>, train_samples: usize, failure: Option<String> },
    Broadcast { params: Vec<u8>, round: u32, task: TaskConfig },
    ReplicaResult { params: Vec<u8>, sample_count: usize, round: u32, trace: Vec<EpochSummary> },
    ReplicaFailed { round: u32, reason: String },
    /// The station could not interpret or route the request.
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub run_id: String,
    pub seq: u64,
    pub station: StationId,
    pub message: Message,
}

#[derive(Serialize, Deserialize)]
struct Header {
    run_id: String,
    seq: u64,
    station: StationId,
    #[serde(flatten)]
    body: HeaderBody,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum HeaderBody {
    PullTrain { train_id: String },
    ExecuteTrain,
    TrainResult { trace: Vec<EpochSummary>, train_samples: usize, failure: Option<String> },
    Broadcast { round: u32, task: TaskConfig },
    ReplicaResult { sample_count: usize, round: u32, trace: Vec<EpochSummary> },
    ReplicaFailed { round: u32, reason: String },
    Rejected { reason: String },
}

pub fn encode_envelope(envelope: &Envelope) -> Vec<u8> {
    let (body, payload): (HeaderBody, &[u8]) = match &envelope.message {
        Message::PullTrain { train_id } => (HeaderBody::PullTrain { train_id: train_id.clone() }, &[]),
        Message::ExecuteTrain { bundle } => (HeaderBody::ExecuteTrain, bundle),
        Message::TrainResult { bundle, trace, train_samples, failure } => (
            HeaderBody::TrainResult { trace: trace.clone(), train_samples: *train_samples, failure: failure.clone() },
            bundle,
        ),
        Message::Broadcast { params, round, task } => (HeaderBody::Broadcast { round: *round, task: task.clone() }, params),
        Message::ReplicaResult { params, sample_count, round, trace } => {
            (HeaderBody::ReplicaResult { sample_count: *sample_count, round: *round, trace: trace.clone() }, params)
        }
        Message::ReplicaFailed { round, reason } => (HeaderBody::ReplicaFailed { round: *round, reason: reason.clone() }, &[]),
        Message::Rejected { reason } => (HeaderBody::Rejected { reason: reason.clone() }, &[]),
    };
    let header = Header { run_id: envelope.run_id.clone(), seq: envelope.seq, station: envelope.station, body };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, OrchestratorError> {
    let wire = |m: &str| OrchestratorError::Wire(m.to_owned());
    let header_len = u32::from_le_bytes(bytes.get(..4).ok_or_else(|| wire("truncated header length"))?.try_into().unwrap()) as usize;
    let json_end = 4usize.checked_add(header_len).ok_or_else(|| wire("header length overflow"))?;
    let json = bytes.get(4..json_end).ok_or_else(|| wire("truncated header"))?;
    let len_bytes = bytes.get(json_end..json_end + 8).ok_or_else(|| wire("truncated payload length"))?;
    let payload_len = u64::from_le_bytes(len_bytes.try_into().unwrap());
    let payload = &bytes[json_end + 8..];
    if payload.len() as u64 != payload_len {
        return Err(wire("payload length mismatch"));
    }
    let header: Header = serde_json::from_slice(json).map_err(|e| OrchestratorError::Wire(e.to_string()))?;
    let payload = payload.to_vec();
    let expect_empty = |p: &Vec<u8>| if p.is_empty() { Ok(()) } else { Err(wire("unexpected payload")) };
    let message = match header.body {
        HeaderBody::PullTrain { train_id } => {
            expect_empty(&payload)?;
            Message::PullTrain { train_id }
        }
        HeaderBody::ExecuteTrain => Message::ExecuteTrain { bundle: payload },
        HeaderBody::TrainResult { trace, train_samples, failure } => {
            Message::TrainResult { bundle: payload, trace, train_samples, failure }
        }
        HeaderBody::Broadcast { round, task } => Message::Broadcast { params: payload, round, task },
        HeaderBody::ReplicaResult { sample_count, round, trace } => {
            Message::ReplicaResult { params: payload, sample_count, round, trace }
        }
        HeaderBody::ReplicaFailed { round, reason } => {
            expect_empty(&payload)?;
            Message::ReplicaFailed { round, reason }
        }
        HeaderBody::Rejected { reason } => {
            expect_empty(&payload)?;
            Message::Rejected { reason }
        }
    };
    Ok(Envelope { run_id: header.run_id, seq: header.seq, station: header.station, message })
}

/// Every byte string that crossed a link, in sequence order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WireLog {
    pub messages: Vec<Vec<u8>>,
}

impl WireLog {
    pub fn record(&mut self, bytes: Vec<u8>) {
        self.messages.push(bytes);
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(Vec::len).sum()
    }

    /// True when `needle` occurs inside any logged message.
    pub fn contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty() && self.messages.iter().any(|m| m.windows(needle.len()).any(|w| w == needle))
    }
}

/// Transport to one station. Requests and responses are wire bytes.
pub trait StationLink: Sync {
    fn station_id(&self) -> StationId;
    fn call(&self, request: &[u8]) -> Vec<u8>;
}

/// Direct in-process transport: the station handles the request on the
/// caller's thread.
pub struct InProcessLink<'a> {
    station: &'a Station,
    registry: &'a TrainRegistry,
}

impl<'a> InProcessLink<'a> {
    pub fn new(station: &'a Station, registry: &'a TrainRegistry) -> Self {
        Self { station, registry }
    }
}

impl StationLink for InProcessLink<'_> {
    fn station_id(&self) -> StationId {
        self.station.id()
    }

    fn call(&self, request: &[u8]) -> Vec<u8> {
        serve(self.station, self.registry, request)
    }
}

/// Station-side request handler. Always answers; problems come back as
/// `Rejected`, `ReplicaFailed` or a failure inside `TrainResult`.
pub fn serve(station: &Station, registry: &TrainRegistry, request: &[u8]) -> Vec<u8> {
    let reply = |run_id: String, seq: u64, message| {
        encode_envelope(&Envelope { run_id, seq: seq + 1, station: station.id(), message })
    };
    let envelope = match decode_envelope(request) {
        Ok(e) => e,
        Err(e) => return reply(String::new(), 0, Message::Rejected { reason: e.to_string() }),
    };
    let Envelope { run_id, seq, message, .. } = envelope;
    let message = match message {
        Message::PullTrain { train_id } => match registry.pull(&train_id) {
            Ok(bundle) => {
                let result = execute(station, &bundle);
                if let Message::TrainResult { bundle: bytes, .. } = &result {
                    if let Err(e) = TrainBundle::from_bytes(bytes).and_then(|b| registry.push(&b)) {
                        return reply(run_id, seq, Message::Rejected { reason: format!("push failed: {e}") });
                    }
                }
                result
            }
            Err(e) => Message::Rejected { reason: e.to_string() },
        },
        Message::ExecuteTrain { bundle } => match TrainBundle::from_bytes(&bundle) {
            Ok(bundle) => execute(station, &bundle),
            Err(e) => Message::Rejected { reason: e.to_string() },
        },
        Message::Broadcast { params, round, task } => match decode_parameters(&params) {
            Ok(params) => match station.train_replica(&params, &task) {
                Ok(out) => Message::ReplicaResult {
                    params: encode_parameters(&out.params),
                    sample_count: out.sample_count,
                    round,
                    trace: out.epochs.iter().map(EpochSummary::from).collect(),
                },
                Err(e) => Message::ReplicaFailed { round, reason: e.to_string() },
            },
            Err(e) => Message::ReplicaFailed { round, reason: e.to_string() },
        },
        other => Message::Rejected { reason: format!("unexpected request {}", kind(&other)) },
    };
    reply(run_id, seq, message)
}

fn execute(station: &Station, bundle: &TrainBundle) -> Message {
    match station.execute_train(bundle) {
        Ok(exec) => {
            let bytes = match exec.bundle.to_bytes() {
                Ok(b) => b,
                Err(e) => return Message::Rejected { reason: e.to_string() },
            };
            match exec.outcome {
                Ok(run) => Message::TrainResult {
                    bundle: bytes,
                    trace: run.epochs.iter().map(EpochSummary::from).collect(),
                    train_samples: run.train_samples,
                    failure: None,
                },
                Err(reason) => Message::TrainResult { bundle: bytes, trace: Vec::new(), train_samples: 0, failure: Some(reason) },
            }
        }
        Err(e) => Message::Rejected { reason: e.to_string() },
    }
}

fn kind(message: &Message) -> &'static str {
    match message {
        Message::PullTrain { .. } => "pull_train",
        Message::ExecuteTrain { .. } => "execute_train",
        Message::TrainResult { .. } => "train_result",
        Message::Broadcast { .. } => "broadcast",
        Message::ReplicaResult { .. } => "replica_result",
        Message::ReplicaFailed { .. } => "replica_failed",
        Message::Rejected { .. } => "rejected",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn envelope(message: Message) -> Envelope {
        Envelope { run_id: "run-1".into(), seq: 7, station: StationId(2), message }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_envelope(&envelope(Message::PullTrain { train_id: "t".into() }));
        let header_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[4..4 + header_len]).unwrap();
        assert_eq!(header["type"], "pull_train");
        assert_eq!(header["run_id"], "run-1");
        assert_eq!(header["seq"], 7);
        assert_eq!(&bytes[4 + header_len..], &0u64.to_le_bytes());
    }

    #[test]
    fn round_trips_each_kind() {
        let trace = vec![EpochSummary { train_loss: 0.1 + 0.2, mean_accuracy: Some(1.0 / 3.0), mean_recall: None }];
        let task = crate::bundle::tests::task();
        for m in [
            Message::PullTrain { train_id: "abc".into() },
            Message::ExecuteTrain { bundle: vec![1, 2, 3] },
            Message::TrainResult { bundle: vec![9; 40], trace: trace.clone(), train_samples: 12, failure: None },
            Message::TrainResult { bundle: vec![], trace: vec![], train_samples: 0, failure: Some("boom".into()) },
            Message::Broadcast { params: vec![4; 10], round: 3, task },
            Message::ReplicaResult { params: vec![5; 3], sample_count: 8, round: 3, trace },
            Message::ReplicaFailed { round: 1, reason: "x".into() },
            Message::Rejected { reason: "y".into() },
        ] {
            let e = envelope(m);
            assert_eq!(decode_envelope(&encode_envelope(&e)).unwrap(), e);
        }
    }

    #[test]
    fn rejects_malformed() {
        let bytes = encode_envelope(&envelope(Message::ExecuteTrain { bundle: vec![1, 2, 3] }));
        for cut in 0..bytes.len() {
            assert!(decode_envelope(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_envelope(&extra).is_err());
    }

    #[test]
    fn wire_log_search() {
        let mut log = WireLog::default();
        log.record(vec![1, 2, 3, 4]);
        assert!(log.contains(&[2, 3]));
        assert!(!log.contains(&[3, 2]));
        assert!(!log.contains(&[]));
        assert_eq!(log.total_bytes(), 4);
    }

    proptest! {
        #[test]
        fn payload_round_trip(payload in prop::collection::vec(any::<u8>(), 0..300), seq in any::<u64>(), round in any::<u32>()) {
            let e = Envelope { run_id: "r".into(), seq, station: StationId(1), message: Message::ReplicaResult { params: payload, sample_count: 1, round, trace: vec![] } };
            prop_assert_eq!(decode_envelope(&encode_envelope(&e)).unwrap(), e);
        }
    }
}
