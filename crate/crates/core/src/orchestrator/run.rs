use log::{info, warn};

use super::messages::{decode_envelope, encode_envelope, Envelope, Message, StationLink, WireLog};
use super::{aggregate, EpochSummary, EventKind, ExperimentPlan, OrchestratorError, Policy, ReplicaTrace, RunRecord, Segment, Weighting};
use crate::bundle::{commit_round, create_train, TrainBundle, TrainRegistry, VisitRecord};
use crate::learner::{decode_parameters, encode_parameters, evaluate, train_local, LabeledSample, ModelParameters, SampleSource};
use crate::partition::StationId;

/// A finished run: its record and the final global model.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub params: ModelParameters,
}

/// Drives trains over a fixed set of station links. Every message that
/// crosses a link is kept in the wire log.
pub struct Orchestrator<'a> {
    run_id: String,
    registry: &'a TrainRegistry,
    links: Vec<&'a dyn StationLink>,
    wire: WireLog,
    seq: u64,
}

impl<'a> Orchestrator<'a> {
    pub fn new(run_id: impl Into<String>, registry: &'a TrainRegistry, links: Vec<&'a dyn StationLink>) -> Self {
        Self { run_id: run_id.into(), registry, links, wire: WireLog::default(), seq: 0 }
    }

    pub fn wire(&self) -> &WireLog {
        &self.wire
    }

    pub fn into_wire(self) -> WireLog {
        self.wire
    }

    fn link(&self, id: StationId) -> Result<&'a dyn StationLink, OrchestratorError> {
        self.links.iter().copied().find(|l| l.station_id() == id).ok_or(OrchestratorError::UnknownStation(id))
    }

    fn request(&mut self, station: StationId, message: Message) -> (u64, Vec<u8>) {
        let seq = self.seq;
        self.seq += 2;
        (seq, encode_envelope(&Envelope { run_id: self.run_id.clone(), seq, station, message }))
    }

    fn accept(&mut self, seq: u64, request: Vec<u8>, response: Vec<u8>) -> Result<Envelope, OrchestratorError> {
        self.wire.record(request);
        let envelope = decode_envelope(&response);
        self.wire.record(response);
        let envelope = envelope?;
        if let Message::Rejected { reason } = &envelope.message {
            return Err(OrchestratorError::Wire(format!("station rejected request: {reason}")));
        }
        if envelope.run_id != self.run_id || envelope.seq != seq + 1 {
            return Err(OrchestratorError::Wire(format!(
                "reply {}#{} does not answer {}#{}",
                envelope.run_id, envelope.seq, self.run_id, seq
            )));
        }
        Ok(envelope)
    }

    /// Sequential policy: the train visits every station on the route,
    /// `cycles` times over, pulling from and pushing to the registry.
    pub fn run_iil(&mut self, plan: &ExperimentPlan, held_out: &[LabeledSample]) -> Result<RunOutput, OrchestratorError> {
        if !matches!(plan.policy, Policy::Iil | Policy::CyclicIil) {
            return Err(OrchestratorError::InvalidPlan(format!("{} is not a sequential policy", plan.policy.name())));
        }
        plan.validate()?;
        for id in &plan.stations {
            self.link(*id)?;
        }
        let mut record = RunRecord::new(self.run_id.clone(), plan.policy);
        let train_id = format!("{}-{}", self.run_id, plan.policy.name());
        let mut current = create_train(train_id.clone(), plan.effective_task(), plan.stations.clone(), plan.cycles, plan.seed)?;
        self.registry.push(&current)?;
        record.log(EventKind::TrainCreated { train_id: train_id.clone() });

        while let Some(station) = current.next_station() {
            let visit = current.manifest.cursor;
            let outcome = self.visit(station, &train_id, &current);
            let (next, trace) = match outcome {
                Ok(v) => v,
                Err(reason) => return Err(abort(record, Some(station), reason)),
            };
            info!("{train_id}: visit {} at {station} done", visit + 1);
            record.segments.push(Segment { label: format!("visit {} {station}", visit + 1), station: Some(station), index: visit, epochs: trace });
            record.log(EventKind::VisitCompleted { station, visit });
            if let Some(to) = next.next_station() {
                record.log(EventKind::Hop { from: station, to });
            }
            current = next;
        }

        let head = self.registry.pull(&train_id)?;
        if head.digest() != current.digest() {
            return Err(OrchestratorError::Wire("registry head differs from the last returned snapshot".into()));
        }
        finish(record, current.parameters, held_out)
    }

    fn visit(&mut self, station: StationId, train_id: &str, current: &TrainBundle) -> Result<(TrainBundle, Vec<EpochSummary>), String> {
        let link = self.link(station).map_err(|e| e.to_string())?;
        let (seq, request) = self.request(station, Message::PullTrain { train_id: train_id.to_owned() });
        let response = link.call(&request);
        let envelope = self.accept(seq, request, response).map_err(|e| e.to_string())?;
        let Message::TrainResult { bundle, trace, failure, .. } = envelope.message else {
            return Err("unexpected reply to pull_train".into());
        };
        if let Some(reason) = failure {
            return Err(reason);
        }
        let next = TrainBundle::from_bytes(&bundle).map_err(|e| e.to_string())?;
        if next.manifest.train_id != current.manifest.train_id || next.manifest.cursor != current.manifest.cursor + 1 {
            return Err("returned snapshot does not advance the train by one visit".into());
        }
        Ok((next, trace))
    }

    /// Parallel policy: every round broadcasts the global model, trains a
    /// replica at each station and averages the replicas.
    pub fn run_fl(&mut self, plan: &ExperimentPlan, held_out: &[LabeledSample]) -> Result<RunOutput, OrchestratorError> {
        if plan.policy != Policy::Fl {
            return Err(OrchestratorError::InvalidPlan(format!("{} is not the federated policy", plan.policy.name())));
        }
        plan.validate()?;
        let links: Vec<&dyn StationLink> = plan.stations.iter().map(|id| self.link(*id)).collect::<Result<_, _>>()?;
        let task = plan.effective_task();
        let mut record = RunRecord::new(self.run_id.clone(), plan.policy);
        let train_id = format!("{}-{}", self.run_id, plan.policy.name());
        let mut bundle = create_train(train_id.clone(), task.clone(), plan.stations.clone(), plan.rounds, plan.seed)?;
        self.registry.push(&bundle)?;
        record.log(EventKind::TrainCreated { train_id });

        for round in 1..=plan.rounds {
            let params = encode_parameters(&bundle.parameters);
            let requests: Vec<(u64, Vec<u8>)> = plan
                .stations
                .iter()
                .map(|id| self.request(*id, Message::Broadcast { params: params.clone(), round, task: task.clone() }))
                .collect();
            let responses = dispatch(&links, &requests);

            let mut replicas = Vec::with_capacity(links.len());
            let mut failure = None;
            for ((&station, (seq, request)), response) in plan.stations.iter().zip(requests).zip(responses) {
                match self.accept(seq, request, response).map(|e| e.message) {
                    Ok(Message::ReplicaResult { params, sample_count, round: r, trace }) if r == round => {
                        match decode_parameters(&params) {
                            Ok(p) => replicas.push((station, p, sample_count, trace)),
                            Err(e) => failure = failure.or(Some((station, e.to_string()))),
                        }
                    }
                    Ok(Message::ReplicaFailed { reason, .. }) => failure = failure.or(Some((station, reason))),
                    Ok(_) => failure = failure.or(Some((station, "unexpected reply to broadcast".into()))),
                    Err(e) => failure = failure.or(Some((station, e.to_string()))),
                }
            }
            if let Some((station, reason)) = failure {
                return Err(abort(record, Some(station), format!("round {round}: {reason}")));
            }

            let weights: Vec<f64> = match plan.weighting {
                Weighting::Uniform => vec![1.0; replicas.len()],
                Weighting::BySampleCount => replicas.iter().map(|r| r.2 as f64).collect(),
            };
            let params: Vec<ModelParameters> = replicas.iter().map(|r| r.1.clone()).collect();
            let global = match aggregate(&params, &weights) {
                Ok(g) => g,
                Err(e) => return Err(abort(record, None, e.to_string())),
            };
            let visits = replicas
                .iter()
                .enumerate()
                .map(|(i, (station, _, count, trace))| VisitRecord {
                    station: *station,
                    visit: bundle.manifest.cursor + i as u32,
                    epochs: trace.len() as u32,
                    train_samples: *count,
                    final_loss: trace.last().map(|e| e.train_loss),
                    wall_time_ms: 0,
                })
                .collect();
            bundle = commit_round(&bundle, global, visits, None)?;
            self.registry.push(&bundle)?;

            let counts: Vec<usize> = replicas.iter().map(|r| r.2).collect();
            let traces: Vec<&[EpochSummary]> = replicas.iter().map(|r| r.3.as_slice()).collect();
            record.segments.push(Segment { label: format!("round {round}"), station: None, index: round - 1, epochs: mean_trace(&traces, &counts) });
            for (station, _, sample_count, trace) in replicas {
                record.replicas.push(ReplicaTrace { round, station, sample_count, epochs: trace });
            }
            record.log(EventKind::RoundComplete { round });
        }
        finish(record, bundle.parameters, held_out)
    }
}

/// Pooled-data baseline: one local training session over `source`.
pub fn run_centralized(
    run_id: &str,
    plan: &ExperimentPlan,
    source: &dyn SampleSource,
    held_out: &[LabeledSample],
) -> Result<RunOutput, OrchestratorError> {
    plan.validate()?;
    let task = plan.effective_task();
    let mut record = RunRecord::new(run_id, Policy::Centralized);
    let init = ModelParameters::initialize(&task.model, plan.seed);
    let outcome = train_local(&init, source, &task.training)?;
    record.segments.push(Segment {
        label: "pooled".into(),
        station: None,
        index: 0,
        epochs: outcome.epochs.iter().map(EpochSummary::from).collect(),
    });
    finish(record, outcome.params, held_out)
}

fn finish(mut record: RunRecord, params: ModelParameters, held_out: &[LabeledSample]) -> Result<RunOutput, OrchestratorError> {
    if !held_out.is_empty() {
        record.final_test = Some(evaluate(&params, held_out)?);
    }
    record.log(EventKind::Finished);
    Ok(RunOutput { record, params })
}

fn abort(mut record: RunRecord, station: Option<StationId>, reason: String) -> OrchestratorError {
    warn!("run {} aborted: {reason}", record.run_id);
    record.log(EventKind::Failure { station, reason: reason.clone() });
    OrchestratorError::StationFailed { station, reason, partial: Box::new(record) }
}

#[cfg(not(target_arch = "wasm32"))]
fn dispatch(links: &[&dyn StationLink], requests: &[(u64, Vec<u8>)]) -> Vec<Vec<u8>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            links.iter().zip(requests).map(|(link, (_, request))| scope.spawn(move || link.call(request))).collect();
        handles.into_iter().map(|h| h.join().expect("station handler panicked")).collect()
    })
}

#[cfg(target_arch = "wasm32")]
fn dispatch(links: &[&dyn StationLink], requests: &[(u64, Vec<u8>)]) -> Vec<Vec<u8>> {
    links.iter().zip(requests).map(|(link, (_, request))| link.call(request)).collect()
}

/// Per-epoch mean over replicas, weighted by sample count.
fn mean_trace(traces: &[&[EpochSummary]], counts: &[usize]) -> Vec<EpochSummary> {
    let epochs = traces.iter().map(|t| t.len()).min().unwrap_or(0);
    let total: f64 = counts.iter().map(|&c| c as f64).sum::<f64>().max(1.0);
    let mean = |pick: &dyn Fn(&EpochSummary) -> Option<f64>, e: usize| -> Option<f64> {
        let mut acc = 0.0;
        for (t, &c) in traces.iter().zip(counts) {
            acc += pick(&t[e])? * c as f64;
        }
        Some(acc / total)
    };
    (0..epochs)
        .map(|e| EpochSummary {
            train_loss: mean(&|s| Some(s.train_loss), e).unwrap_or(f64::NAN),
            mean_accuracy: mean(&|s| s.mean_accuracy, e),
            mean_recall: mean(&|s| s.mean_recall, e),
        })
        .collect()
}
