//! End-to-end runs over in-process stations.

use std::collections::HashMap;

use pht_core::bundle::{TaskConfig, TrainBundle, TrainRegistry};
use pht_core::learner::{ModelSpec, TrainingConfig};
use pht_core::orchestrator::{
    decode_envelope, EventKind, ExperimentPlan, InProcessLink, Message, Orchestrator, OrchestratorError, Policy, StationLink, Weighting,
};
use pht_core::partition::{DatasetShard, StationId};
use pht_core::preprocess::{AugmentConfig, RawImage};
use pht_core::rng::stream_rng;
use pht_core::station::{DiagnosticClass, IngestRecord, Station, StationConfig};
use rand::Rng;

const SIZE: u32 = 4;

fn records(n: usize, seed: u64) -> HashMap<String, IngestRecord> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|i| {
            let label = i % 3;
            // class-dependent mean colour so there is something to learn
            let data = (0..SIZE * SIZE * 3).map(|c| (60 * label as u32 + (c % 3) * 20 + rng.random_range(0..40)) as u8).collect();
            let record = IngestRecord {
                image: RawImage::new(SIZE, SIZE, data).unwrap(),
                label: DiagnosticClass::from_index(label).unwrap(),
                age: Some(40),
                sex: None,
                anatomical_site: None,
            };
            (format!("p{seed}-{i:03}"), record)
        })
        .collect()
}

fn station(id: u32, n: usize) -> Station {
    let records = records(n, u64::from(id));
    let mut ids: Vec<String> = records.keys().cloned().collect();
    ids.sort();
    let validation = ids.split_off(n - n / 4);
    let mut s = Station::new(StationConfig::local(StationId(id))).unwrap();
    s.ingest(&DatasetShard { id: StationId(id), train: ids, validation }, &records, "test study").unwrap();
    s
}

fn plan(policy: Policy, stations: &[Station], epochs: u32) -> ExperimentPlan {
    ExperimentPlan {
        policy,
        stations: stations.iter().map(Station::id).collect(),
        cycles: 1,
        rounds: 2,
        local_epochs: epochs,
        weighting: Weighting::BySampleCount,
        seed: 3,
        task: TaskConfig {
            training: TrainingConfig { learning_rate: 0.01, batch_size: 8, seed: 5, ..TrainingConfig::default() },
            augment: AugmentConfig::identity(SIZE),
            model: ModelSpec::softmax((SIZE * SIZE * 3) as usize, 8),
            carry_optimizer_state: false,
        },
    }
}

fn orchestrator<'a>(run_id: &str, registry: &'a TrainRegistry, links: &'a [InProcessLink<'a>]) -> Orchestrator<'a> {
    Orchestrator::new(run_id, registry, links.iter().map(|l| l as &dyn StationLink).collect())
}

#[test]
fn iil_visits_route_in_order_and_marks_hops() {
    let stations = [station(1, 24), station(2, 20), station(3, 28)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let out = orchestrator("r", &registry, &links).run_iil(&plan(Policy::Iil, &stations, 4), &[]).unwrap();

    let visited: Vec<Option<StationId>> = out.record.segments.iter().map(|s| s.station).collect();
    assert_eq!(visited, vec![Some(StationId(1)), Some(StationId(2)), Some(StationId(3))]);
    assert_eq!(out.record.hop_epochs(), vec![4, 8]);
    assert_eq!(out.record.loss_trace().len(), 12);

    let history = registry.history("r-iil").unwrap();
    assert_eq!(history.iter().map(|h| h.cursor).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let last = registry.pull("r-iil").unwrap();
    assert!(last.is_complete());
    assert_eq!(last.parameters, out.params);
    assert_eq!(last.parameters.version, 4);
    let train_samples: Vec<usize> = last.manifest.provenance.iter().map(|v| v.train_samples).collect();
    assert_eq!(train_samples, vec![18, 15, 21]);
}

#[test]
fn cyclic_iil_repeats_the_route() {
    let stations = [station(1, 16), station(2, 16)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let mut p = plan(Policy::CyclicIil, &stations, 2);
    p.cycles = 3;
    let out = orchestrator("c", &registry, &links).run_iil(&p, &[]).unwrap();
    let visited: Vec<u32> = out.record.segments.iter().map(|s| s.station.unwrap().0).collect();
    assert_eq!(visited, vec![1, 2, 1, 2, 1, 2]);
    assert_eq!(out.record.hop_epochs(), vec![2, 4, 6, 8, 10]);
}

#[test]
fn plan_validation() {
    let stations = [station(1, 8)];
    let mut p = plan(Policy::Iil, &stations, 1);
    p.cycles = 0;
    assert!(matches!(p.validate(), Err(OrchestratorError::InvalidPlan(_))));
    p.cycles = 2;
    assert!(p.validate().is_err(), "single-pass IIL with two cycles");
    let mut fl = plan(Policy::Fl, &stations, 1);
    fl.rounds = 0;
    assert!(fl.validate().is_err());
    let mut empty = plan(Policy::Iil, &stations, 1);
    empty.stations.clear();
    assert!(empty.validate().is_err());
}

#[test]
fn single_station_fl_equals_cyclic_iil() {
    let stations = [station(1, 20)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let fl = orchestrator("f", &registry, &links).run_fl(&plan(Policy::Fl, &stations, 3), &[]).unwrap();
    let mut cyclic = plan(Policy::CyclicIil, &stations, 3);
    cyclic.cycles = 2;
    let iil = orchestrator("i", &registry, &links).run_iil(&cyclic, &[]).unwrap();
    assert_eq!(fl.params.values, iil.params.values);
    assert_eq!(fl.record.loss_trace(), iil.record.loss_trace());
}

#[test]
fn fl_rounds_are_logged_and_committed() {
    let stations = [station(1, 12), station(2, 24), station(3, 16)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let mut orch = orchestrator("fl", &registry, &links);
    let out = orch.run_fl(&plan(Policy::Fl, &stations, 2), &[]).unwrap();
    let rounds: Vec<u32> = out
        .record
        .events
        .iter()
        .filter_map(|e| if let EventKind::RoundComplete { round } = e.kind { Some(round) } else { None })
        .collect();
    assert_eq!(rounds, vec![1, 2]);
    assert_eq!(out.record.replicas.len(), 6);
    assert_eq!(out.record.segments.len(), 2);

    let last = registry.pull("fl-fl").unwrap();
    assert_eq!(last.manifest.provenance.len(), 6);
    assert_eq!(last.parameters.version, 7);

    // every message decodes, answers carry seq + 1, and seqs increase
    let seqs: Vec<u64> = orch.wire().messages.iter().map(|m| decode_envelope(m).unwrap().seq).collect();
    assert_eq!(seqs.len(), 12);
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    for pair in orch.wire().messages.chunks(2) {
        let (req, resp) = (decode_envelope(&pair[0]).unwrap(), decode_envelope(&pair[1]).unwrap());
        assert!(matches!(req.message, Message::Broadcast { .. }));
        assert!(matches!(resp.message, Message::ReplicaResult { .. }));
        assert_eq!(resp.seq, req.seq + 1);
        assert_eq!(resp.station, req.station);
    }
}

#[test]
fn station_failure_aborts_with_partial_record() {
    let mut broken = station(2, 16);
    let url = broken.objects().iter().next().unwrap().0.to_owned();
    broken.objects_mut().put(url, b"not a png".to_vec());
    let stations = [station(1, 16), broken, station(3, 16)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let err = orchestrator("x", &registry, &links).run_iil(&plan(Policy::Iil, &stations, 2), &[]).unwrap_err();
    let OrchestratorError::StationFailed { station, reason, partial } = &err else { panic!("{err}") };
    assert_eq!(*station, Some(StationId(2)));
    assert!(reason.contains("decoded"), "{reason}");
    assert_eq!(partial.segments.len(), 1);
    assert!(matches!(partial.events.last().unwrap().kind, EventKind::Failure { .. }));

    // the failure is recorded in the registry without touching parameters
    let head = registry.pull("x-iil").unwrap();
    assert_eq!(head.manifest.cursor, 1);
    assert_eq!(head.manifest.failures.len(), 1);
    let first = TrainBundle::from_bytes(&registry.versions("x-iil").unwrap()[1]).unwrap();
    assert_eq!(head.parameters, first.parameters);
}

#[test]
fn fl_replica_failure_aborts_the_round() {
    let mut broken = station(2, 16);
    let url = broken.objects().iter().next().unwrap().0.to_owned();
    broken.objects_mut().delete(&url);
    let stations = [station(1, 16), broken];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let err = orchestrator("y", &registry, &links).run_fl(&plan(Policy::Fl, &stations, 1), &[]).unwrap_err();
    let partial = err.partial_record().expect("partial record");
    assert!(partial.segments.is_empty());
    assert_eq!(registry.history("y-fl").unwrap().len(), 1);
}

#[test]
fn unknown_station_in_plan_is_rejected() {
    let stations = [station(1, 8)];
    let registry = TrainRegistry::new();
    let links: Vec<InProcessLink> = stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
    let mut p = plan(Policy::Iil, &stations, 1);
    p.stations.push(StationId(9));
    let err = orchestrator("z", &registry, &links).run_iil(&p, &[]).unwrap_err();
    assert!(matches!(err, OrchestratorError::UnknownStation(StationId(9))));
}
