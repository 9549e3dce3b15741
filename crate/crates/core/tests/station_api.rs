//! A station ingested from the synthetic generator, read back through its
//! resource and object endpoints.

use std::collections::HashMap;

use pht_core::partition::{split, PartitionSpec};
use pht_core::preprocess::{synth_dataset, RawImage, ISIC_PROPORTIONS};
use pht_core::station::{DiagnosticClass, IngestRecord, Station, StationConfig};

fn ingested() -> (Station, Vec<String>) {
    let data = synth_dataset(200, &ISIC_PROPORTIONS, 8, 1).unwrap();
    let labels: Vec<(String, usize)> = data.iter().map(|s| (s.id.clone(), s.label)).collect();
    let partition = split(&labels, &PartitionSpec::default()).unwrap();
    let records: HashMap<String, IngestRecord> = data
        .into_iter()
        .map(|s| {
            let record = IngestRecord {
                image: s.image,
                label: DiagnosticClass::from_index(s.label).unwrap(),
                age: s.age,
                sex: s.sex.and_then(|x| x.parse().ok()),
                anatomical_site: s.anatomical_site.map(str::to_owned),
            };
            (s.id, record)
        })
        .collect();
    let shard = &partition.stations[0];
    let mut station = Station::new(StationConfig::local(shard.id)).unwrap();
    station.ingest(shard, &records, "synthetic lesions").unwrap();
    let mut ids: Vec<String> = shard.train.iter().chain(&shard.validation).cloned().collect();
    ids.sort();
    (station, ids)
}

fn get(station: &Station, path: &str) -> (u16, serde_json::Value) {
    let r = station.resources().handle("GET", path);
    (r.status, serde_json::from_str(&r.body).unwrap())
}

#[test]
fn study_search_walks_to_decodable_blobs() {
    let (station, ids) = ingested();
    let study = station.config().study_id.clone();
    let (status, bundle) = get(&station, &format!("/Patient?study={study}"));
    assert_eq!(status, 200);
    assert_eq!(bundle["resourceType"], "Bundle");
    assert_eq!(bundle["total"], ids.len());
    let patient_ids: Vec<&str> = bundle["entry"].as_array().unwrap().iter().map(|e| e["resource"]["id"].as_str().unwrap()).collect();
    assert_eq!(patient_ids, ids.iter().map(String::as_str).collect::<Vec<_>>());

    let first = &bundle["entry"][0]["resource"];
    let media_ref = first["media_refs"][0].as_str().unwrap();
    let (status, media) = get(&station, &format!("/Media/{media_ref}"));
    assert_eq!(status, 200);
    assert_eq!(media["resourceType"], "Media");
    let url = media["content_url"].as_str().unwrap();
    let blob = station.objects().get(url).unwrap();
    let image = RawImage::from_png(blob).unwrap();
    assert_eq!((image.width(), image.height()), (8, 8));

    let resolved = station.resolve_dataset(&study).unwrap();
    assert_eq!(resolved.len(), ids.len());
    assert_eq!(resolved[0].image, image);
}

#[test]
fn imaging_study_alias_and_errors() {
    let (station, _) = ingested();
    let study = station.config().study_id.clone();
    let (status, a) = get(&station, &format!("/ImageStudy/{study}"));
    let (_, b) = get(&station, &format!("/ImagingStudy/{study}"));
    assert_eq!(status, 200);
    assert_eq!(a, b);
    let (status, outcome) = get(&station, "/Patient/nobody");
    assert_eq!(status, 404);
    assert_eq!(outcome["resourceType"], "OperationOutcome");
    assert_eq!(station.resources().handle("POST", "/Patient/x").status, 405);
    assert_eq!(get(&station, "/Patient").0, 400);
}

#[test]
fn object_endpoint_put_get_and_method_errors() {
    let (mut station, ids) = ingested();
    let url = station.content_url(&ids[0]);
    let objects = station.objects_mut();
    let (status, original) = objects.handle("GET", &url, None);
    assert_eq!(status, 200);
    assert_eq!(objects.handle("PUT", "scratch/x.bin", Some(vec![1, 2, 3])).0, 201);
    assert_eq!(objects.handle("GET", "scratch/x.bin", None), (200, vec![1, 2, 3]));
    assert_eq!(objects.handle("PUT", "scratch/y.bin", None).0, 400);
    assert_eq!(objects.handle("DELETE", &url, None).0, 405);
    assert_eq!(objects.handle("GET", "missing.png", None).0, 404);
    assert_eq!(objects.get(&url), Some(original.as_slice()));
}
