//! FHIR-lite resources: Patient, Media and ImageStudy, stored as typed
//! documents and exchanged as JSON with a `resourceType` tag.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StationError;

/// The eight diagnostic categories, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum DiagnosticClass {
    MEL,
    NV,
    BCC,
    AK,
    BKL,
    DF,
    VASC,
    SCC,
}

impl DiagnosticClass {
    pub const ALL: [DiagnosticClass; 8] = [Self::MEL, Self::NV, Self::BCC, Self::AK, Self::BKL, Self::DF, Self::VASC, Self::SCC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Self::MEL => "MEL",
            Self::NV => "NV",
            Self::BCC => "BCC",
            Self::AK => "AK",
            Self::BKL => "BKL",
            Self::DF => "DF",
            Self::VASC => "VASC",
            Self::SCC => "SCC",
        }
    }
}

impl fmt::Display for DiagnosticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DiagnosticClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|c| c.code().eq_ignore_ascii_case(s.trim())).ok_or_else(|| format!("unknown class code {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Other,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "male" => Ok(Self::Male),
            "female" => Ok(Self::Female),
            "other" => Ok(Self::Other),
            _ => Err(format!("unknown sex {s:?}")),
        }
    }
}

/// Which local split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResource {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anatomical_site: Option<String>,
    pub media_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaResource {
    pub id: String,
    pub content_url: String,
    pub label: DiagnosticClass,
    pub subset: Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStudyResource {
    pub id: String,
    pub name: String,
    pub patient_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "resourceType")]
pub enum Resource {
    Patient(PatientResource),
    Media(MediaResource),
    #[serde(alias = "ImagingStudy")]
    ImageStudy(ImageStudyResource),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: String,
}

impl ApiResponse {
    fn ok(value: serde_json::Value) -> Self {
        Self { status: 200, body: value.to_string() }
    }

    fn error(status: u16, message: &str) -> Self {
        let body = serde_json::json!({
            "resourceType": "OperationOutcome",
            "issue": [{ "severity": "error", "diagnostics": message }],
        });
        Self { status, body: body.to_string() }
    }
}

/// In-memory resource database.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResourceStore {
    patients: BTreeMap<String, PatientResource>,
    media: BTreeMap<String, MediaResource>,
    studies: BTreeMap<String, ImageStudyResource>,
}

impl ResourceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, resource: Resource) -> Result<(), StationError> {
        fn put<T>(map: &mut BTreeMap<String, T>, id: String, value: T, kind: &'static str) -> Result<(), StationError> {
            if map.contains_key(&id) {
                return Err(StationError::DuplicateId { kind, id });
            }
            map.insert(id, value);
            Ok(())
        }
        match resource {
            Resource::Patient(p) => put(&mut self.patients, p.id.clone(), p, "Patient"),
            Resource::Media(m) => {
                if m.content_url.is_empty() {
                    return Err(StationError::InvalidResource(format!("Media {} has an empty content_url", m.id)));
                }
                put(&mut self.media, m.id.clone(), m, "Media")
            }
            Resource::ImageStudy(s) => put(&mut self.studies, s.id.clone(), s, "ImageStudy"),
        }
    }

    /// Insert a resource from its JSON document (`ImagingStudy` is accepted
    /// as a spelling of `ImageStudy`).
    pub fn insert_json(&mut self, json: &str) -> Result<(), StationError> {
        let resource: Resource =
            serde_json::from_str(json).map_err(|e| StationError::InvalidResource(e.to_string()))?;
        self.insert(resource)
    }

    pub fn patient(&self, id: &str) -> Result<&PatientResource, StationError> {
        self.patients.get(id).ok_or_else(|| StationError::Dangling { kind: "Patient", id: id.to_owned() })
    }

    pub fn media(&self, id: &str) -> Result<&MediaResource, StationError> {
        self.media.get(id).ok_or_else(|| StationError::Dangling { kind: "Media", id: id.to_owned() })
    }

    pub fn study(&self, id: &str) -> Result<&ImageStudyResource, StationError> {
        self.studies.get(id).ok_or_else(|| StationError::UnknownStudy(id.to_owned()))
    }

    /// Patients referenced by the study, ascending by id.
    pub fn patients_in_study(&self, study_id: &str) -> Result<Vec<&PatientResource>, StationError> {
        let study = self.study(study_id)?;
        let mut refs: Vec<&String> = study.patient_refs.iter().collect();
        refs.sort();
        refs.into_iter().map(|id| self.patient(id)).collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.patients.len(), self.media.len(), self.studies.len())
    }

    /// Every study→patient and patient→media reference resolves.
    pub fn check_integrity(&self) -> Result<(), StationError> {
        for study in self.studies.values() {
            for p in &study.patient_refs {
                self.patient(p)?;
            }
        }
        for patient in self.patients.values() {
            for m in &patient.media_refs {
                self.media(m)?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every resource.
    pub fn state_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.patients.values() {
            hasher.update(serde_json::to_vec(&Resource::Patient(p.clone())).expect("serializable"));
        }
        for m in self.media.values() {
            hasher.update(serde_json::to_vec(&Resource::Media(m.clone())).expect("serializable"));
        }
        for s in self.studies.values() {
            hasher.update(serde_json::to_vec(&Resource::ImageStudy(s.clone())).expect("serializable"));
        }
        hex::encode(hasher.finalize())
    }

    /// Read-only REST surface: `GET /Patient/{id}`, `GET /Media/{id}`,
    /// `GET /ImageStudy/{id}` and `GET /Patient?study={id}` (a search set
    /// ordered by patient id).
    pub fn handle(&self, method: &str, path: &str) -> ApiResponse {
        if method != "GET" {
            return ApiResponse::error(405, "only GET is supported");
        }
        let (route, query) = path.split_once('?').unwrap_or((path, ""));
        let segments: Vec<&str> = route.trim_matches('/').split('/').collect();
        let to_json = |r: Resource| serde_json::to_value(r).expect("serializable");
        let result = match segments.as_slice() {
            ["Patient"] => {
                let study = query.split('&').find_map(|kv| kv.strip_prefix("study="));
                match study {
                    None => return ApiResponse::error(400, "Patient search requires study="),
                    Some(id) => self.patients_in_study(id).map(|patients| {
                        let entries: Vec<serde_json::Value> = patients
                            .into_iter()
                            .map(|p| serde_json::json!({ "resource": to_json(Resource::Patient(p.clone())) }))
                            .collect();
                        serde_json::json!({
                            "resourceType": "Bundle",
                            "type": "searchset",
                            "total": entries.len(),
                            "entry": entries,
                        })
                    }),
                }
            }
            ["Patient", id] => self.patient(id).map(|p| to_json(Resource::Patient(p.clone()))),
            ["Media", id] => self.media(id).map(|m| to_json(Resource::Media(m.clone()))),
            ["ImageStudy" | "ImagingStudy", id] => self.study(id).map(|s| to_json(Resource::ImageStudy(s.clone()))),
            _ => return ApiResponse::error(404, "unknown route"),
        };
        match result {
            Ok(value) => ApiResponse::ok(value),
            Err(e) => ApiResponse::error(404, &e.to_string()),
        }
    }
}
