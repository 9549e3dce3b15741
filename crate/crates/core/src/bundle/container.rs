use sha2::{Digest, Sha256};

use super::{BundleError, TrainBundle, TrainManifest};
use crate::learner::{decode_parameters, encode_parameters, AdamState};

const MAGIC: &[u8; 8] = b"PHTTRAIN";
const CONTAINER_VERSION: u8 = 1;
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const OPTIMIZER: &str = "optimizer.bin";
const DIGEST: &str = "digest";

const OPTIMIZER_MAGIC: &[u8; 4] = b"PHTA";

fn put_entry(out: &mut Vec<u8>, name: &str, data: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(data);
}

/// Everything up to, not including, the digest entry.
pub(super) fn encode_body(bundle: &TrainBundle) -> Result<Vec<u8>, BundleError> {
    let manifest = serde_json::to_vec(&bundle.manifest)?;
    let params = encode_parameters(&bundle.parameters);
    let mut out = Vec::with_capacity(64 + manifest.len() + params.len());
    out.extend_from_slice(MAGIC);
    out.push(CONTAINER_VERSION);
    put_entry(&mut out, MANIFEST, &manifest);
    put_entry(&mut out, PARAMS, &params);
    if let Some(state) = &bundle.optimizer {
        put_entry(&mut out, OPTIMIZER, &encode_optimizer(state));
    }
    Ok(out)
}

pub(super) fn body_digest(body: &[u8]) -> [u8; 32] {
    Sha256::digest(body).into()
}

pub(super) fn encode(bundle: &TrainBundle) -> Result<Vec<u8>, BundleError> {
    let mut out = encode_body(bundle)?;
    put_entry(&mut out, DIGEST, &bundle.digest);
    Ok(out)
}

fn malformed(msg: impl Into<String>) -> BundleError {
    BundleError::Malformed(msg.into())
}

struct Entry<'a> {
    name: &'a str,
    data: &'a [u8],
    header_at: usize,
}

fn read_entries(bytes: &[u8]) -> Result<Vec<Entry<'_>>, BundleError> {
    if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if bytes[MAGIC.len()] != CONTAINER_VERSION {
        return Err(malformed(format!("unsupported container version {}", bytes[MAGIC.len()])));
    }
    let mut pos = MAGIC.len() + 1;
    let mut entries = Vec::new();
    while pos < bytes.len() {
        let header_at = pos;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], BundleError> {
            let end = pos.checked_add(n).filter(|e| *e <= bytes.len()).ok_or_else(|| malformed("truncated entry"))?;
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?).map_err(|_| malformed("entry name is not UTF-8"))?;
        let data_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
        let data = take(&mut pos, usize::try_from(data_len).map_err(|_| malformed("entry too large"))?)?;
        entries.push(Entry { name, data, header_at });
    }
    Ok(entries)
}

pub(super) fn decode(bytes: &[u8]) -> Result<TrainBundle, BundleError> {
    let entries = read_entries(bytes)?;
    let names: Vec<&str> = entries.iter().map(|e| e.name).collect();
    let has_optimizer = match names.as_slice() {
        [MANIFEST, PARAMS, DIGEST] => false,
        [MANIFEST, PARAMS, OPTIMIZER, DIGEST] => true,
        _ => return Err(malformed(format!("unexpected entries {names:?}"))),
    };
    let digest_entry = entries.last().expect("matched non-empty");
    let digest: [u8; 32] = digest_entry.data.try_into().map_err(|_| malformed("digest must be 32 bytes"))?;
    if body_digest(&bytes[..digest_entry.header_at]) != digest {
        return Err(BundleError::Tampered);
    }
    let manifest: TrainManifest = serde_json::from_slice(entries[0].data)?;
    let parameters = decode_parameters(entries[1].data)?;
    let optimizer = if has_optimizer { Some(decode_optimizer(entries[2].data)?) } else { None };
    let bundle = TrainBundle { manifest, parameters, optimizer, digest };
    // Re-encoding must reproduce the input exactly.
    if encode(&bundle)? != bytes {
        return Err(malformed("non-canonical encoding"));
    }
    Ok(bundle)
}

/// `"PHTA" | u8 1 | u64 step | u64 len | m (f64 * len) | v (f64 * len)`, little-endian.
pub fn encode_optimizer(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + state.m.len() * 16);
    out.extend_from_slice(OPTIMIZER_MAGIC);
    out.push(1);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for v in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

pub fn decode_optimizer(bytes: &[u8]) -> Result<AdamState, BundleError> {
    if bytes.len() < 21 || &bytes[..4] != OPTIMIZER_MAGIC || bytes[4] != 1 {
        return Err(malformed("bad optimizer header"));
    }
    let step = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let len = usize::try_from(u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")))
        .map_err(|_| malformed("optimizer too large"))?;
    let body = &bytes[21..];
    if len.checked_mul(16) != Some(body.len()) {
        return Err(malformed("optimizer length mismatch"));
    }
    let values: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
    let (m, v) = values.split_at(len);
    Ok(AdamState { m: m.to_vec(), v: v.to_vec(), step })
}
