//! Versioned, hash-protected JSON envelopes for sessions and pose-pair
//! datasets. Floats are written with 17 significant digits so every value
//! parses back to the same bits.

use super::{Session, SimError};
use crate::geom::RigidTransform;
use crate::handeye::PosePair;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;

pub const SESSION_SCHEMA: &str = "frustum-session/v1";
pub const PAIRS_SCHEMA: &str = "frustum-pairs/v1";

/// Compact JSON with every `f64` in `{:.16e}` form.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String, SimError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
    value.serialize(&mut ser).map_err(|e| SimError::Io(e.to_string()))?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Deserialize)]
struct Envelope<'a> {
    schema: String,
    content_hash: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

fn seal(schema: &str, body: &str) -> String {
    format!(r#"{{"schema":"{schema}","content_hash":"{}","body":{body}}}"#, sha256_hex(body.as_bytes()))
}

fn open<'a>(text: &'a str, schema: &str) -> Result<&'a str, SimError> {
    let env: Envelope<'a> = serde_json::from_str(text).map_err(|e| SimError::CorruptLog(e.to_string()))?;
    if env.schema != schema {
        return Err(SimError::SchemaMismatch { found: env.schema, expected: schema.to_string() });
    }
    let body = env.body.get();
    if sha256_hex(body.as_bytes()) != env.content_hash {
        return Err(SimError::CorruptLog("content hash does not match".into()));
    }
    Ok(body)
}

fn read_text(path: &Path) -> Result<String, SimError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => SimError::NotFound(path.display().to_string()),
        _ => SimError::Io(format!("{}: {e}", path.display())),
    })
}

/// Writes via a temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), SimError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).and_then(|_| std::fs::rename(&tmp, path)).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}

pub fn serialize_session(session: &Session) -> Result<String, SimError> {
    Ok(seal(SESSION_SCHEMA, &to_exact_json(session)?))
}

/// Parses and checks a session file without re-running it.
pub fn parse_session(text: &str) -> Result<Session, SimError> {
    let body = open(text, SESSION_SCHEMA)?;
    serde_json::from_str(body).map_err(|e| SimError::CorruptLog(e.to_string()))
}

/// Parses a session file, re-runs its event log and checks that the
/// recomputed state serializes identically to the recorded one.
pub fn replay_str(text: &str) -> Result<Session, SimError> {
    let recorded = parse_session(text)?;
    let replayed = Session::from_events(&recorded.events)?;
    let (a, b) = (to_exact_json(&recorded)?, to_exact_json(&replayed)?);
    if a != b {
        let at = a.bytes().zip(b.bytes()).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        let lo = at.saturating_sub(40);
        return Err(SimError::ReplayDivergence(format!(
            "first difference at byte {at}: recorded {:?} vs replayed {:?}",
            &a[lo..(at + 40).min(a.len())],
            &b[lo..(at + 40).min(b.len())]
        )));
    }
    Ok(replayed)
}

pub fn replay(path: &Path) -> Result<Session, SimError> {
    replay_str(&read_text(path)?)
}

pub fn save_session(path: &Path, session: &Session) -> Result<(), SimError> {
    write_atomic(path, &serialize_session(session)?)
}

/// A pose-pair dataset, optionally with the mounting it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDataset {
    pub pairs: Vec<PosePair>,
    pub ground_truth: Option<RigidTransform>,
}

pub fn serialize_pairs(data: &PairDataset) -> Result<String, SimError> {
    Ok(seal(PAIRS_SCHEMA, &to_exact_json(data)?))
}

pub fn parse_pairs(text: &str) -> Result<PairDataset, SimError> {
    let body = open(text, PAIRS_SCHEMA)?;
    serde_json::from_str(body).map_err(|e| SimError::CorruptLog(e.to_string()))
}

pub fn load_pairs(path: &Path) -> Result<PairDataset, SimError> {
    parse_pairs(&read_text(path)?)
}

pub fn save_pairs(path: &Path, data: &PairDataset) -> Result<(), SimError> {
    write_atomic(path, &serialize_pairs(data)?)
}
