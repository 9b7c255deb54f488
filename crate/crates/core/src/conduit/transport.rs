//! Length-prefixed message frames between the engine and worker processes.
//!
//! A frame is a big-endian `u32` byte count followed by a JSON envelope
//! `{"version": N, "message": ...}`. Readers reject other versions.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Outcome, SampleKey};
use crate::config::ModelSettings;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: u32 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub key: SampleKey,
    pub names: Vec<String>,
    #[serde(with = "crate::ext_f64::vec")]
    pub params: Vec<f64>,
    pub model: ModelSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Job(JobSpec),
    Result { key: SampleKey, outcome: Outcome },
    Shutdown,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    message: Message,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol version {found} (expected {PROTOCOL_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(u32),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

pub fn write_message(w: &mut impl Write, message: &Message) -> Result<(), TransportError> {
    let payload = serde_json::to_vec(&Envelope {
        version: PROTOCOL_VERSION,
        message: message.clone(),
    })
    .map_err(|e| TransportError::Malformed(e.to_string()))?;
    let len = u32::try_from(payload.len()).map_err(|_| TransportError::Oversized(u32::MAX))?;
    if len > MAX_FRAME_BYTES {
        return Err(TransportError::Oversized(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, TransportError> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(header);
    if len > MAX_FRAME_BYTES {
        return Err(TransportError::Oversized(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    let raw: serde_json::Value =
        serde_json::from_slice(&payload).map_err(|e| TransportError::Malformed(e.to_string()))?;
    let found = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| TransportError::Malformed("missing version".into()))?;
    if found != u64::from(PROTOCOL_VERSION) {
        return Err(TransportError::VersionMismatch { found: found as u32 });
    }
    let env: Envelope =
        serde_json::from_value(raw).map_err(|e| TransportError::Malformed(e.to_string()))?;
    Ok(Some(env.message))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conduit::{ExperimentId, SampleId};
    use crate::config::ResultChannel;
    use crate::problem::SampleResult;

    fn key() -> SampleKey {
        SampleKey {
            experiment: ExperimentId(1),
            sample: SampleId(42),
        }
    }

    #[test]
    fn round_trip() {
        let job = Message::Job(JobSpec {
            key: key(),
            names: vec!["X".into(), "Y".into()],
            params: vec![0.1 + 0.2, -1e-300],
            model: ModelSettings {
                command: "app {X}".into(),
                channel: ResultChannel::Stdout,
                timeout_secs: Some(3.0),
            },
        });
        let result = Message::Result {
            key: key(),
            outcome: Outcome::Completed(SampleResult::new().with("F(x)", f64::NEG_INFINITY)),
        };
        let mut buf = Vec::new();
        for m in [&job, &result, &Message::Shutdown] {
            write_message(&mut buf, m).unwrap();
        }
        let mut r = buf.as_slice();
        assert_eq!(read_message(&mut r).unwrap(), Some(job));
        assert_eq!(read_message(&mut r).unwrap(), Some(result));
        assert_eq!(read_message(&mut r).unwrap(), Some(Message::Shutdown));
        assert_eq!(read_message(&mut r).unwrap(), None);
    }

    #[test]
    fn version_and_size_checks() {
        let payload = br#"{"version":99,"message":"Shutdown"}"#;
        let mut buf = (payload.len() as u32).to_be_bytes().to_vec();
        buf.extend_from_slice(payload);
        assert!(matches!(
            read_message(&mut buf.as_slice()),
            Err(TransportError::VersionMismatch { found: 99 })
        ));
        let huge = (MAX_FRAME_BYTES + 1).to_be_bytes();
        assert!(matches!(
            read_message(&mut huge.as_slice()),
            Err(TransportError::Oversized(_))
        ));
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_message(&mut buf, &Message::Shutdown).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_message(&mut buf.as_slice()).is_err());
    }
}
