//! JSON messages of the WebSocket bridge. Every other text message on the
//! bridge is a hex-encoded application-layer frame; see `bridge.md`.

use serde::{Deserialize, Serialize};

use crate::history::{Bucket, HistoryRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeRequest {
    Auth { username: String, password: String },
    /// Resumes a session with a token issued earlier.
    Token { token: String },
    History { class: String, from_ms: u64, to_ms: u64, buckets: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeReply {
    Auth {
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        token: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    History {
        class: String,
        records: Vec<HistoryRecord>,
        #[serde(skip_serializing_if = "Option::is_none")]
        buckets: Option<Vec<Bucket>>,
    },
    Error {
        error: String,
    },
}

impl BridgeReply {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge replies always serialize")
    }
}

/// A text message is JSON when its first non-blank character opens an object.
pub fn is_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shapes() {
        let r: BridgeRequest = serde_json::from_str(r#"{"type":"auth","username":"a","password":"b"}"#).unwrap();
        assert_eq!(r, BridgeRequest::Auth { username: "a".into(), password: "b".into() });
        let r: BridgeRequest =
            serde_json::from_str(r#"{"type":"history","class":"reading","from_ms":0,"to_ms":10}"#).unwrap();
        assert_eq!(r, BridgeRequest::History { class: "reading".into(), from_ms: 0, to_ms: 10, buckets: None });
    }

    #[test]
    fn reply_shape() {
        let json = BridgeReply::Auth { ok: false, token: None, error: Some("RateLimited".into()) }.to_json();
        assert_eq!(json, r#"{"type":"auth","ok":false,"error":"RateLimited"}"#);
    }

    #[test]
    fn hex_frames_are_not_json() {
        assert!(!is_json("A5 09 40 19 41 3C 42 64 0D"));
        assert!(is_json("  {\"type\":\"token\",\"token\":\"x\"}"));
    }
}
