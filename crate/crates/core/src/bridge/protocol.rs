//! Line-delimited JSON messages exchanged with an adapter process.
//!
//! Requests:
//!
//! ```text
//! {"request_id":1,"kind":"hello","protocol_version":1}
//! {"request_id":2,"kind":"logits","modality":"multimodal","context_tokens":[0,4,9],"visual_ref":"img-3"}
//! {"request_id":3,"kind":"logits","modality":"text_only","context_tokens":[0,4,9]}
//! {"request_id":4,"kind":"shutdown"}
//! ```
//!
//! Responses echo the request id:
//!
//! ```text
//! {"request_id":1,"kind":"hello_ack","vocab_size":32000}
//! {"request_id":2,"kind":"logits","logits":[1.2500000000000000e0,-3.0000000000000000e-1]}
//! {"request_id":3,"kind":"error","error_message":"unknown visual_ref"}
//! ```
//!
//! Unknown fields are ignored on both sides. Logits are written with 17
//! significant digits, enough for any `f64` to survive the trip exactly.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::engine::Modality;
use crate::error::BridgeError;
use crate::vocab::TokenId;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BridgeRequest {
    Hello {
        request_id: u64,
        protocol_version: u32,
    },
    Logits {
        request_id: u64,
        modality: Modality,
        context_tokens: Vec<TokenId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        visual_ref: Option<String>,
    },
    Shutdown {
        request_id: u64,
    },
}

impl BridgeRequest {
    pub fn request_id(&self) -> u64 {
        match *self {
            BridgeRequest::Hello { request_id, .. }
            | BridgeRequest::Logits { request_id, .. }
            | BridgeRequest::Shutdown { request_id } => request_id,
        }
    }

    /// Logits requests need a context, and a visual reference exactly when
    /// they are multimodal.
    pub fn validate(&self) -> Result<(), BridgeError> {
        if let BridgeRequest::Logits {
            modality,
            context_tokens,
            visual_ref,
            ..
        } = self
        {
            if context_tokens.is_empty() {
                return Err(BridgeError::Protocol("logits request with empty context".into()));
            }
            match (modality, visual_ref) {
                (Modality::Multimodal, None) => {
                    return Err(BridgeError::Protocol("multimodal request without visual_ref".into()))
                }
                (Modality::TextOnly, Some(_)) => {
                    return Err(BridgeError::Protocol("text_only request carries a visual_ref".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }

    pub fn decode(line: &str) -> Result<Self, BridgeError> {
        let req: Self = serde_json::from_str(line).map_err(|e| BridgeError::Protocol(format!("bad request: {e}")))?;
        req.validate()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BridgeResponse {
    HelloAck { request_id: u64, vocab_size: usize },
    Logits { request_id: u64, logits: Vec<f64> },
    Error { request_id: u64, error_message: String },
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WireResponse<'a> {
    HelloAck { request_id: u64, vocab_size: usize },
    Logits { request_id: u64, logits: &'a RawValue },
    Error { request_id: u64, error_message: &'a str },
}

/// `v` with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl BridgeResponse {
    pub fn request_id(&self) -> u64 {
        match *self {
            BridgeResponse::HelloAck { request_id, .. }
            | BridgeResponse::Logits { request_id, .. }
            | BridgeResponse::Error { request_id, .. } => request_id,
        }
    }

    /// Encodes one line without the trailing newline. Non-finite logits
    /// cannot be represented and are refused.
    pub fn encode(&self) -> Result<String, BridgeError> {
        let array;
        let wire = match self {
            BridgeResponse::HelloAck { request_id, vocab_size } => WireResponse::HelloAck {
                request_id: *request_id,
                vocab_size: *vocab_size,
            },
            BridgeResponse::Logits { request_id, logits } => {
                if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
                    return Err(BridgeError::Protocol(format!("non-finite logit {bad}")));
                }
                let body: Vec<String> = logits.iter().map(|&v| format_float(v)).collect();
                array = RawValue::from_string(format!("[{}]", body.join(",")))
                    .map_err(|e| BridgeError::Protocol(e.to_string()))?;
                WireResponse::Logits {
                    request_id: *request_id,
                    logits: &array,
                }
            }
            BridgeResponse::Error {
                request_id,
                error_message,
            } => WireResponse::Error {
                request_id: *request_id,
                error_message,
            },
        };
        Ok(serde_json::to_string(&wire).expect("responses always serialize"))
    }

    pub fn decode(line: &str) -> Result<Self, BridgeError> {
        let resp: Self = serde_json::from_str(line).map_err(|e| BridgeError::Protocol(format!("bad response: {e}")))?;
        if let BridgeResponse::Logits { logits, .. } = &resp {
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(BridgeError::Protocol("non-finite logits".into()));
            }
        }
        Ok(resp)
    }
}
