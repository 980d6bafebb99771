use serde::Serialize;

use crate::bridge::client::{BridgeConnection, BridgeOptions, Endpoint};
use crate::engine::Modality;
use crate::error::BridgeError;
use crate::vocab::TokenId;

/// What to send during a check.
#[derive(Debug, Clone, PartialEq)]
pub struct ServeCheckOptions {
    pub bridge: BridgeOptions,
    /// Context for the probe queries; the BOS id of most models is a safe choice.
    pub context: Vec<TokenId>,
    pub visual_ref: String,
}

impl Default for ServeCheckOptions {
    fn default() -> Self {
        Self {
            bridge: BridgeOptions::default(),
            context: vec![0],
            visual_ref: "probe".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServeCheckReport {
    pub endpoint: String,
    pub vocab_size: Option<usize>,
    pub checks: Vec<CheckItem>,
}

impl ServeCheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

fn item(name: &str, result: Result<String, String>) -> CheckItem {
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckItem {
        name: name.into(),
        passed,
        detail,
    }
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Connects to an adapter and exercises the protocol: handshake, one query
/// per modality, a repeated query for determinism, recovery after a
/// malformed line, and shutdown. Every step is reported; the check stops
/// early only when the connection itself is lost.
pub fn serve_check(endpoint: &Endpoint, options: &ServeCheckOptions) -> ServeCheckReport {
    let mut report = ServeCheckReport {
        endpoint: endpoint.to_string(),
        vocab_size: None,
        checks: Vec::new(),
    };
    let mut conn = match BridgeConnection::connect(endpoint, options.bridge) {
        Ok(c) => c,
        Err(e) => {
            report.checks.push(item("handshake", Err(e.to_string())));
            return report;
        }
    };
    report.vocab_size = Some(conn.vocab_size());
    report
        .checks
        .push(item("handshake", Ok(format!("vocab_size {}", conn.vocab_size()))));

    let ctx = &options.context;
    let visual = Some(options.visual_ref.as_str());
    let describe = |r: &Result<crate::math::LogitVector, BridgeError>| match r {
        Ok(l) => Ok(format!("{} logits", l.vocab_size())),
        Err(e) => Err(e.to_string()),
    };

    let multimodal = conn.query(Modality::Multimodal, ctx, visual);
    report.checks.push(item("multimodal_query", describe(&multimodal)));
    let text = conn.query(Modality::TextOnly, ctx, None);
    report.checks.push(item("text_only_query", describe(&text)));
    let again = conn.query(Modality::Multimodal, ctx, visual);
    let determinism = match (&multimodal, &again) {
        (Ok(a), Ok(b)) if same_bits(a.as_slice(), b.as_slice()) => Ok("repeat is bit-identical".into()),
        (Ok(_), Ok(_)) => Err("repeated query returned different logits".into()),
        (_, Err(e)) => Err(e.to_string()),
        (Err(_), _) => Err("first query failed".into()),
    };
    report.checks.push(item("determinism", determinism));

    if conn.is_broken() {
        return report;
    }
    let recovery = conn
        .send_malformed("{\"kind\":\"logits\",\"request_id\":")
        .map_err(|e| e.to_string())
        .and_then(|_| {
            conn.query(Modality::TextOnly, ctx, None)
                .map(|_| "error response, then a normal answer".into())
                .map_err(|e| format!("no answer after malformed line: {e}"))
        });
    report.checks.push(item("malformed_recovery", recovery));

    if !conn.is_broken() {
        let shutdown = conn.shutdown().map(|_| "sent".to_string()).map_err(|e| e.to_string());
        report.checks.push(item("shutdown", shutdown));
    }
    report
}
