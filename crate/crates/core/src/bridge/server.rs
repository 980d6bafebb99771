use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::bridge::protocol::{BridgeRequest, BridgeResponse, PROTOCOL_VERSION};
use crate::engine::{LogitSource, Modality, Query, SourceDescriptor};
use crate::error::{BridgeError, SourceError, SyntheticError};
use crate::math::LogitVector;
use crate::synthetic::{build_sources, Scene, SyntheticLvlm, SyntheticSource};

/// Counters from one served connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: usize,
    pub errors: usize,
    pub malformed: usize,
    /// True when the peer asked to shut down rather than hanging up.
    pub shutdown: bool,
}

fn write_response(out: &mut impl Write, resp: &BridgeResponse) -> Result<(), BridgeError> {
    let mut line = match resp.encode() {
        Ok(line) => line,
        Err(e) => BridgeResponse::Error {
            request_id: resp.request_id(),
            error_message: e.to_string(),
        }
        .encode()?,
    };
    // One write per message keeps small TCP replies in a single segment.
    line.push('\n');
    out.write_all(line.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Answers requests from `input` on `output` until a shutdown request or
/// end of input.
///
/// A line that does not parse as a request is answered with an error
/// response carrying request id 0, and the connection stays open.
pub fn serve_connection<S, R, W>(source: &mut S, input: R, mut output: W) -> Result<ServeStats, BridgeError>
where
    S: LogitSource + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut stats = ServeStats::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.requests += 1;
        let request = match BridgeRequest::decode(&line) {
            Ok(r) => r,
            Err(e) => {
                stats.malformed += 1;
                let request_id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(serde_json::Value::as_u64))
                    .unwrap_or(0);
                write_response(
                    &mut output,
                    &BridgeResponse::Error {
                        request_id,
                        error_message: e.to_string(),
                    },
                )?;
                continue;
            }
        };
        let response = match request {
            BridgeRequest::Hello {
                request_id,
                protocol_version,
            } if protocol_version != PROTOCOL_VERSION => BridgeResponse::Error {
                request_id,
                error_message: format!("unsupported protocol version {protocol_version}"),
            },
            BridgeRequest::Hello { request_id, .. } => BridgeResponse::HelloAck {
                request_id,
                vocab_size: source.descriptor().vocab_size,
            },
            BridgeRequest::Logits {
                request_id,
                modality,
                context_tokens,
                visual_ref,
            } => {
                let query = Query {
                    modality,
                    context: &context_tokens,
                    visual_ref: visual_ref.as_deref(),
                };
                match source.logits(&query) {
                    Ok(logits) => BridgeResponse::Logits {
                        request_id,
                        logits: logits.into_inner(),
                    },
                    Err(e) => BridgeResponse::Error {
                        request_id,
                        error_message: e.to_string(),
                    },
                }
            }
            BridgeRequest::Shutdown { .. } => {
                stats.shutdown = true;
                break;
            }
        };
        if matches!(response, BridgeResponse::Error { .. }) {
            stats.errors += 1;
        }
        write_response(&mut output, &response)?;
    }
    Ok(stats)
}

/// Serves a set of synthetic scenes behind one source, picking the scene
/// named by each multimodal query's `visual_ref`. Text-only queries read the
/// shared prior.
#[derive(Debug, Clone)]
pub struct SceneSetSource {
    model: Arc<SyntheticLvlm>,
    scenes: BTreeMap<String, SyntheticSource>,
    descriptor: SourceDescriptor,
}

impl SceneSetSource {
    pub fn new(model: Arc<SyntheticLvlm>, scenes: &[Scene]) -> Result<Self, SyntheticError> {
        let scenes = scenes
            .iter()
            .map(|s| Ok((s.scene_id.clone(), build_sources(s, Arc::clone(&model))?)))
            .collect::<Result<BTreeMap<_, _>, SyntheticError>>()?;
        let descriptor = SourceDescriptor {
            vocab_size: model.grammar().vocab_size(),
            supports_visual: true,
            source_id: "synthetic-scenes".into(),
            deterministic: true,
            concurrent_reads: true,
        };
        Ok(Self {
            model,
            scenes,
            descriptor,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

impl LogitSource for SceneSetSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        let vocab = self.model.grammar().vocab();
        if query.context.is_empty() || query.context.iter().any(|&t| !vocab.contains(t)) {
            return Err(SourceError::new(&self.descriptor.source_id, "context token outside vocabulary"));
        }
        match (query.modality, query.visual_ref) {
            (Modality::TextOnly, _) => Ok(self.model.prior().logits_for(query.context).clone()),
            (Modality::Multimodal, None) => Err(SourceError::new(
                &self.descriptor.source_id,
                "multimodal query without visual_ref",
            )),
            (Modality::Multimodal, Some(v)) => match self.scenes.get_mut(v) {
                Some(scene) => scene.logits(query),
                None => Err(SourceError::new(
                    &self.descriptor.source_id,
                    format!("unknown visual_ref `{v}`"),
                )),
            },
        }
    }
}
