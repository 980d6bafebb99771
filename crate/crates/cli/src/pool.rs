//! A [`SourceFactory`] that hands out pooled adapter connections.

use std::sync::Mutex;

use nolan_core::bridge::{BridgeOptions, BridgeSource, Endpoint};
use nolan_core::engine::{LogitSource, Query, SourceDescriptor};
use nolan_core::error::{EvalError, SourceError};
use nolan_core::eval::{BoxedSource, SourceFactory};
use nolan_core::math::LogitVector;
use nolan_core::vocab::Vocabulary;

/// Connections are opened on demand, at most one per concurrent session,
/// and returned to the pool when a session ends. Broken connections are
/// dropped instead of returned.
#[derive(Debug)]
pub struct BridgeFactory {
    endpoint: Endpoint,
    options: BridgeOptions,
    vocab: Vocabulary,
    idle: Mutex<Vec<BridgeSource>>,
}

impl BridgeFactory {
    pub fn new(endpoint: Endpoint, vocab: Vocabulary) -> Self {
        let options = BridgeOptions {
            expected_vocab: Some(vocab.size()),
            ..BridgeOptions::default()
        };
        Self {
            endpoint,
            options,
            vocab,
            idle: Mutex::new(Vec::new()),
        }
    }

    fn take(&self) -> Result<BridgeSource, EvalError> {
        if let Some(src) = self.idle.lock().expect("pool lock").pop() {
            return Ok(src);
        }
        BridgeSource::connect(&self.endpoint, self.options)
            .map_err(|e| EvalError::SourceUnavailable(format!("{}: {e}", self.endpoint)))
    }
}

struct Pooled<'a> {
    src: Option<BridgeSource>,
    pool: &'a Mutex<Vec<BridgeSource>>,
}

impl LogitSource for Pooled<'_> {
    fn descriptor(&self) -> &SourceDescriptor {
        self.src.as_ref().expect("present until drop").descriptor()
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        self.src.as_mut().expect("present until drop").logits(query)
    }
}

impl Drop for Pooled<'_> {
    fn drop(&mut self) {
        if let Some(mut src) = self.src.take() {
            if !src.connection().is_broken() {
                if let Ok(mut idle) = self.pool.lock() {
                    idle.push(src);
                }
            }
        }
    }
}

impl SourceFactory for BridgeFactory {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn model_name(&self) -> String {
        "bridge".into()
    }

    fn source(&self, _scene_id: &str) -> Result<BoxedSource<'_>, EvalError> {
        Ok(Box::new(Pooled {
            src: Some(self.take()?),
            pool: &self.idle,
        }))
    }
}
