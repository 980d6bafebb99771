use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SourceError;
use crate::math::LogitVector;
use crate::vocab::TokenId;

/// Which conditional a query asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Conditioned on the visual input and the text context.
    Multimodal,
    /// Conditioned on the text context alone.
    TextOnly,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Multimodal => "multimodal",
            Modality::TextOnly => "text_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub vocab_size: usize,
    pub supports_visual: bool,
    pub source_id: String,
    /// Same `(context, modality)` query always yields the same logits.
    pub deterministic: bool,
    /// Safe to query from several threads at once.
    pub concurrent_reads: bool,
}

/// One next-token query. `context` is the full token history, BOS included.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub modality: Modality,
    pub context: &'a [TokenId],
    pub visual_ref: Option<&'a str>,
}

/// Anything that can produce next-token logits for a context.
pub trait LogitSource {
    fn descriptor(&self) -> &SourceDescriptor;

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError>;
}

impl<S: LogitSource + ?Sized> LogitSource for Box<S> {
    fn descriptor(&self) -> &SourceDescriptor {
        (**self).descriptor()
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        (**self).logits(query)
    }
}

impl<S: LogitSource + ?Sized> LogitSource for &mut S {
    fn descriptor(&self) -> &SourceDescriptor {
        (**self).descriptor()
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        (**self).logits(query)
    }
}

/// Presents a source's text-only stream as if it were multimodal. Used as a
/// contrast source, it makes generic contrast decoding coincide with the
/// dual-stream mode.
#[derive(Debug, Clone)]
pub struct TextOnlyView<S> {
    inner: S,
    descriptor: SourceDescriptor,
}

impl<S: LogitSource> TextOnlyView<S> {
    pub fn new(inner: S) -> Self {
        let mut descriptor = inner.descriptor().clone();
        descriptor.source_id = format!("{}:text_only", descriptor.source_id);
        descriptor.supports_visual = false;
        Self { inner, descriptor }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: LogitSource> LogitSource for TextOnlyView<S> {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        self.inner.logits(&Query {
            modality: Modality::TextOnly,
            context: query.context,
            visual_ref: None,
        })
    }
}

/// Counts queries per modality on the way through.
#[derive(Debug, Clone)]
pub struct CountingSource<S> {
    inner: S,
    pub multimodal: usize,
    pub text_only: usize,
}

impl<S> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            multimodal: 0,
            text_only: 0,
        }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: LogitSource> LogitSource for CountingSource<S> {
    fn descriptor(&self) -> &SourceDescriptor {
        self.inner.descriptor()
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        match query.modality {
            Modality::Multimodal => self.multimodal += 1,
            Modality::TextOnly => self.text_only += 1,
        }
        self.inner.logits(query)
    }
}

/// Adds a fixed delay to every query, emulating the cost of a forward pass.
#[derive(Debug, Clone)]
pub struct DelayedSource<S> {
    inner: S,
    delay: std::time::Duration,
}

impl<S> DelayedSource<S> {
    pub fn new(inner: S, delay: std::time::Duration) -> Self {
        Self { inner, delay }
    }
}

impl<S: LogitSource> LogitSource for DelayedSource<S> {
    fn descriptor(&self) -> &SourceDescriptor {
        self.inner.descriptor()
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        std::thread::sleep(self.delay);
        self.inner.logits(query)
    }
}
