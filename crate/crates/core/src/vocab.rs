use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;

pub type TokenId = u32;

/// Token inventory shared by the engine and its logit sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    bos: TokenId,
    eos: TokenId,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(size: usize, bos: TokenId, eos: TokenId) -> Result<Self, EngineError> {
        let vocab = Self {
            size,
            tokens: None,
            bos,
            eos,
            index: HashMap::new(),
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn with_tokens(tokens: Vec<String>, bos: &str, eos: &str) -> Result<Self, EngineError> {
        let index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        if index.len() != tokens.len() {
            return Err(EngineError::InvalidVocabulary("duplicate token strings".into()));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| EngineError::InvalidVocabulary(format!("missing special token `{name}`")))
        };
        let vocab = Self {
            size: tokens.len(),
            bos: lookup(bos)?,
            eos: lookup(eos)?,
            tokens: Some(tokens),
            index,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.size < 2 {
            return Err(EngineError::InvalidVocabulary(format!("size {} < 2", self.size)));
        }
        if self.bos == self.eos {
            return Err(EngineError::InvalidVocabulary("bos and eos must differ".into()));
        }
        for t in [self.bos, self.eos] {
            if t as usize >= self.size {
                return Err(EngineError::TokenOutOfRange(t));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn contains(&self, token: TokenId) -> bool {
        (token as usize) < self.size
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        if self.index.is_empty() {
            if let Some(tokens) = &self.tokens {
                return tokens.iter().position(|t| t == token).map(|i| i as TokenId);
            }
        }
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.as_ref()?.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> Option<&[String]> {
        self.tokens.as_deref()
    }

    /// Renders ids as display strings, falling back to `#id`.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| match self.token(id) {
                Some(t) => t.to_string(),
                None => format!("#{id}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
