use serde::{Deserialize, Serialize};

use crate::error::SyntheticError;
use crate::vocab::{TokenId, Vocabulary};

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const YES_TOKEN: &str = "yes";
pub const NO_TOKEN: &str = "no";
pub const IS_TOKEN: &str = "is";
pub const DESCRIBE_TOKEN: &str = "describe";

/// Fixed non-object tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 6] = [BOS_TOKEN, EOS_TOKEN, YES_TOKEN, NO_TOKEN, IS_TOKEN, DESCRIBE_TOKEN];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GrammarSpec {
    objects: Vec<String>,
}

/// Vocabulary of the toy vision-language world: the special tokens followed
/// by one token per object. Questions take the form `is OBJECT`, answered by
/// `yes` or `no`; descriptions start with `describe`.
///
/// Serialized as `{"objects": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GrammarSpec", into = "GrammarSpec")]
pub struct ToyGrammar {
    vocab: Vocabulary,
    objects: Vec<TokenId>,
}

impl TryFrom<GrammarSpec> for ToyGrammar {
    type Error = SyntheticError;

    fn try_from(spec: GrammarSpec) -> Result<Self, Self::Error> {
        ToyGrammar::new(spec.objects)
    }
}

impl From<ToyGrammar> for GrammarSpec {
    fn from(g: ToyGrammar) -> Self {
        GrammarSpec {
            objects: g.objects.iter().map(|&o| g.name(o).to_string()).collect(),
        }
    }
}

impl ToyGrammar {
    pub fn new<S: Into<String>>(objects: impl IntoIterator<Item = S>) -> Result<Self, SyntheticError> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(objects.into_iter().map(Into::into));
        if tokens.len() == SPECIAL_TOKENS.len() {
            return Err(SyntheticError::InvalidScene {
                scene_id: String::new(),
                reason: "grammar needs at least one object".into(),
            });
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(SyntheticError::UnknownToken(bad.clone()));
        }
        let vocab = Vocabulary::with_tokens(tokens, BOS_TOKEN, EOS_TOKEN)?;
        let objects = (SPECIAL_TOKENS.len() as TokenId..vocab.size() as TokenId).collect();
        Ok(Self { vocab, objects })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn bos(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn yes(&self) -> TokenId {
        2
    }

    pub fn no(&self) -> TokenId {
        3
    }

    pub fn is(&self) -> TokenId {
        4
    }

    pub fn describe(&self) -> TokenId {
        5
    }

    pub fn objects(&self) -> &[TokenId] {
        &self.objects
    }

    pub fn is_object(&self, id: TokenId) -> bool {
        id as usize >= SPECIAL_TOKENS.len() && (id as usize) < self.vocab.size()
    }

    pub fn id(&self, token: &str) -> Result<TokenId, SyntheticError> {
        self.vocab.id(token).ok_or_else(|| SyntheticError::UnknownToken(token.to_string()))
    }

    pub fn object_id(&self, token: &str) -> Result<TokenId, SyntheticError> {
        let id = self.id(token)?;
        if self.is_object(id) {
            Ok(id)
        } else {
            Err(SyntheticError::NotAnObject(id))
        }
    }

    pub fn name(&self, id: TokenId) -> &str {
        self.vocab.token(id).unwrap_or("?")
    }

    /// Whitespace-separated token strings to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, SyntheticError> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.vocab.render(ids)
    }

    /// The question prompt `is OBJECT`.
    pub fn pope_prompt(&self, object: TokenId) -> Vec<TokenId> {
        vec![self.is(), object]
    }

    /// The object asked about when `context` ends in a question, i.e. the
    /// next token is the answer.
    pub fn queried_object(&self, context: &[TokenId]) -> Option<TokenId> {
        match context {
            [.., q, o] if *q == self.is() && self.is_object(*o) => Some(*o),
            _ => None,
        }
    }
}
