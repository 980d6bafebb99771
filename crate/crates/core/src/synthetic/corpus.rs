use std::io::{BufRead, Write};

use crate::error::SyntheticError;
use crate::vocab::{TokenId, Vocabulary};

/// Token documents, one per line in the on-disk form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn new(docs: Vec<Vec<TokenId>>) -> Self {
        Self { docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.iter().all(Vec::is_empty)
    }

    /// Whitespace-tokenized text, one document per line. Blank lines are skipped.
    pub fn parse<R: BufRead>(input: R, vocab: &Vocabulary) -> Result<Self, SyntheticError> {
        let mut docs = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc = line
                .split_whitespace()
                .map(|t| {
                    vocab.id(t).ok_or_else(|| SyntheticError::Parse {
                        line: n + 1,
                        message: format!("unknown token `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            docs.push(doc);
        }
        Ok(Self { docs })
    }

    pub fn write<W: Write>(&self, mut out: W, vocab: &Vocabulary) -> std::io::Result<()> {
        for doc in &self.docs {
            writeln!(out, "{}", vocab.render(doc))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let vocab = Vocabulary::with_tokens(
            ["<s>", "</s>", "a", "b"].iter().map(|s| s.to_string()).collect(),
            "<s>",
            "</s>",
        )
        .unwrap();
        let text = "a b a\n\nb  b\n";
        let corpus = Corpus::parse(text.as_bytes(), &vocab).unwrap();
        assert_eq!(corpus.docs, vec![vec![2, 3, 2], vec![3, 3]]);
        let mut out = Vec::new();
        corpus.write(&mut out, &vocab).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a b a\nb b\n");
        let err = Corpus::parse("a c".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, SyntheticError::Parse { line: 1, .. }));
    }
}
