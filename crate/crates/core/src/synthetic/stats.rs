use crate::synthetic::corpus::Corpus;
use crate::synthetic::grammar::ToyGrammar;
use crate::vocab::TokenId;

/// Object statistics gathered from a caption corpus.
///
/// `doc_count[o]` counts documents mentioning `o`; `cooccurrence[a][b]`
/// counts documents mentioning both; `adjacency[a][b]` counts adjacent
/// mentions of `a` and `b` in either order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStats {
    doc_count: Vec<u64>,
    cooccurrence: Vec<Vec<u64>>,
    adjacency: Vec<Vec<u64>>,
}

impl ObjectStats {
    pub fn from_captions(captions: &Corpus, grammar: &ToyGrammar) -> Self {
        let v = grammar.vocab_size();
        let mut doc_count = vec![0u64; v];
        let mut cooccurrence = vec![vec![0u64; v]; v];
        let mut adjacency = vec![vec![0u64; v]; v];
        for doc in &captions.docs {
            let mentioned: Vec<TokenId> = doc.iter().copied().filter(|&t| grammar.is_object(t)).collect();
            let mut distinct = mentioned.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for &a in &distinct {
                doc_count[a as usize] += 1;
                for &b in &distinct {
                    if a != b {
                        cooccurrence[a as usize][b as usize] += 1;
                    }
                }
            }
            for pair in mentioned.windows(2) {
                let (a, b) = (pair[0] as usize, pair[1] as usize);
                if a != b {
                    adjacency[a][b] += 1;
                    adjacency[b][a] += 1;
                }
            }
        }
        Self {
            doc_count,
            cooccurrence,
            adjacency,
        }
    }

    pub fn frequency(&self, object: TokenId) -> u64 {
        self.doc_count[object as usize]
    }

    pub fn cooccurrence(&self, a: TokenId, b: TokenId) -> u64 {
        self.cooccurrence[a as usize][b as usize]
    }

    pub fn adjacency(&self, a: TokenId, b: TokenId) -> u64 {
        self.adjacency[a as usize][b as usize]
    }

    /// Fraction of documents mentioning `given` that also mention `object`;
    /// 0 when `given` never appears.
    pub fn conditional(&self, object: TokenId, given: TokenId) -> f64 {
        match self.doc_count[given as usize] {
            0 => 0.0,
            n => self.cooccurrence[given as usize][object as usize] as f64 / n as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_by_hand() {
        let g = ToyGrammar::new(["bear", "whale", "fish"]).unwrap();
        let captions = Corpus::new(vec![
            g.encode("describe bear whale").unwrap(),
            g.encode("describe whale bear fish").unwrap(),
            g.encode("describe fish").unwrap(),
        ]);
        let stats = ObjectStats::from_captions(&captions, &g);
        let (bear, whale, fish) = (6, 7, 8);
        assert_eq!(stats.frequency(bear), 2);
        assert_eq!(stats.frequency(fish), 2);
        assert_eq!(stats.cooccurrence(bear, whale), 2);
        assert_eq!(stats.cooccurrence(whale, fish), 1);
        assert_eq!(stats.adjacency(bear, whale), 2);
        assert_eq!(stats.adjacency(whale, bear), 2);
        assert_eq!(stats.adjacency(whale, fish), 0);
        assert_eq!(stats.adjacency(bear, fish), 1);
        assert_eq!(stats.conditional(fish, bear), 0.5);
        assert_eq!(stats.conditional(bear, g.yes()), 0.0);
    }
}
