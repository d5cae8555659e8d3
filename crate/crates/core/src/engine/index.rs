use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Denominator, DetectionConfig, Theta};
use crate::corpus::Corpus;
use crate::token::TokenBag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position in [`InvertedIndex::blocks`].
    pub block: u32,
    /// Frequency of the token in that block.
    pub freq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedBlock {
    /// Position of the block in the corpus.
    pub corpus_pos: u32,
    pub size: u64,
    /// `(token rank, frequency)` sorted by rank.
    pub ranked: Vec<(u32, u32)>,
    /// Position of this block when blocks are ordered by id.
    pub id_order: u32,
}

/// Token → postings over the prefixes of a corpus's blocks.
///
/// Tokens are ranked by ascending corpus frequency, ties broken by the
/// token string, so a build is reproducible for a given corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    pub(crate) theta: Theta,
    pub(crate) denominator: Denominator,
    pub(crate) min_tokens: u64,
    pub(crate) corpus_hash: String,
    /// Tokens by rank.
    pub(crate) tokens: Vec<String>,
    pub(crate) ranks: HashMap<String, u32>,
    /// Postings by token rank.
    pub(crate) postings: Vec<Vec<Posting>>,
    pub(crate) blocks: Vec<IndexedBlock>,
}

impl InvertedIndex {
    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn denominator(&self) -> Denominator {
        self.denominator
    }

    pub fn min_tokens(&self) -> u64 {
        self.min_tokens
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[IndexedBlock] {
        &self.blocks
    }

    /// Tokens in global order, rarest first.
    pub fn token_order(&self) -> &[String] {
        &self.tokens
    }

    pub fn rank(&self, token: &str) -> Option<u32> {
        self.ranks.get(token).copied()
    }

    pub fn postings(&self, token: &str) -> &[Posting] {
        self.rank(token)
            .map(|r| self.postings[r as usize].as_slice())
            .unwrap_or(&[])
    }

    /// Total number of posting entries.
    pub fn posting_count(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    /// Number of distinct prefix tokens indexed for the block at `pos`.
    pub fn indexed_prefix_tokens(&self, pos: usize) -> usize {
        prefix_ranks(&self.blocks[pos].ranked, self.theta.prefix_len(self.blocks[pos].size)).count()
    }

    pub(crate) fn from_parts(
        theta: Theta,
        denominator: Denominator,
        min_tokens: u64,
        corpus_hash: String,
        tokens: Vec<String>,
        blocks: Vec<IndexedBlock>,
        postings: Vec<Vec<Posting>>,
    ) -> Self {
        let ranks = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            theta,
            denominator,
            min_tokens,
            corpus_hash,
            tokens,
            ranks,
            postings,
            blocks,
        }
    }
}

/// Ranks touched by the first `prefix` token occurrences of a rank-sorted
/// bag.
pub(crate) fn prefix_ranks(ranked: &[(u32, u32)], prefix: u64) -> impl Iterator<Item = (u32, u32)> + '_ {
    let mut seen = 0u64;
    ranked.iter().copied().take_while(move |&(_, freq)| {
        let take = seen < prefix;
        seen += u64::from(freq);
        take
    })
}

fn ranked_bag(bag: &TokenBag, ranks: &HashMap<String, u32>) -> Vec<(u32, u32)> {
    let mut v: Vec<(u32, u32)> = bag.iter().map(|(t, f)| (ranks[t], f)).collect();
    v.sort_unstable();
    v
}

/// Build the prefix-filtered index over every corpus block that meets
/// `config.min_tokens`.
pub fn build_index(corpus: &Corpus, config: &DetectionConfig) -> InvertedIndex {
    let eligible: Vec<usize> = corpus
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.total_tokens() >= config.min_tokens && b.total_tokens() > 0)
        .map(|(i, _)| i)
        .collect();

    let mut freq: HashMap<&str, u64> = HashMap::new();
    for &i in &eligible {
        for (tok, f) in corpus.blocks[i].tokens.iter() {
            *freq.entry(tok).or_insert(0) += u64::from(f);
        }
    }
    let mut order: Vec<(&str, u64)> = freq.into_iter().collect();
    order.sort_unstable_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = order.iter().map(|(t, _)| t.to_string()).collect();
    let ranks: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut by_id: Vec<usize> = (0..eligible.len()).collect();
    by_id.sort_by(|&a, &b| corpus.blocks[eligible[a]].block_id.cmp(&corpus.blocks[eligible[b]].block_id));
    let mut id_order = vec![0u32; eligible.len()];
    for (order_pos, &pos) in by_id.iter().enumerate() {
        id_order[pos] = order_pos as u32;
    }

    let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); tokens.len()];
    let mut blocks = Vec::with_capacity(eligible.len());
    for (pos, &ci) in eligible.iter().enumerate() {
        let block = &corpus.blocks[ci];
        let ranked = ranked_bag(&block.tokens, &ranks);
        let size = block.total_tokens();
        for (rank, freq) in prefix_ranks(&ranked, config.theta.prefix_len(size)) {
            postings[rank as usize].push(Posting {
                block: pos as u32,
                freq,
            });
        }
        blocks.push(IndexedBlock {
            corpus_pos: ci as u32,
            size,
            ranked,
            id_order: id_order[pos],
        });
    }

    InvertedIndex::from_parts(
        config.theta,
        config.denominator,
        config.min_tokens,
        corpus.content_hash.clone(),
        tokens,
        blocks,
        postings,
    )
}

/// A corpus together with the index built over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedCorpus {
    pub corpus: Corpus,
    pub index: InvertedIndex,
}

impl IndexedCorpus {
    pub fn build(corpus: Corpus, config: &DetectionConfig) -> Self {
        let index = build_index(&corpus, config);
        Self { corpus, index }
    }
}

/// Order used for query tokens: tokens unseen in the corpus first
/// (lexicographically), then by corpus rank.
pub(crate) fn query_order(a: &(Option<u32>, &str), b: &(Option<u32>, &str)) -> Ordering {
    match (a.0, b.0) {
        (None, None) => a.1.cmp(b.1),
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.cmp(&y),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{CodeBlock, Granularity, SourceLocator};
    use crate::license::LicenseTag;

    pub(crate) fn block(id: &str, tokens: &[(&str, u32)]) -> CodeBlock {
        let mut bag = TokenBag::new();
        for (t, n) in tokens {
            bag.add(*t, *n);
        }
        CodeBlock {
            block_id: id.to_string(),
            corpus_id: "c".into(),
            locator: SourceLocator::file(id),
            granularity: Granularity::File,
            raw_text: String::new(),
            tokens: bag,
            last_modified: None,
            license: LicenseTag::none(),
            context: None,
        }
    }

    fn cfg(theta: f64) -> DetectionConfig {
        DetectionConfig {
            min_tokens: 1,
            ..DetectionConfig::with_theta(theta).unwrap()
        }
    }

    #[test]
    fn ten_token_block_indexes_three_tokens() {
        let toks: Vec<(String, u32)> = (0..10).map(|i| (format!("t{i}"), 1)).collect();
        let refs: Vec<(&str, u32)> = toks.iter().map(|(t, n)| (t.as_str(), *n)).collect();
        let corpus = Corpus::new("c", vec![block("b", &refs)]);
        let idx = build_index(&corpus, &cfg(0.8));
        assert_eq!(idx.posting_count(), 3);
        assert_eq!(idx.indexed_prefix_tokens(0), 3);
        // Ties broken lexicographically: t0, t1, t2 are indexed.
        for t in ["t0", "t1", "t2"] {
            assert_eq!(idx.postings(t).len(), 1, "{t}");
        }
        let idx = build_index(&corpus, &cfg(1.0));
        assert_eq!(idx.posting_count(), 1);
    }

    #[test]
    fn multiset_prefix_counts_occurrences() {
        // Rarest first: a(1), b(3 in block, 3 total), c(6). t = 10, p = 3.
        let corpus = Corpus::new("c", vec![block("x", &[("a", 1), ("b", 3), ("c", 6)])]);
        let idx = build_index(&corpus, &cfg(0.8));
        assert_eq!(idx.token_order(), ["a", "b", "c"]);
        assert_eq!(idx.postings("a").len(), 1);
        assert_eq!(idx.postings("b"), &[Posting { block: 0, freq: 3 }]);
        assert!(idx.postings("c").is_empty());
    }

    #[test]
    fn rarity_order_and_determinism() {
        let corpus = Corpus::new(
            "c",
            vec![
                block("x", &[("common", 3), ("rare", 1)]),
                block("y", &[("common", 3), ("mid", 2)]),
            ],
        );
        let a = build_index(&corpus, &cfg(0.8));
        let b = build_index(&corpus, &cfg(0.8));
        assert_eq!(a, b);
        assert_eq!(a.token_order(), ["rare", "mid", "common"]);
    }

    #[test]
    fn identical_blocks_contribute_identically() {
        let corpus = Corpus::new(
            "c",
            vec![block("x", &[("p", 2), ("q", 5)]), block("y", &[("p", 2), ("q", 5)])],
        );
        let idx = build_index(&corpus, &cfg(0.8));
        for tok in idx.token_order() {
            let blocks: Vec<u32> = idx.postings(tok).iter().map(|p| p.block).collect();
            assert!(blocks.is_empty() || blocks == [0, 1], "{tok}: {blocks:?}");
        }
    }

    #[test]
    fn empty_and_undersized() {
        let idx = build_index(&Corpus::new("c", vec![]), &cfg(0.8));
        assert_eq!(idx.block_count(), 0);
        let corpus = Corpus::new("c", vec![block("x", &[("a", 2)])]);
        let idx = build_index(&corpus, &DetectionConfig { min_tokens: 3, ..cfg(0.8) });
        assert_eq!(idx.block_count(), 0);
    }
}
