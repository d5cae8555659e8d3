use rayon::prelude::*;

use super::index::{query_order, IndexedCorpus};
use super::{size_class, ClonePair, Denominator, DetectionConfig, PairSide};
use crate::corpus::CodeBlock;
use crate::error::EngineError;
use crate::license::CompatibilityMatrix;

struct RankedQuery<'a> {
    block: &'a CodeBlock,
    /// Tokens present in the corpus, as `(rank, freq)` sorted by rank.
    known: Vec<(u32, u32)>,
    /// Ranks touched by the query prefix.
    probe: Vec<u32>,
}

fn rank_query<'a>(block: &'a CodeBlock, ic: &IndexedCorpus, config: &DetectionConfig) -> RankedQuery<'a> {
    let index = &ic.index;
    let mut ordered: Vec<(Option<u32>, &str, u32)> = block
        .tokens
        .iter()
        .map(|(t, f)| (index.rank(t), t, f))
        .collect();
    ordered.sort_by(|a, b| query_order(&(a.0, a.1), &(b.0, b.1)));

    let prefix = config.theta.prefix_len(block.total_tokens());
    let mut probe = Vec::new();
    let mut seen = 0u64;
    for &(rank, _, freq) in &ordered {
        if seen >= prefix {
            break;
        }
        seen += u64::from(freq);
        if let Some(r) = rank {
            probe.push(r);
        }
    }
    let known = ordered
        .iter()
        .filter_map(|&(rank, _, freq)| rank.map(|r| (r, freq)))
        .collect();
    RankedQuery { block, known, probe }
}

/// Overlap of two rank-sorted bags.
fn ranked_overlap(a: &[(u32, u32)], b: &[(u32, u32)]) -> u64 {
    let (mut i, mut j, mut sum) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += u64::from(a[i].1.min(b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

fn make_pair(
    query: &CodeBlock,
    corpus_block: &CodeBlock,
    overlap: u64,
    required: u64,
    matrix: &CompatibilityMatrix,
) -> ClonePair {
    let larger = query.total_tokens().max(corpus_block.total_tokens());
    ClonePair {
        query_block_id: query.block_id.clone(),
        corpus_block_id: corpus_block.block_id.clone(),
        overlap,
        required,
        similarity: overlap as f64 / larger as f64,
        size_class: size_class(query.line_count().max(corpus_block.line_count())),
        verdict: matrix.classify(&query.license, &corpus_block.license),
        query: PairSide::from(query),
        corpus: PairSide::from(corpus_block),
    }
}

fn is_self_pair(config: &DetectionConfig, q: &CodeBlock, c: &CodeBlock) -> bool {
    config.exclude_self_pairs && q.block_id == c.block_id && q.corpus_id == c.corpus_id
}

fn check_config(ic: &IndexedCorpus, config: &DetectionConfig) -> Result<(), EngineError> {
    config.validate()?;
    if ic.index.theta() != config.theta {
        return Err(EngineError::ThetaMismatch {
            index: ic.index.theta().value(),
            requested: config.theta.value(),
        });
    }
    if ic.index.denominator() != config.denominator {
        return Err(EngineError::DenominatorMismatch {
            index: ic.index.denominator(),
            requested: config.denominator,
        });
    }
    if ic.index.min_tokens() != config.min_tokens {
        return Err(EngineError::MinTokensMismatch {
            index: ic.index.min_tokens(),
            requested: config.min_tokens,
        });
    }
    Ok(())
}

fn sort_pairs(pairs: &mut [ClonePair]) {
    pairs.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// Every `(query, corpus)` pair meeting the clone threshold, sorted by
/// `(query id, corpus id)`.
///
/// Each query block is an independent job on the rayon pool; candidates for
/// a query are verified in ascending corpus block id.
pub fn detect_clones(
    query: &[CodeBlock],
    ic: &IndexedCorpus,
    config: &DetectionConfig,
    matrix: &CompatibilityMatrix,
) -> Result<Vec<ClonePair>, EngineError> {
    check_config(ic, config)?;
    if config.denominator == Denominator::Query {
        return Ok(exhaustive(query, ic, config, matrix));
    }
    let index = &ic.index;
    let mut pairs: Vec<ClonePair> = query
        .par_iter()
        .filter(|q| q.total_tokens() >= config.min_tokens && q.total_tokens() > 0)
        .flat_map_iter(|q| {
            let rq = rank_query(q, ic, config);
            let q_size = q.total_tokens();
            let mut candidates: Vec<u32> = rq
                .probe
                .iter()
                .flat_map(|&r| index.postings[r as usize].iter().map(|p| p.block))
                .collect();
            candidates.sort_unstable_by_key(|&b| index.blocks[b as usize].id_order);
            candidates.dedup();
            candidates
                .into_iter()
                .filter_map(|b| {
                    let ib = &index.blocks[b as usize];
                    let required = config.required(q_size, ib.size);
                    if q_size.min(ib.size) < required {
                        return None;
                    }
                    let cb = &ic.corpus.blocks[ib.corpus_pos as usize];
                    if is_self_pair(config, rq.block, cb) {
                        return None;
                    }
                    let overlap = ranked_overlap(&rq.known, &ib.ranked);
                    (overlap >= required).then(|| make_pair(rq.block, cb, overlap, required, matrix))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    sort_pairs(&mut pairs);
    Ok(pairs)
}

fn exhaustive(
    query: &[CodeBlock],
    ic: &IndexedCorpus,
    config: &DetectionConfig,
    matrix: &CompatibilityMatrix,
) -> Vec<ClonePair> {
    let index = &ic.index;
    let mut pairs: Vec<ClonePair> = query
        .par_iter()
        .filter(|q| q.total_tokens() >= config.min_tokens && q.total_tokens() > 0)
        .flat_map_iter(|q| {
            let rq = rank_query(q, ic, config);
            index
                .blocks
                .iter()
                .filter_map(|ib| {
                    let cb = &ic.corpus.blocks[ib.corpus_pos as usize];
                    if is_self_pair(config, q, cb) {
                        return None;
                    }
                    let required = config.required(q.total_tokens(), ib.size);
                    let overlap = ranked_overlap(&rq.known, &ib.ranked);
                    (overlap >= required).then(|| make_pair(q, cb, overlap, required, matrix))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    sort_pairs(&mut pairs);
    pairs
}

/// Exhaustive pairwise comparison without candidate filtering. Same result
/// contract as [`detect_clones`]; quadratic in corpus size.
pub fn detect_exhaustive(
    query: &[CodeBlock],
    ic: &IndexedCorpus,
    config: &DetectionConfig,
    matrix: &CompatibilityMatrix,
) -> Result<Vec<ClonePair>, EngineError> {
    check_config(ic, config)?;
    Ok(exhaustive(query, ic, config, matrix))
}
