//! Deterministic synthetic corpora for tests and benchmarks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CodeBlock, Granularity, SourceLocator};
use crate::license::LicenseTag;
use crate::token::TokenBag;

/// Shape of a batch of token-level blocks.
#[derive(Debug, Clone)]
pub struct BlockShape {
    pub count: usize,
    pub min_total: u32,
    pub max_total: u32,
    pub vocabulary: usize,
    /// Chance that a block is a perturbed copy of an earlier one.
    pub copy_rate: f64,
}

impl Default for BlockShape {
    fn default() -> Self {
        Self {
            count: 200,
            min_total: 23,
            max_total: 200,
            vocabulary: 40,
            copy_rate: 0.4,
        }
    }
}

fn fresh_bag(rng: &mut ChaCha8Rng, total: u32, vocabulary: usize) -> TokenBag {
    let mut bag = TokenBag::new();
    for _ in 0..total {
        // Skewed draw so some tokens are much rarer than others.
        let r: f64 = rng.gen();
        let idx = ((r * r) * vocabulary as f64) as usize;
        bag.insert(format!("t{idx}"));
    }
    bag
}

fn perturb(rng: &mut ChaCha8Rng, base: &TokenBag, shape: &BlockShape) -> TokenBag {
    let mut tokens: Vec<String> = base
        .iter()
        .flat_map(|(t, n)| std::iter::repeat_n(t.to_string(), n as usize))
        .collect();
    let edits = rng.gen_range(0..=tokens.len() / 3);
    for _ in 0..edits {
        match rng.gen_range(0..3) {
            0 if tokens.len() > shape.min_total as usize => {
                let i = rng.gen_range(0..tokens.len());
                tokens.swap_remove(i);
            }
            1 if tokens.len() < shape.max_total as usize => {
                tokens.push(format!("t{}", rng.gen_range(0..shape.vocabulary)));
            }
            _ => {
                let i = rng.gen_range(0..tokens.len());
                tokens[i] = format!("t{}", rng.gen_range(0..shape.vocabulary));
            }
        }
    }
    tokens.into_iter().collect()
}

/// Blocks whose token bags are drawn at random, a share of them perturbed
/// copies of earlier blocks so that clones at many similarity levels occur.
pub fn token_blocks(seed: u64, corpus_id: &str, shape: &BlockShape) -> Vec<CodeBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags: Vec<TokenBag> = Vec::with_capacity(shape.count);
    for _ in 0..shape.count {
        let bag = if !bags.is_empty() && rng.gen_bool(shape.copy_rate) {
            let base = bags[rng.gen_range(0..bags.len())].clone();
            perturb(&mut rng, &base, shape)
        } else {
            let total = rng.gen_range(shape.min_total..=shape.max_total);
            fresh_bag(&mut rng, total, shape.vocabulary)
        };
        bags.push(bag);
    }
    bags.into_iter()
        .enumerate()
        .map(|(i, tokens)| bag_block(corpus_id, &format!("b{i:05}"), tokens))
        .collect()
}

/// A block holding `tokens` with no source text.
pub fn bag_block(corpus_id: &str, name: &str, tokens: TokenBag) -> CodeBlock {
    CodeBlock {
        block_id: format!("{corpus_id}:{name}"),
        corpus_id: corpus_id.to_string(),
        locator: SourceLocator::file(name),
        granularity: Granularity::File,
        raw_text: String::new(),
        tokens,
        last_modified: None,
        license: LicenseTag::none(),
        context: None,
    }
}

const OPS: &[&str] = &["+", "-", "*", "//", "%"];
const CMPS: &[&str] = &["<", ">", "==", "!=", "<=", ">="];

/// One Python function with a body of `statements` random statements.
pub fn python_function(rng: &mut impl Rng, name: &str, statements: usize) -> String {
    let mut out = format!("def {name}(alpha, beta, gamma=None):\n");
    let mut vars: Vec<String> = vec!["alpha".into(), "beta".into()];
    for s in 0..statements {
        let v = format!("v{}_{}", s, rng.gen_range(0..1000));
        let a = &vars[rng.gen_range(0..vars.len())];
        let b = &vars[rng.gen_range(0..vars.len())];
        let op = OPS[rng.gen_range(0..OPS.len())];
        match rng.gen_range(0..4) {
            0 => out.push_str(&format!("    {v} = {a} {op} {} * {b}\n", rng.gen_range(1..100))),
            1 => {
                let cmp = CMPS[rng.gen_range(0..CMPS.len())];
                out.push_str(&format!(
                    "    if {a} {cmp} {}:\n        {v} = {b} {op} {a}\n    else:\n        {v} = {a}\n",
                    rng.gen_range(0..50)
                ));
            }
            2 => out.push_str(&format!(
                "    {v} = [item {op} {a} for item in range({})]\n    {v} = sum({v})\n",
                rng.gen_range(2..20)
            )),
            _ => out.push_str(&format!("    {v} = str({a}) + \"_{}\" + str({b})\n", rng.gen_range(0..100))),
        }
        vars.push(v);
    }
    out.push_str(&format!("    return {}\n", vars.last().expect("at least one var")));
    out
}

/// Files of a synthetic Python project, as `(relative path, source)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceTree {
    pub files: Vec<(String, String)>,
}

impl SourceTree {
    pub fn write_to(&self, root: &Path) -> std::io::Result<()> {
        for (rel, text) in &self.files {
            let p = root.join(rel);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, text)?;
        }
        Ok(())
    }

    pub fn function_count(&self) -> usize {
        self.files.iter().map(|(_, t)| t.matches("\ndef ").count() + usize::from(t.starts_with("def "))).sum()
    }
}

/// `files` modules of `functions_per_file` functions each. Roughly
/// `copy_rate` of the functions are copies of earlier ones, sometimes with
/// one statement changed, so the tree contains clones across files.
pub fn python_tree(seed: u64, files: usize, functions_per_file: usize, copy_rate: f64) -> SourceTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut made: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(files);
    for f in 0..files {
        let mut text = String::new();
        for k in 0..functions_per_file {
            let name = format!("func_{f}_{k}");
            let body = if !made.is_empty() && rng.gen_bool(copy_rate) {
                let src = &made[rng.gen_range(0..made.len())];
                let renamed = match src.find('(') {
                    Some(paren) => format!("def {name}{}", &src[paren..]),
                    None => src.clone(),
                };
                if rng.gen_bool(0.5) {
                    renamed.replacen(" + ", " - ", 1)
                } else {
                    renamed
                }
            } else {
                let statements = rng.gen_range(3..9);
                python_function(&mut rng, &name, statements)
            };
            made.push(body.clone());
            if k > 0 {
                text.push('\n');
            }
            text.push_str(&body);
        }
        out.push((format!("pkg{}/mod_{f:04}.py", f % 7), text));
    }
    SourceTree { files: out }
}
