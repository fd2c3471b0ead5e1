//! Nested key-path assay: counting with a per-item predicate instead of
//! bare occurrences.
//!
//! A prompt holds a block of structured records. Each record declares a
//! two-letter KEY and a PATH whose bracket structure nests a single leaf
//! token; decoy tokens sit at shallower depths. A record matches exactly
//! when its KEY equals the most deeply bracketed token, so counting
//! requires resolving structure, not just spotting repeats.
//!
//! Record grammar, with `ff` lowercase filler and `TT` pool tokens:
//!
//! ```text
//! Rnnn{KEY=TT; PATH=<geometry>; SIDE=(TT|TT)}
//! ```
//!
//! Rendered geometry cycles with record position i mod 3:
//!
//! * `[ff<{LEAF}>ff]` with the leaf inside literal braces,
//! * `(ff[<LEAF>]ff)` with the leaf inside angle brackets,
//! * `<ff(LEAF)ff>`  with the leaf inside parentheses.
//!
//! Records are joined by `" ; \n"`. Targets say how many records match;
//! distractor records that do not match are added on top, scaling with the
//! target. [`reference_match_count`] recounts a rendered block with a plain
//! bracket-depth scanner that shares no code with the generator, giving an
//! independent route to the ground truth.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assay::{AssayKind, Motif, PromptBundle};
use crate::gateway::{SyntheticReply, SyntheticResponder};
use crate::ladder::BundleSource;
use crate::seeding::{rng_for, Domain};

pub const NESTED_SYSTEM_TEXT: &str = "You evaluate structured records exactly. Return only one \
integer with no words,\npunctuation, or explanation.";

const NESTED_QUESTION: &str = "Each record declares a KEY and a PATH. A record matches when its \
KEY value equals\nthe most deeply bracketed token in its PATH.\n\nHow many records match?";

/// Number of non-matching distractor records added for a given target.
pub fn negatives_for(target: u64) -> u64 {
    (target.div_ceil(2) + 2).max(2)
}

/// Twenty distinct two-letter uppercase tokens drawn from the seed's
/// token-pool stream.
pub fn token_pool(seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, Domain::TokenPool, 0, 0);
    let mut pool: Vec<String> = Vec::with_capacity(20);
    while pool.len() < 20 {
        let a = (b'A' + rng.random_range(0..26u8)) as char;
        let b = (b'A' + rng.random_range(0..26u8)) as char;
        let token: String = [a, b].iter().collect();
        if !pool.contains(&token) {
            pool.push(token);
        }
    }
    pool
}

fn filler(rng: &mut ChaCha8Rng) -> String {
    let a = (b'a' + rng.random_range(0..26u8)) as char;
    let b = (b'a' + rng.random_range(0..26u8)) as char;
    [a, b].iter().collect()
}

fn render_record(
    position: usize,
    key: &str,
    leaf: &str,
    decoys: (&str, &str),
    fill: (&str, &str),
) -> String {
    let path = match position % 3 {
        0 => format!("[{}<{{{}}}>{}]", fill.0, leaf, fill.1),
        1 => format!("({}[<{}>]{})", fill.0, leaf, fill.1),
        _ => format!("<{}({}){}>", fill.0, leaf, fill.1),
    };
    format!(
        "R{:03}{{KEY={}; PATH={}; SIDE=({}|{})}}",
        (position + 1) % 1000,
        key,
        path,
        decoys.0,
        decoys.1
    )
}

/// Renders the record block for one trial: `target` matching records and
/// [`negatives_for`]`(target)` distractors, shuffled together.
pub fn render_records(pool: &[String], target: u64, rng: &mut ChaCha8Rng) -> String {
    let total = target + negatives_for(target);
    let mut is_match: Vec<bool> = (0..total).map(|i| i < target).collect();
    is_match.shuffle(rng);
    let mut records = Vec::with_capacity(total as usize);
    for (i, &matching) in is_match.iter().enumerate() {
        let key = pool[rng.random_range(0..pool.len())].clone();
        let leaf = if matching {
            key.clone()
        } else {
            loop {
                let cand = &pool[rng.random_range(0..pool.len())];
                if *cand != key {
                    break cand.clone();
                }
            }
        };
        let d1 = pool[rng.random_range(0..pool.len())].clone();
        let d2 = pool[rng.random_range(0..pool.len())].clone();
        let f1 = filler(rng);
        let f2 = filler(rng);
        records.push(render_record(i, &key, &leaf, (&d1, &d2), (&f1, &f2)));
    }
    records.join(" ; \n")
}

/// Independent recount of a rendered record block.
///
/// Pure text scanner: splits on the record separator, reads the KEY, walks
/// the brackets tracking depth, and takes the two-letter uppercase token at
/// the greatest depth as the leaf. Shares nothing with the generator.
pub fn reference_match_count(records_text: &str) -> u64 {
    records_text.split(" ; \n").filter(|chunk| record_matches(chunk)).count() as u64
}

fn record_matches(chunk: &str) -> bool {
    let key = match chunk.find("KEY=") {
        Some(at) => {
            let rest: Vec<char> = chunk[at + 4..].chars().take(2).collect();
            if rest.len() == 2 && rest.iter().all(|c| c.is_ascii_uppercase()) {
                rest.iter().collect::<String>()
            } else {
                return false;
            }
        }
        None => return false,
    };
    let chars: Vec<char> = chunk.chars().collect();
    let mut depth: i32 = 0;
    let mut deepest: Option<(i32, String)> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '[' | '(' | '<' | '{' => depth += 1,
            ']' | ')' | '>' | '}' => depth -= 1,
            _ => {
                let prev_upper = i > 0 && chars[i - 1].is_ascii_uppercase();
                let next_upper = i + 1 < chars.len() && chars[i + 1].is_ascii_uppercase();
                let after_next_upper = i + 2 < chars.len() && chars[i + 2].is_ascii_uppercase();
                if c.is_ascii_uppercase() && !prev_upper && next_upper && !after_next_upper {
                    let token: String = chars[i..i + 2].iter().collect();
                    if deepest.as_ref().is_none_or(|(d, _)| depth > *d) {
                        deepest = Some((depth, token));
                    }
                    i += 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    matches!(deepest, Some((_, leaf)) if leaf == key)
}

/// Prompt source for running the capacity ladder over the nested assay.
pub struct NestedSource {
    seed: u64,
    pool: Vec<String>,
}

impl NestedSource {
    pub fn new(seed: u64) -> Self {
        NestedSource { seed, pool: token_pool(seed) }
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }
}

impl BundleSource for NestedSource {
    fn bundle(&self, target: u64, tier_index: u32, trial_index: u32) -> PromptBundle {
        let key = ((tier_index as u64) << 32) | trial_index as u64;
        let mut rng = rng_for(self.seed, Domain::Nested, key, target);
        let records = render_records(&self.pool, target, &mut rng);
        let user_text = format!("{NESTED_QUESTION}\n\n{records}");
        let inline = format!("{NESTED_SYSTEM_TEXT}\n\n{user_text}");
        PromptBundle {
            system_text: NESTED_SYSTEM_TEXT.to_string(),
            user_text,
            inline_fallback_text: inline,
            target_count: target,
            motif: Motif::new("record", " ; \n"),
            assay_kind: AssayKind::Nested,
            trial_key: 0,
            tier_center: None,
        }
    }

    fn assay(&self) -> AssayKind {
        AssayKind::Nested
    }

    fn motif_label(&self) -> String {
        "nested-keypath".to_string()
    }
}

/// Oracle that actually performs the nested task by scanning the prompt
/// text, then saturates: answers `min(true matches, capacity)`.
#[derive(Debug, Clone, Copy)]
pub struct NestedSaturatingOracle {
    pub true_capacity: u64,
}

impl SyntheticResponder for NestedSaturatingOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let counted = reference_match_count(&bundle.user_text);
        SyntheticReply::complete(counted.min(self.true_capacity).to_string())
    }
}
