use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetMeta, Example, Vocab, UNK_TOKEN};
use crate::error::{Error, Result};

pub const KEYWORD_GENERATOR: &str = "keyword-sentiment";

const POSITIVE: [&str; 8] = [
    "good", "great", "superb", "lovely", "fine", "wonderful", "brilliant", "pleasant",
];
const NEGATIVE: [&str; 8] = [
    "bad", "awful", "terrible", "poor", "dreadful", "nasty", "horrible", "dismal",
];

/// Binary sentiment over random filler with planted keywords.
///
/// Ids: `0` is UNK, then `k` positive keywords, `k` negative keywords and the
/// filler words, with `k = clamp((vocab_size − 1) / 6, 1, 8)`. Every example
/// plants one to three keywords at random positions. With three, one of them
/// may carry the opposite polarity. The label is the majority polarity (`1`
/// positive, `0` negative) and the planted positions are recorded.
pub fn gen_keyword_sentiment(
    seed: u64,
    n_examples: usize,
    seq_len: usize,
    vocab_size: usize,
) -> Result<Dataset> {
    let k = ((vocab_size.saturating_sub(1)) / 6).clamp(1, POSITIVE.len());
    if vocab_size < 2 * k + 2 {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} leaves no room for filler words (need at least {})",
            2 * k + 2
        )));
    }
    if seq_len == 0 {
        return Err(Error::Config("seq_len must be at least 1".into()));
    }
    let mut words = vec![UNK_TOKEN.to_owned()];
    words.extend(POSITIVE[..k].iter().map(|w| w.to_string()));
    words.extend(NEGATIVE[..k].iter().map(|w| w.to_string()));
    let first_filler = words.len();
    words.extend((first_filler..vocab_size).map(|i| format!("w{i}")));
    let vocab = Vocab::new(words)?;

    let positive = |rng: &mut ChaCha8Rng| 1 + rng.random_range(0..k);
    let negative = |rng: &mut ChaCha8Rng| 1 + k + rng.random_range(0..k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n_examples)
        .map(|_| {
            let label = rng.random_range(0..2usize);
            let mut tokens: Vec<usize> = (0..seq_len)
                .map(|_| rng.random_range(first_filler..vocab_size))
                .collect();
            let n_kw = rng.random_range(1..=3usize.min(seq_len));
            let mut positions = index::sample(&mut rng, seq_len, n_kw).into_vec();
            positions.sort_unstable();
            let minority = n_kw == 3 && rng.random_bool(0.5);
            let odd_one = rng.random_range(0..n_kw);
            for (slot, &pos) in positions.iter().enumerate() {
                let polarity = if minority && slot == odd_one { 1 - label } else { label };
                tokens[pos] = if polarity == 1 { positive(&mut rng) } else { negative(&mut rng) };
            }
            Example {
                tokens,
                label,
                keywords: Some(positions),
            }
        })
        .collect();
    let val = n_examples / 10;
    Ok(Dataset {
        vocab,
        examples,
        meta: DatasetMeta {
            generator: KEYWORD_GENERATOR.into(),
            seed: Some(seed),
            n_classes: 2,
            splits: Some([n_examples - 2 * val, val, val]),
        },
    })
}
