use numcore::{Real, Tape};

use super::Prediction;
use crate::data::{TokenPair, Vocabulary, EOS, PAD};
use crate::error::Result;
use crate::model::{Mode, MultiTaskModel};

/// Sequences decoded together; bounds tape size during inference.
const DECODE_BATCH: usize = 64;

/// Longest hypothesis allowed for a source of `source_len` characters.
pub fn length_cap(source_len: usize) -> usize {
    2 * source_len + 10
}

/// Greedy decoding of one source word.
pub fn greedy_decode<F: Real>(
    model: &MultiTaskModel<F>,
    task: usize,
    source: &str,
) -> Result<String> {
    let pair = TokenPair::new(source, "");
    Ok(greedy_decode_batch(model, task, &[&pair])?
        .pop()
        .expect("one input, one output"))
}

/// Greedy decoding: start from `<s>`, take the arg-max symbol (lowest id on
/// ties) until `</s>` or the length cap. Special symbols are dropped.
pub fn greedy_decode_batch<F: Real>(
    model: &MultiTaskModel<F>,
    task: usize,
    pairs: &[&TokenPair],
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(DECODE_BATCH) {
        out.extend(decode_chunk(model, task, chunk)?);
    }
    Ok(out)
}

fn decode_chunk<F: Real>(
    model: &MultiTaskModel<F>,
    task: usize,
    pairs: &[&TokenPair],
) -> Result<Vec<String>> {
    let mut tape = Tape::no_grad();
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| model.encode_source(p)).collect();
    let caps: Vec<usize> = pairs
        .iter()
        .map(|p| length_cap(p.source.chars().count()))
        .collect();
    let enc = model.encode(&mut tape, task, &sources, &mut Mode::Eval)?;
    let mem = model.attention_memory(&mut tape, task, &enc)?;
    let vocab_size = model.tgt_vocab.len();

    let mut state = enc.init;
    let mut prev = vec![crate::data::BOS; pairs.len()];
    let mut hyps: Vec<Vec<usize>> = vec![Vec::new(); pairs.len()];
    let mut done = vec![false; pairs.len()];
    let max_steps = caps.iter().max().copied().unwrap_or(0);
    for _ in 0..=max_steps {
        if done.iter().all(|&d| d) {
            break;
        }
        let (context, _) = model.attend(&mut tape, task, &mem, state.h)?;
        let (logits, next) =
            model.decode_step(&mut tape, task, &prev, state, context, &mut Mode::Eval)?;
        state = next;
        let values = tape.value(logits);
        for (b, row) in values.chunks(vocab_size).enumerate() {
            if done[b] {
                prev[b] = PAD;
                continue;
            }
            let best = argmax(row);
            prev[b] = best;
            if best == EOS || hyps[b].len() >= caps[b] {
                done[b] = true;
            } else {
                hyps[b].push(best);
            }
        }
    }
    let kind = model.tasks[task].kind;
    Ok(hyps
        .into_iter()
        .map(|ids| {
            let symbols: Vec<&str> = ids
                .into_iter()
                .filter(|&i| !Vocabulary::is_special(i))
                .map(|i| model.tgt_vocab.symbol(i))
                .collect();
            kind.join_symbols(&symbols)
        })
        .collect())
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes every pair and pairs the hypothesis with its gold target.
pub fn predict<F: Real>(
    model: &MultiTaskModel<F>,
    task: usize,
    pairs: &[TokenPair],
) -> Result<Vec<Prediction>> {
    let refs: Vec<&TokenPair> = pairs.iter().collect();
    let hyps = greedy_decode_batch(model, task, &refs)?;
    Ok(pairs
        .iter()
        .zip(hyps)
        .map(|(p, h)| Prediction {
            source: p.source.clone(),
            gold: p.target.clone(),
            hypothesis: h,
        })
        .collect())
}
