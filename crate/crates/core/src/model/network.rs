use std::collections::BTreeMap;
use std::fmt;

use numcore::{seeded_rng, ParamId, ParamSet, Real, Rng, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Component, HyperParams, SharingConfig};
use crate::data::{TaskKind, TokenPair, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

const INIT_RANGE: f64 = 0.1;
const MASK_PENALTY: f64 = -1e9;

/// A task the model is trained on, identified by its dataset name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTask {
    pub name: String,
    pub kind: TaskKind,
    pub language: String,
}

impl ModelTask {
    pub fn new(name: impl Into<String>, kind: TaskKind, language: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            language: language.into(),
        }
    }
}

/// Who owns a component instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Shared,
    Task(usize),
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Shared => f.write_str("shared"),
            Owner::Task(i) => write!(f, "task{i}"),
        }
    }
}

/// Weights of one LSTM; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// Typed handles of the tensors making up one component instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentParams {
    Embedding {
        table: ParamId,
    },
    Encoder {
        forward: LstmParams,
        backward: LstmParams,
        init_w: ParamId,
        init_b: ParamId,
    },
    Attention {
        w_enc: ParamId,
        w_dec: ParamId,
        v: ParamId,
    },
    Decoder(LstmParams),
    Projection {
        w: ParamId,
        b: ParamId,
    },
}

impl ComponentParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let lstm = |p: &LstmParams| [p.wx, p.wh, p.b];
        match self {
            ComponentParams::Embedding { table } => vec![*table],
            ComponentParams::Encoder {
                forward,
                backward,
                init_w,
                init_b,
            } => {
                let mut v = lstm(forward).to_vec();
                v.extend(lstm(backward));
                v.extend([*init_w, *init_b]);
                v
            }
            ComponentParams::Attention { w_enc, w_dec, v } => vec![*w_enc, *w_dec, *v],
            ComponentParams::Decoder(p) => lstm(p).to_vec(),
            ComponentParams::Projection { w, b } => vec![*w, *b],
        }
    }
}

/// Whether dropout is active; training mode carries the run RNG for masks.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Mode<'_> {
    fn dropout<F: Real>(&mut self, tape: &mut Tape<F>, v: Var, p: f64) -> Result<Var> {
        match self {
            Mode::Train(rng) if p > 0.0 => Ok(tape.dropout(v, p, &mut **rng)?),
            _ => Ok(v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Encoder output for a padded batch of `batch` sequences of at most `len` symbols.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[batch * len, hidden]`, row `b * len + t` is position `t` of sequence `b`.
    pub states: Var,
    /// Decoder initial state derived from the final backward state.
    pub init: LstmState,
    pub batch: usize,
    pub len: usize,
    pub lengths: Vec<usize>,
}

/// Encoder states with their attention projection precomputed.
#[derive(Debug, Clone)]
pub struct Memory {
    pub states: Var,
    pub projected: Var,
    /// Additive `[batch, len]` penalty on padded positions, absent when unpadded.
    pub mask: Option<Var>,
    pub batch: usize,
    pub len: usize,
}

/// Per-task component instances resolved through a sharing registry.
#[derive(Debug, Clone)]
pub struct MultiTaskModel<F> {
    pub tasks: Vec<ModelTask>,
    pub config: SharingConfig,
    pub hp: HyperParams,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    params: ParamSet<F>,
    registry: BTreeMap<(Component, Owner), ComponentParams>,
}

/// Builds a model with a fresh RNG seeded from `seed`.
pub fn build_model<F: Real>(
    config: SharingConfig,
    tasks: Vec<ModelTask>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    hp: HyperParams,
    seed: u64,
) -> Result<MultiTaskModel<F>> {
    let mut rng = seeded_rng(seed);
    build_model_with_rng(config, tasks, src_vocab, tgt_vocab, hp, &mut rng)
}

/// Builds a model drawing its initial weights from `rng`.
pub fn build_model_with_rng<F: Real>(
    config: SharingConfig,
    tasks: Vec<ModelTask>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    hp: HyperParams,
    rng: &mut Rng,
) -> Result<MultiTaskModel<F>> {
    if tasks.is_empty() {
        return Err(Error::Contract("a model needs at least one task".into()));
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|u| u.name == t.name) {
            return Err(Error::Contract(format!("task {} declared twice", t.name)));
        }
    }
    if src_vocab.is_empty() || tgt_vocab.is_empty() {
        return Err(Error::Contract("vocabularies must be nonempty".into()));
    }
    hp.validate()?;

    let mut builder = Builder {
        params: ParamSet::new(),
        rng,
    };
    let (e, h, half) = (hp.embed_dim, hp.hidden_dim, hp.hidden_dim / 2);
    let (vs, vt) = (src_vocab.len(), tgt_vocab.len());
    let mut registry = BTreeMap::new();
    for c in Component::ALL {
        let owners: Vec<Owner> = if config.shares(c) {
            vec![Owner::Shared]
        } else {
            (0..tasks.len()).map(Owner::Task).collect()
        };
        for owner in owners {
            let prefix = match owner {
                Owner::Shared => format!("{c}/shared"),
                Owner::Task(i) => format!("{c}/{}", tasks[i].name),
            };
            let b = &mut builder;
            let entry = match c {
                Component::S => ComponentParams::Embedding {
                    table: b.uniform(format!("{prefix}/table"), vec![vs, e]),
                },
                Component::E => ComponentParams::Encoder {
                    forward: b.lstm(&format!("{prefix}/fwd"), e, half),
                    backward: b.lstm(&format!("{prefix}/bwd"), e, half),
                    init_w: b.uniform(format!("{prefix}/init_w"), vec![half, h]),
                    init_b: b.zeros(format!("{prefix}/init_b"), vec![h]),
                },
                Component::A => ComponentParams::Attention {
                    w_enc: b.uniform(format!("{prefix}/w_enc"), vec![h, h]),
                    w_dec: b.uniform(format!("{prefix}/w_dec"), vec![h, h]),
                    v: b.uniform(format!("{prefix}/v"), vec![h, 1]),
                },
                Component::T => ComponentParams::Embedding {
                    table: b.uniform(format!("{prefix}/table"), vec![vt, e]),
                },
                Component::D => {
                    ComponentParams::Decoder(b.lstm(&format!("{prefix}/lstm"), e + h, h))
                }
                Component::P => ComponentParams::Projection {
                    w: b.uniform(format!("{prefix}/w"), vec![h, vt]),
                    b: b.zeros(format!("{prefix}/b"), vec![vt]),
                },
            };
            registry.insert((c, owner), entry);
        }
    }
    Ok(MultiTaskModel {
        tasks,
        config,
        hp,
        src_vocab,
        tgt_vocab,
        params: builder.params,
        registry,
    })
}

struct Builder<'r, F> {
    params: ParamSet<F>,
    rng: &'r mut Rng,
}

impl<F: Real> Builder<'_, F> {
    fn uniform(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        self.params.register(
            name,
            Tensor::from_f64(shape, &values).expect("shape is positive"),
        )
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        self.params.register(name, Tensor::zeros(shape))
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> LstmParams {
        let wx = self.uniform(format!("{prefix}.wx"), vec![input, 4 * hidden]);
        let wh = self.uniform(format!("{prefix}.wh"), vec![hidden, 4 * hidden]);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = self.params.register(
            format!("{prefix}.b"),
            Tensor::from_f64(vec![4 * hidden], &bias).expect("positive"),
        );
        LstmParams { wx, wh, b, hidden }
    }
}

struct BoundLstm {
    wh: Var,
    b: Var,
    hidden: usize,
}

impl<F: Real> MultiTaskModel<F> {
    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn owner(&self, task: usize, c: Component) -> Owner {
        if self.config.shares(c) {
            Owner::Shared
        } else {
            Owner::Task(task)
        }
    }

    /// Resolves the instance of `c` used by `task`.
    pub fn component(&self, task: usize, c: Component) -> Result<&ComponentParams> {
        if task >= self.tasks.len() {
            return Err(Error::Contract(format!("task index {task} out of range")));
        }
        self.registry
            .get(&(c, self.owner(task, c)))
            .ok_or_else(|| Error::Invariant(format!("registry has no {c} for task {task}")))
    }

    pub fn registry(&self) -> impl Iterator<Item = (&(Component, Owner), &ComponentParams)> {
        self.registry.iter()
    }

    /// Every parameter the forward pass of `task` reads.
    pub fn task_param_ids(&self, task: usize) -> Result<Vec<ParamId>> {
        let mut ids = Vec::new();
        for c in Component::ALL {
            ids.extend(self.component(task, c)?.ids());
        }
        Ok(ids)
    }

    /// Instances and scalars per instance for each component.
    pub fn count_parameters(&self) -> BTreeMap<Component, (usize, usize)> {
        let mut out = BTreeMap::new();
        for ((c, _), entry) in &self.registry {
            let size: usize = entry
                .ids()
                .iter()
                .map(|&id| self.params.get(id).len())
                .sum();
            let slot = out.entry(*c).or_insert((0, size));
            slot.0 += 1;
        }
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn encode_source(&self, pair: &TokenPair) -> Vec<usize> {
        self.src_vocab.encode(&pair.source_symbols())
    }

    pub fn encode_target(&self, task: usize, pair: &TokenPair) -> Vec<usize> {
        self.tgt_vocab
            .encode(&self.tasks[task].kind.target_symbols(&pair.target))
    }

    fn bind_lstm(&self, tape: &mut Tape<F>, p: &LstmParams) -> BoundLstm {
        BoundLstm {
            wh: tape.param(&self.params, p.wh),
            b: tape.param(&self.params, p.b),
            hidden: p.hidden,
        }
    }

    /// One LSTM step given the precomputed input projection `xw = x · Wx`.
    /// With a `[batch, hidden]` 0/1 `mask`, masked rows keep their old state.
    fn lstm_step(
        &self,
        tape: &mut Tape<F>,
        p: &BoundLstm,
        xw: Var,
        state: LstmState,
        mask: Option<Var>,
    ) -> Result<LstmState> {
        let h = p.hidden;
        let rec = tape.matmul(state.h, p.wh)?;
        let gates = tape.add(xw, rec)?;
        let gates = tape.add_row(gates, p.b)?;
        let i = tape.slice(gates, 1, 0, h)?;
        let f = tape.slice(gates, 1, h, h)?;
        let g = tape.slice(gates, 1, 2 * h, h)?;
        let o = tape.slice(gates, 1, 3 * h, h)?;
        let (i, f, g, o) = (
            tape.sigmoid(i),
            tape.sigmoid(f),
            tape.tanh(g),
            tape.sigmoid(o),
        );
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let hn = tape.mul(o, tc)?;
        match mask {
            None => Ok(LstmState { h: hn, c }),
            Some(m) => {
                let keep = |tape: &mut Tape<F>, new: Var, old: Var| -> Result<Var> {
                    let delta = tape.sub(new, old)?;
                    let delta = tape.mul(delta, m)?;
                    Ok(tape.add(old, delta)?)
                };
                Ok(LstmState {
                    h: keep(tape, hn, state.h)?,
                    c: keep(tape, c, state.c)?,
                })
            }
        }
    }

    fn zero_state(tape: &mut Tape<F>, batch: usize, hidden: usize) -> LstmState {
        let h = tape.zeros(vec![batch, hidden]);
        let c = tape.zeros(vec![batch, hidden]);
        LstmState { h, c }
    }

    /// Runs the bidirectional encoder over a padded batch of source id sequences.
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        sources: &[Vec<usize>],
        mode: &mut Mode,
    ) -> Result<Encoded> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract(
                "encoder input must be a nonempty batch of nonempty sequences".into(),
            ));
        }
        let ComponentParams::Embedding { table } = *self.component(task, Component::S)? else {
            return Err(Error::Invariant("S is not an embedding".into()));
        };
        let ComponentParams::Encoder {
            forward,
            backward,
            init_w,
            init_b,
        } = *self.component(task, Component::E)?
        else {
            return Err(Error::Invariant("E is not an encoder".into()));
        };

        let batch = sources.len();
        let lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
        let len = *lengths.iter().max().expect("nonempty");
        // time-major ids: row t * batch + b
        let mut ids = Vec::with_capacity(len * batch);
        for t in 0..len {
            ids.extend(sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD)));
        }
        let table = tape.param(&self.params, table);
        let emb = tape.embedding(table, &ids)?;
        let emb = mode.dropout(tape, emb, self.hp.dropout)?;

        let half = forward.hidden;
        let run = |tape: &mut Tape<F>, p: &LstmParams, reverse: bool| -> Result<Vec<Var>> {
            let wx = tape.param(&self.params, p.wx);
            let xw_all = tape.matmul(emb, wx)?;
            let bound = self.bind_lstm(tape, p);
            let mut state = Self::zero_state(tape, batch, half);
            let mut out = vec![state.h; len];
            let order: Vec<usize> = if reverse {
                (0..len).rev().collect()
            } else {
                (0..len).collect()
            };
            for t in order {
                let xw = tape.slice(xw_all, 0, t * batch, batch)?;
                // the backward pass must start fresh at each sequence's last symbol
                let mask = if reverse && lengths.iter().any(|&l| l <= t) {
                    let m: Vec<F> = lengths
                        .iter()
                        .flat_map(|&l| {
                            std::iter::repeat_n(if t < l { F::one() } else { F::zero() }, half)
                        })
                        .collect();
                    Some(tape.constant(vec![batch, half], m)?)
                } else {
                    None
                };
                state = self.lstm_step(tape, &bound, xw, state, mask)?;
                out[t] = state.h;
            }
            Ok(out)
        };
        let fwd = run(tape, &forward, false)?;
        let bwd = run(tape, &backward, true)?;

        let mut per_step = Vec::with_capacity(len);
        for t in 0..len {
            per_step.push(tape.concat(&[fwd[t], bwd[t]], 1)?);
        }
        let states = tape.interleave_rows(&per_step)?;
        let states = mode.dropout(tape, states, self.hp.dropout)?;

        let init_w = tape.param(&self.params, init_w);
        let init_b = tape.param(&self.params, init_b);
        let s0 = tape.matmul(bwd[0], init_w)?;
        let s0 = tape.add_row(s0, init_b)?;
        let h0 = tape.tanh(s0);
        let c0 = tape.zeros(vec![batch, self.hp.hidden_dim]);
        Ok(Encoded {
            states,
            init: LstmState { h: h0, c: c0 },
            batch,
            len,
            lengths,
        })
    }

    /// Precomputes `W_enc · h_j` for every encoder state.
    pub fn attention_memory(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        enc: &Encoded,
    ) -> Result<Memory> {
        let ComponentParams::Attention { w_enc, .. } = *self.component(task, Component::A)? else {
            return Err(Error::Invariant("A is not attention".into()));
        };
        let w_enc = tape.param(&self.params, w_enc);
        let projected = tape.matmul(enc.states, w_enc)?;
        let mask = if enc.lengths.iter().all(|&l| l == enc.len) {
            None
        } else {
            let penalty = F::of(MASK_PENALTY);
            let m: Vec<F> = enc
                .lengths
                .iter()
                .flat_map(|&l| (0..enc.len).map(move |t| if t < l { F::zero() } else { penalty }))
                .collect();
            Some(tape.constant(vec![enc.batch, enc.len], m)?)
        };
        Ok(Memory {
            states: enc.states,
            projected,
            mask,
            batch: enc.batch,
            len: enc.len,
        })
    }

    /// MLP attention: weights = softmax(vᵀ tanh(W_enc h_j + W_dec s)); returns
    /// `(context [batch, hidden], weights [batch, len])`.
    pub fn attend(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        mem: &Memory,
        decoder_state: Var,
    ) -> Result<(Var, Var)> {
        let ComponentParams::Attention { w_dec, v, .. } = *self.component(task, Component::A)?
        else {
            return Err(Error::Invariant("A is not attention".into()));
        };
        let w_dec = tape.param(&self.params, w_dec);
        let v = tape.param(&self.params, v);
        let dec = tape.matmul(decoder_state, w_dec)?;
        let dec = tape.repeat_rows(dec, mem.len)?;
        let pre = tape.add(mem.projected, dec)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v)?;
        let mut scores = tape.reshape(scores, vec![mem.batch, mem.len])?;
        if let Some(mask) = mem.mask {
            scores = tape.add(scores, mask)?;
        }
        let weights = tape.softmax(scores);
        let context = tape.group_weighted_sum(weights, mem.states)?;
        Ok((context, weights))
    }

    /// Advances the decoder LSTM on `concat(embed(prev), context)`; returns
    /// the dropout-applied output and the new state.
    fn decoder_advance(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        prev: &[usize],
        state: LstmState,
        context: Var,
        mode: &mut Mode,
    ) -> Result<(Var, LstmState)> {
        let ComponentParams::Embedding { table } = *self.component(task, Component::T)? else {
            return Err(Error::Invariant("T is not an embedding".into()));
        };
        let ComponentParams::Decoder(lstm) = *self.component(task, Component::D)? else {
            return Err(Error::Invariant("D is not a decoder".into()));
        };
        let table = tape.param(&self.params, table);
        let emb = tape.embedding(table, prev)?;
        let emb = mode.dropout(tape, emb, self.hp.dropout)?;
        let x = tape.concat(&[emb, context], 1)?;
        let wx = tape.param(&self.params, lstm.wx);
        let xw = tape.matmul(x, wx)?;
        let bound = self.bind_lstm(tape, &lstm);
        let next = self.lstm_step(tape, &bound, xw, state, None)?;
        let out = mode.dropout(tape, next.h, self.hp.dropout)?;
        Ok((out, next))
    }

    fn project(&self, tape: &mut Tape<F>, task: usize, out: Var) -> Result<Var> {
        let ComponentParams::Projection { w, b } = *self.component(task, Component::P)? else {
            return Err(Error::Invariant("P is not a projection".into()));
        };
        let w = tape.param(&self.params, w);
        let b = tape.param(&self.params, b);
        let logits = tape.matmul(out, w)?;
        Ok(tape.add_row(logits, b)?)
    }

    /// One decoder step: returns `(logits [batch, V_tgt], next state)`.
    pub fn decode_step(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        prev: &[usize],
        state: LstmState,
        context: Var,
        mode: &mut Mode,
    ) -> Result<(Var, LstmState)> {
        let (out, next) = self.decoder_advance(tape, task, prev, state, context, mode)?;
        Ok((self.project(tape, task, out)?, next))
    }

    /// Teacher-forced negative log-likelihood summed over every target
    /// symbol (including `</s>`) of the batch, with the symbol count.
    pub fn nll_sum(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        pairs: &[&TokenPair],
        mode: &mut Mode,
    ) -> Result<(Var, usize)> {
        if pairs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let sources: Vec<Vec<usize>> = pairs.iter().map(|p| self.encode_source(p)).collect();
        let targets: Vec<Vec<usize>> = pairs.iter().map(|p| self.encode_target(task, p)).collect();
        let enc = self.encode(tape, task, &sources, mode)?;
        let mem = self.attention_memory(tape, task, &enc)?;
        let steps = targets.iter().map(Vec::len).max().expect("nonempty") + 1;

        let mut state = enc.init;
        let mut outputs = Vec::with_capacity(steps);
        let mut gold = Vec::with_capacity(steps * pairs.len());
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|y| match t {
                    0 => BOS,
                    _ => y.get(t - 1).copied().unwrap_or(PAD),
                })
                .collect();
            gold.extend(targets.iter().map(|y| match t.cmp(&y.len()) {
                std::cmp::Ordering::Less => Some(y[t]),
                std::cmp::Ordering::Equal => Some(EOS),
                std::cmp::Ordering::Greater => None,
            }));
            let (context, _) = self.attend(tape, task, &mem, state.h)?;
            let (out, next) = self.decoder_advance(tape, task, &prev, state, context, mode)?;
            outputs.push(out);
            state = next;
        }
        let stacked = tape.concat(&outputs, 0)?;
        let logits = self.project(tape, task, stacked)?;
        let count = gold.iter().flatten().count();
        let loss = tape.nll(logits, &gold, false)?;
        Ok((loss, count))
    }

    /// Mean per-symbol cross-entropy of the batch.
    pub fn forward_loss(
        &self,
        tape: &mut Tape<F>,
        task: usize,
        pairs: &[&TokenPair],
        mode: &mut Mode,
    ) -> Result<Var> {
        let (sum, count) = self.nll_sum(tape, task, pairs, mode)?;
        Ok(tape.scale(sum, F::one() / F::of(count as f64)))
    }

    /// Replaces every parameter value with `value` (tests and diagnostics).
    pub fn fill_parameters(&mut self, value: f64) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            self.params.get_mut(id).values_mut().fill(F::of(value));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocabularies, TaskDataset};

    fn toy(config: &str, n_tasks: usize) -> MultiTaskModel<f64> {
        let d = TaskDataset::new(
            "d",
            TaskKind::Normalization,
            "de",
            vec![TokenPair::new("vnd", "und"), TokenPair::new("jn", "in")],
        );
        let (src, tgt) = build_vocabularies(&[&d], None);
        let tasks = (0..n_tasks)
            .map(|i| ModelTask::new(format!("t{i}"), TaskKind::Normalization, "de"))
            .collect();
        build_model(
            SharingConfig::parse(config).unwrap(),
            tasks,
            src,
            tgt,
            HyperParams::tiny(4, 6),
            1,
        )
        .unwrap()
    }

    #[test]
    fn instances_follow_sharing() {
        let m = toy("", 4);
        assert!(m.count_parameters().values().all(|&(n, _)| n == 4));
        let m = toy("SEATDP", 4);
        assert!(m.count_parameters().values().all(|&(n, _)| n == 1));
        assert_eq!(m.total_parameters(), toy("", 1).total_parameters());
    }

    #[test]
    fn embedding_size() {
        let m = toy("", 1);
        let (_, s) = m.count_parameters()[&Component::S];
        assert_eq!(s, m.src_vocab.len() * 4);
    }

    #[test]
    fn empty_task_list_rejected() {
        let v = Vocabulary::from_symbols(["a"]);
        let r = build_model::<f64>(
            SharingConfig::none(),
            vec![],
            v.clone(),
            v,
            HyperParams::tiny(4, 6),
            0,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = toy("", 1);
        let ComponentParams::Decoder(p) = *m.component(0, Component::D).unwrap() else {
            panic!()
        };
        let b = m.params().get(p.b).values();
        assert!(b[..6].iter().all(|&x| x == 0.0));
        assert!(b[6..12].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn encoder_and_loss_shapes() {
        let m = toy("", 1);
        let mut t = Tape::new();
        let enc = m
            .encode(&mut t, 0, &[vec![4, 5, 6, 4, 5]], &mut Mode::Eval)
            .unwrap();
        assert_eq!(t.shape(enc.states), &[5, 6]);
        let p = TokenPair::new("vnd", "und");
        let loss = m.forward_loss(&mut t, 0, &[&p], &mut Mode::Eval).unwrap();
        assert!(t.value(loss)[0].is_finite());
    }

    #[test]
    fn out_of_range_id_is_an_index_error() {
        let m = toy("", 1);
        let mut t = Tape::new();
        let r = m.encode(&mut t, 0, &[vec![999]], &mut Mode::Eval);
        assert!(matches!(
            r,
            Err(Error::Num(numcore::NumError::Index { .. }))
        ));
    }
}
