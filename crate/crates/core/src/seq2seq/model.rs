use rand::Rng;

use super::attention::{AdditiveAttention, AttentionMemory};
use super::lstm::LstmCell;
use crate::corpora::{EncodedPair, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Sizes that fix the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub d: usize,
    pub layers: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl From<&super::NmtConfig> for ModelShape {
    fn from(c: &super::NmtConfig) -> Self {
        ModelShape {
            d: c.d,
            layers: c.layers,
            src_vocab_size: c.src_vocab_size,
            tgt_vocab_size: c.tgt_vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bridge {
    w_h: ParamId,
    b_h: ParamId,
    w_c: ParamId,
    b_c: ParamId,
}

/// Parameter handles of the encoder-decoder. The values live in a
/// [`ParamStore`] passed to every call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seq2Seq {
    pub shape: ModelShape,
    src_embed: ParamId,
    tgt_embed: ParamId,
    /// `[forward, backward]` per layer.
    encoder: Vec<[LstmCell; 2]>,
    bridges: Vec<Bridge>,
    decoder: Vec<LstmCell>,
    attention: AdditiveAttention,
    w_combine: ParamId,
    b_combine: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Hidden and cell states of one layer, indexed `[position][unit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates<T = f32> {
    pub forward_h: Vec<Vec<T>>,
    pub backward_h: Vec<Vec<T>>,
    pub forward_c: Vec<Vec<T>>,
    pub backward_c: Vec<Vec<T>>,
}

/// Encoder states of a single sentence at every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T = f32> {
    pub d: usize,
    pub layers: Vec<LayerStates<T>>,
    pub sentence_length: usize,
}

impl<T> EncoderOutput<T> {
    pub fn top(&self) -> &LayerStates<T> {
        self.layers.last().expect("encoder has at least one layer")
    }
}

/// Per-position graph nodes for one encoder layer over a batch.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub forward_h: Vec<Var>,
    pub backward_h: Vec<Var>,
    pub forward_c: Vec<Var>,
    pub backward_c: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub layers: Vec<LayerVars>,
    pub lengths: Vec<usize>,
    /// `mask[b][t]` is true when position `t` holds a token of row `b`.
    pub mask: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    /// Attention context of the previous step, fed into the first layer.
    pub feed: Var,
}

/// Summed token loss of a batch plus the normalized training objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub mean: Var,
    pub sum: Var,
    pub tokens: usize,
}

fn enc_prefix(layer: usize, dir: &str) -> String {
    format!("enc.l{layer}.{dir}")
}

impl Seq2Seq {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        shape: ModelShape,
    ) -> Result<Self> {
        Self::build(store, rng, shape, false)
    }

    /// Forward and backward encoder cells share parameters. Test use only.
    #[doc(hidden)]
    pub fn init_tied<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        shape: ModelShape,
    ) -> Result<Self> {
        Self::build(store, rng, shape, true)
    }

    fn build<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        shape: ModelShape,
        tied: bool,
    ) -> Result<Self> {
        validate(&shape)?;
        let ModelShape { d, layers, src_vocab_size, tgt_vocab_size } = shape;
        let src_embed = store.add("src_embed", glorot_uniform(rng, src_vocab_size, d)?)?;
        let tgt_embed = store.add("tgt_embed", glorot_uniform(rng, tgt_vocab_size, d)?)?;
        let mut encoder = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { d } else { 2 * d };
            let fwd = LstmCell::register(store, rng, &enc_prefix(l, "fwd"), input, d)?;
            let bwd = if tied {
                fwd
            } else {
                LstmCell::register(store, rng, &enc_prefix(l, "bwd"), input, d)?
            };
            encoder.push([fwd, bwd]);
        }
        let mut bridges = Vec::with_capacity(layers);
        for l in 0..layers {
            bridges.push(Bridge {
                w_h: store.add(format!("bridge.l{l}.w_h"), glorot_uniform(rng, 2 * d, d)?)?,
                b_h: store.add(format!("bridge.l{l}.b_h"), Tensor::zeros(vec![d])?)?,
                w_c: store.add(format!("bridge.l{l}.w_c"), glorot_uniform(rng, 2 * d, d)?)?,
                b_c: store.add(format!("bridge.l{l}.b_c"), Tensor::zeros(vec![d])?)?,
            });
        }
        let mut decoder = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { 3 * d } else { d };
            decoder.push(LstmCell::register(store, rng, &format!("dec.l{l}"), input, d)?);
        }
        let attention = AdditiveAttention::register(store, rng, "attn", d, 2 * d, d)?;
        let w_combine = store.add("out.w_combine", glorot_uniform(rng, 3 * d, d)?)?;
        let b_combine = store.add("out.b_combine", Tensor::zeros(vec![d])?)?;
        let w_out = store.add("out.w_vocab", glorot_uniform(rng, d, tgt_vocab_size)?)?;
        let b_out = store.add("out.b_vocab", Tensor::zeros(vec![tgt_vocab_size])?)?;
        Ok(Seq2Seq {
            shape,
            src_embed,
            tgt_embed,
            encoder,
            bridges,
            decoder,
            attention,
            w_combine,
            b_combine,
            w_out,
            b_out,
        })
    }

    /// Binds to parameters already in `store`, checking every name and shape.
    pub fn from_store<T: Real>(store: &ParamStore<T>, shape: ModelShape) -> Result<Self> {
        validate(&shape)?;
        let ModelShape { d, layers, src_vocab_size, tgt_vocab_size } = shape;
        let tied = store.id(&format!("{}.w_input", enc_prefix(0, "bwd"))).is_none();
        let mut encoder = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { d } else { 2 * d };
            let fwd = LstmCell::from_store(store, &enc_prefix(l, "fwd"), input, d)?;
            let bwd = if tied {
                fwd
            } else {
                LstmCell::from_store(store, &enc_prefix(l, "bwd"), input, d)?
            };
            encoder.push([fwd, bwd]);
        }
        let mut bridges = Vec::with_capacity(layers);
        for l in 0..layers {
            bridges.push(Bridge {
                w_h: store.expect(&format!("bridge.l{l}.w_h"), &[2 * d, d])?,
                b_h: store.expect(&format!("bridge.l{l}.b_h"), &[d])?,
                w_c: store.expect(&format!("bridge.l{l}.w_c"), &[2 * d, d])?,
                b_c: store.expect(&format!("bridge.l{l}.b_c"), &[d])?,
            });
        }
        let decoder = (0..layers)
            .map(|l| LstmCell::from_store(store, &format!("dec.l{l}"), if l == 0 { 3 * d } else { d }, d))
            .collect::<Result<Vec<_>>>()?;
        let model = Seq2Seq {
            shape,
            src_embed: store.expect("src_embed", &[src_vocab_size, d])?,
            tgt_embed: store.expect("tgt_embed", &[tgt_vocab_size, d])?,
            encoder,
            bridges,
            decoder,
            attention: AdditiveAttention::from_store(store, "attn", d, 2 * d, d)?,
            w_combine: store.expect("out.w_combine", &[3 * d, d])?,
            b_combine: store.expect("out.b_combine", &[d])?,
            w_out: store.expect("out.w_vocab", &[d, tgt_vocab_size])?,
            b_out: store.expect("out.b_vocab", &[tgt_vocab_size])?,
        };
        let expected = model.param_count();
        if store.len() != expected {
            return Err(Error::Compatibility(format!(
                "store holds {} parameters, model layout has {expected}",
                store.len()
            )));
        }
        Ok(model)
    }

    fn param_count(&self) -> usize {
        let tied = self.encoder[0][0] == self.encoder[0][1];
        let cells = if tied { 3 } else { 6 };
        let per_layer = cells + 4 + 3;
        2 + per_layer * self.shape.layers + 4 + 4
    }

    pub fn encoder_cell(&self, layer: usize, backward: bool) -> &LstmCell {
        &self.encoder[layer][backward as usize]
    }

    /// Runs every encoder layer over a padded batch.
    pub fn encode_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &[&[usize]],
    ) -> Result<EncodedBatch> {
        if batch.is_empty() {
            return Err(Error::Input("empty encoder batch".into()));
        }
        if let Some(i) = batch.iter().position(|s| s.is_empty()) {
            return Err(Error::Input(format!("sentence {i} of the batch is empty")));
        }
        let d = self.shape.d;
        let rows = batch.len();
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let steps = *lengths.iter().max().expect("non-empty");
        let mask: Vec<Vec<bool>> = lengths.iter().map(|&n| (0..steps).map(|t| t < n).collect()).collect();
        let step_mask: Vec<Vec<bool>> = (0..steps).map(|t| lengths.iter().map(|&n| t < n).collect()).collect();

        let table = g.param(store, self.src_embed);
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            inputs.push(g.gather_rows(table, &ids)?);
        }

        let zeros = g.input(Tensor::zeros(vec![rows, d])?)?;
        let mut layers = Vec::with_capacity(self.shape.layers);
        for cells in &self.encoder {
            let [fwd, bwd] = cells;
            let (mut h, mut c) = (zeros, zeros);
            let mut forward_h = Vec::with_capacity(steps);
            let mut forward_c = Vec::with_capacity(steps);
            for t in 0..steps {
                let (h2, c2) = fwd.step(g, store, inputs[t], h, c)?;
                // Finished rows carry their last real state forward.
                h = g.select_rows(&step_mask[t], h2, h)?;
                c = g.select_rows(&step_mask[t], c2, c)?;
                forward_h.push(h);
                forward_c.push(c);
            }
            let (mut h, mut c) = (zeros, zeros);
            let mut backward_h = vec![zeros; steps];
            let mut backward_c = vec![zeros; steps];
            for t in (0..steps).rev() {
                let (h2, c2) = bwd.step(g, store, inputs[t], h, c)?;
                h = g.select_rows(&step_mask[t], h2, h)?;
                c = g.select_rows(&step_mask[t], c2, c)?;
                backward_h[t] = h;
                backward_c[t] = c;
            }
            inputs = (0..steps)
                .map(|t| g.concat(&[forward_h[t], backward_h[t]]))
                .collect::<Result<Vec<_>>>()?;
            layers.push(LayerVars { forward_h, backward_h, forward_c, backward_c });
        }
        Ok(EncodedBatch { layers, lengths, mask })
    }

    /// Encodes sentences together and splits the result per sentence.
    pub fn encode_batch<T: Real>(&self, store: &ParamStore<T>, batch: &[&[usize]]) -> Result<Vec<EncoderOutput<T>>> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, store, batch)?;
        let d = self.shape.d;
        let row = |g: &Graph<T>, v: Var, b: usize| g.value(v).row(b).to_vec();
        Ok((0..batch.len())
            .map(|b| {
                let n = enc.lengths[b];
                let layers = enc
                    .layers
                    .iter()
                    .map(|lv| LayerStates {
                        forward_h: lv.forward_h[..n].iter().map(|&v| row(&g, v, b)).collect(),
                        backward_h: lv.backward_h[..n].iter().map(|&v| row(&g, v, b)).collect(),
                        forward_c: lv.forward_c[..n].iter().map(|&v| row(&g, v, b)).collect(),
                        backward_c: lv.backward_c[..n].iter().map(|&v| row(&g, v, b)).collect(),
                    })
                    .collect();
                EncoderOutput { d, layers, sentence_length: n }
            })
            .collect())
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, sentence: &[usize]) -> Result<EncoderOutput<T>> {
        Ok(self.encode_batch(store, &[sentence])?.remove(0))
    }

    /// Decoder start state from the bridge, plus attention memory over the
    /// top layer.
    pub fn init_decoder<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &EncodedBatch,
    ) -> Result<(DecoderState, AttentionMemory)> {
        let rows = enc.lengths.len();
        let mut h = Vec::with_capacity(self.shape.layers);
        let mut c = Vec::with_capacity(self.shape.layers);
        for (lv, br) in enc.layers.iter().zip(&self.bridges) {
            let last = lv.forward_h.len() - 1;
            let hh = g.concat(&[lv.forward_h[last], lv.backward_h[0]])?;
            let cc = g.concat(&[lv.forward_c[last], lv.backward_c[0]])?;
            let (wh, bh, wc, bc) = (
                g.param(store, br.w_h),
                g.param(store, br.b_h),
                g.param(store, br.w_c),
                g.param(store, br.b_c),
            );
            let h0 = g.affine(hh, wh, bh)?;
            h.push(g.tanh(h0));
            c.push(g.affine(cc, wc, bc)?);
        }
        let top = enc.layers.last().expect("at least one layer");
        let values = (0..top.forward_h.len())
            .map(|t| g.concat(&[top.forward_h[t], top.backward_h[t]]))
            .collect::<Result<Vec<_>>>()?;
        let memory = self.attention.memory(g, store, &values, enc.mask.clone())?;
        let feed = g.input(Tensor::zeros(vec![rows, 2 * self.shape.d])?)?;
        Ok((DecoderState { h, c, feed }, memory))
    }

    /// One decoder step. Returns logits `[B, tgt_vocab]`, the next state and
    /// the attention weights.
    pub fn decode_step<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        prev: &[usize],
        state: &DecoderState,
        memory: &AttentionMemory,
    ) -> Result<(Var, DecoderState, Var)> {
        let table = g.param(store, self.tgt_embed);
        let emb = g.gather_rows(table, prev)?;
        let mut x = g.concat(&[emb, state.feed])?;
        let mut h = Vec::with_capacity(self.shape.layers);
        let mut c = Vec::with_capacity(self.shape.layers);
        for (l, cell) in self.decoder.iter().enumerate() {
            let (h2, c2) = cell.step(g, store, x, state.h[l], state.c[l])?;
            h.push(h2);
            c.push(c2);
            x = h2;
        }
        let (ctx, weights) = self.attention.attend(g, store, x, memory)?;
        let joined = g.concat(&[x, ctx])?;
        let (wc, bc, wo, bo) = (
            g.param(store, self.w_combine),
            g.param(store, self.b_combine),
            g.param(store, self.w_out),
            g.param(store, self.b_out),
        );
        let comb = g.affine(joined, wc, bc)?;
        let comb = g.tanh(comb);
        let logits = g.affine(comb, wo, bo)?;
        Ok((logits, DecoderState { h, c, feed: ctx }, weights))
    }

    /// Teacher-forced loss. Decoder inputs are `<s> y`, gold outputs `y </s>`.
    pub fn batch_loss<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, pairs: &[&EncodedPair]) -> Result<BatchLoss> {
        let sources: Vec<&[usize]> = pairs.iter().map(|p| p.source.as_slice()).collect();
        let enc = self.encode_graph(g, store, &sources)?;
        let (mut state, memory) = self.init_decoder(g, store, &enc)?;
        let steps = pairs.iter().map(|p| p.target.len() + 1).max().unwrap_or(1);
        let mut sums = Vec::with_capacity(steps);
        let mut tokens = 0;
        for t in 0..steps {
            let prev: Vec<usize> = pairs
                .iter()
                .map(|p| match t {
                    0 => BOS,
                    t if t <= p.target.len() => p.target[t - 1],
                    _ => PAD,
                })
                .collect();
            let gold: Vec<Option<usize>> = pairs
                .iter()
                .map(|p| match t {
                    t if t < p.target.len() => Some(p.target[t]),
                    t if t == p.target.len() => Some(EOS),
                    _ => None,
                })
                .collect();
            tokens += gold.iter().flatten().count();
            let (logits, next, _) = self.decode_step(g, store, &prev, &state, &memory)?;
            sums.push(g.cross_entropy_sum(logits, &gold)?);
            state = next;
        }
        let sum = g.add_n(&sums)?;
        let mean = g.scale(sum, T::lit(1.0 / tokens as f64));
        Ok(BatchLoss { mean, sum, tokens })
    }

    /// Greedy decoding of one sentence, stopping at `</s>` or `max_len` tokens.
    pub fn greedy_decode<T: Real>(&self, store: &ParamStore<T>, source: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, store, &[source])?;
        let (mut state, memory) = self.init_decoder(&mut g, store, &enc)?;
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (logits, next, _) = self.decode_step(&mut g, store, &[prev], &state, &memory)?;
            let row = g.value(logits).row(0);
            let best = argmax(row);
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
            state = next;
        }
        Ok(out)
    }

    /// `exp(Σ −log p / N)` over every target token and the closing `</s>`.
    pub fn perplexity<T: Real>(&self, store: &ParamStore<T>, data: &[EncodedPair], batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("perplexity over no pairs".into()));
        }
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for chunk in data.chunks(batch_size.max(1)) {
            let refs: Vec<&EncodedPair> = chunk.iter().collect();
            let mut g = Graph::new();
            let loss = self.batch_loss(&mut g, store, &refs)?;
            nll += g.scalar(loss.sum).as_f64();
            tokens += loss.tokens;
        }
        Ok((nll / tokens as f64).exp())
    }
}

/// Lowest index wins ties.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn validate(shape: &ModelShape) -> Result<()> {
    if shape.d == 0 || shape.layers == 0 {
        return Err(Error::Validation(format!(
            "d and layers must be ≥ 1 (d={}, layers={})",
            shape.d, shape.layers
        )));
    }
    if shape.src_vocab_size <= EOS || shape.tgt_vocab_size <= EOS {
        return Err(Error::Validation("vocabularies must hold the reserved tokens".into()));
    }
    Ok(())
}
