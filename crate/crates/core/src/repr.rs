//! Fixed-size sentence vectors from encoder states and the pair features
//! built from them.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::seq2seq::{EncoderOutput, Seq2Seq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepScheme {
    /// Forward state at the last token joined with backward state at the first.
    ConcatLast,
    /// Elementwise max over per-position `[forward; backward]` states.
    MaxPool,
}

impl RepScheme {
    pub fn name(self) -> &'static str {
        match self {
            RepScheme::ConcatLast => "concat_last",
            RepScheme::MaxPool => "maxpool",
        }
    }

    fn tag(self) -> u8 {
        match self {
            RepScheme::ConcatLast => 0,
            RepScheme::MaxPool => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(RepScheme::ConcatLast),
            1 => Some(RepScheme::MaxPool),
            _ => None,
        }
    }
}

impl FromStr for RepScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_last" => Ok(RepScheme::ConcatLast),
            "maxpool" => Ok(RepScheme::MaxPool),
            other => Err(Error::Validation(format!("unknown representation scheme {other:?}"))),
        }
    }
}

impl fmt::Display for RepScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Concat,
    #[serde(rename = "infersent")]
    InferSent,
}

impl Combiner {
    pub fn name(self) -> &'static str {
        match self {
            Combiner::Concat => "concat",
            Combiner::InferSent => "infersent",
        }
    }

    /// Feature width for sentence vectors of width `sentence_dim`.
    pub fn output_dim(self, sentence_dim: usize) -> usize {
        match self {
            Combiner::Concat => 2 * sentence_dim,
            Combiner::InferSent => 4 * sentence_dim,
        }
    }
}

impl FromStr for Combiner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Combiner::Concat),
            "infersent" => Ok(Combiner::InferSent),
            other => Err(Error::Validation(format!("unknown combiner {other:?}"))),
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRep {
    pub vector: Vec<f32>,
    pub scheme: RepScheme,
    pub source_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRep {
    pub vector: Vec<f32>,
    pub combiner: Combiner,
}

fn nonempty(enc: &EncoderOutput) -> Result<()> {
    if enc.sentence_length == 0 || enc.top().forward_h.is_empty() {
        return Err(Error::Input("cannot extract from an empty sentence".into()));
    }
    Ok(())
}

pub fn extract_concat_last(enc: &EncoderOutput) -> Result<SentenceRep> {
    nonempty(enc)?;
    let top = enc.top();
    let n = enc.sentence_length;
    let mut vector = top.forward_h[n - 1].clone();
    vector.extend_from_slice(&top.backward_h[0]);
    Ok(SentenceRep {
        vector,
        scheme: RepScheme::ConcatLast,
        source_length: n,
    })
}

pub fn extract_maxpool(enc: &EncoderOutput) -> Result<SentenceRep> {
    nonempty(enc)?;
    let top = enc.top();
    let d = enc.d;
    let mut vector = vec![f32::NEG_INFINITY; 2 * d];
    for (f, b) in top.forward_h.iter().zip(&top.backward_h) {
        for (slot, &v) in vector.iter_mut().zip(f.iter().chain(b)) {
            *slot = slot.max(v);
        }
    }
    Ok(SentenceRep {
        vector,
        scheme: RepScheme::MaxPool,
        source_length: enc.sentence_length,
    })
}

pub fn extract(enc: &EncoderOutput, scheme: RepScheme) -> Result<SentenceRep> {
    match scheme {
        RepScheme::ConcatLast => extract_concat_last(enc),
        RepScheme::MaxPool => extract_maxpool(enc),
    }
}

fn check_pair(v: &[f32], v_bar: &[f32]) -> Result<()> {
    if v.len() != v_bar.len() {
        return Err(Error::Shape(format!(
            "sentence vectors of width {} and {} cannot be combined",
            v.len(),
            v_bar.len()
        )));
    }
    Ok(())
}

/// `[v; v̄]`, context first.
pub fn combine_concat(v: &[f32], v_bar: &[f32]) -> Result<PairRep> {
    check_pair(v, v_bar)?;
    Ok(PairRep {
        vector: [v, v_bar].concat(),
        combiner: Combiner::Concat,
    })
}

/// `[v̄; v; |v̄ − v|; v̄ ⊙ v]` where `v` is the context and `v̄` the hypothesis.
pub fn combine_infersent(v: &[f32], v_bar: &[f32]) -> Result<PairRep> {
    check_pair(v, v_bar)?;
    let mut out = Vec::with_capacity(4 * v.len());
    out.extend_from_slice(v_bar);
    out.extend_from_slice(v);
    out.extend(v_bar.iter().zip(v).map(|(a, b)| (a - b).abs()));
    out.extend(v_bar.iter().zip(v).map(|(a, b)| a * b));
    Ok(PairRep {
        vector: out,
        combiner: Combiner::InferSent,
    })
}

pub fn combine(combiner: Combiner, context: &SentenceRep, hypothesis: &SentenceRep) -> Result<PairRep> {
    if context.scheme != hypothesis.scheme {
        return Err(Error::Compatibility(format!(
            "context uses {} but hypothesis uses {}",
            context.scheme, hypothesis.scheme
        )));
    }
    match combiner {
        Combiner::Concat => combine_concat(&context.vector, &hypothesis.vector),
        Combiner::InferSent => combine_infersent(&context.vector, &hypothesis.vector),
    }
}

/// Encodes sentences in fixed-size chunks, preserving order.
pub fn encode_sentences(
    model: &Seq2Seq,
    params: &ParamStore<f32>,
    sentences: &[Vec<usize>],
    scheme: RepScheme,
    batch_size: usize,
) -> Result<Vec<SentenceRep>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(batch_size.max(1)) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        for enc in model.encode_batch(params, &refs)? {
            out.push(extract(&enc, scheme)?);
        }
    }
    Ok(out)
}

pub const DUMP_MAGIC: &[u8; 5] = b"SPRR1";

/// A file of sentence vectors, one per dataset row listed in `row_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepDump {
    pub scheme: RepScheme,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
    pub row_ids: Vec<usize>,
}

/// `dump.sprr` → `dump.sprr.idx`
pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

impl RepDump {
    pub fn new(scheme: RepScheme, dim: usize, vectors: Vec<Vec<f32>>, row_ids: Vec<usize>) -> Result<Self> {
        if vectors.len() != row_ids.len() {
            return Err(Error::Shape(format!(
                "{} vectors but {} row ids",
                vectors.len(),
                row_ids.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
            return Err(Error::Shape(format!(
                "vector {i} has width {}, dump width is {dim}",
                vectors[i].len()
            )));
        }
        Ok(RepDump { scheme, dim, vectors, row_ids })
    }

    pub fn from_reps(reps: &[SentenceRep], row_ids: Vec<usize>) -> Result<Self> {
        let scheme = reps.first().map_or(RepScheme::ConcatLast, |r| r.scheme);
        let dim = reps.first().map_or(0, |r| r.vector.len());
        Self::new(scheme, dim, reps.iter().map(|r| r.vector.clone()).collect(), row_ids)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 4 * self.dim * self.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.push(self.scheme.tag());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in &self.vectors {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn index_text(&self) -> String {
        self.row_ids.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn decode(bytes: &[u8], index: &str, origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.len() < 14 || &bytes[..5] != DUMP_MAGIC {
            return Err(bad("not a representation dump (missing SPRR1 header)"));
        }
        let scheme = RepScheme::from_tag(bytes[5]).ok_or_else(|| bad("unknown scheme tag"))?;
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let dim = u32_at(6);
        let count = u32_at(10);
        let body = &bytes[14..];
        if body.len() != 4 * dim * count {
            return Err(bad(&format!(
                "header declares {count} × {dim} floats but body holds {} bytes",
                body.len()
            )));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let vectors = if dim == 0 {
            vec![Vec::new(); count]
        } else {
            floats.chunks(dim).map(<[f32]>::to_vec).collect()
        };
        let row_ids = index
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse()
                    .map_err(|_| bad(&format!("index line {}: {l:?} is not a row id", i + 1)))
            })
            .collect::<Result<Vec<usize>>>()?;
        if row_ids.len() != count {
            return Err(bad(&format!("index lists {} rows, dump holds {count}", row_ids.len())));
        }
        Ok(RepDump { scheme, dim, vectors, row_ids })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))?;
        let idx = index_path(path);
        std::fs::write(&idx, self.index_text()).map_err(|e| Error::io(&idx, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let idx = index_path(path);
        let index = std::fs::read_to_string(&idx).map_err(|e| Error::io(&idx, e))?;
        Self::decode(&bytes, &index, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::LayerStates;
    use proptest::prelude::*;

    fn toy(n: usize, d: usize, layers: usize) -> EncoderOutput {
        let val = |l: usize, dir: usize, t: usize, k: usize| ((l * 1000 + dir * 100 + t * 10 + k) as f32 * 0.731).sin();
        EncoderOutput {
            d,
            sentence_length: n,
            layers: (0..layers)
                .map(|l| LayerStates {
                    forward_h: (0..n).map(|t| (0..d).map(|k| val(l, 0, t, k)).collect()).collect(),
                    backward_h: (0..n).map(|t| (0..d).map(|k| val(l, 1, t, k)).collect()).collect(),
                    forward_c: (0..n).map(|t| (0..d).map(|k| val(l, 2, t, k)).collect()).collect(),
                    backward_c: (0..n).map(|t| (0..d).map(|k| val(l, 3, t, k)).collect()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn concat_last_slices_the_right_states() {
        let enc = toy(4, 3, 2);
        let r = extract_concat_last(&enc).unwrap();
        let top = &enc.layers[1];
        let mut expect = top.forward_h[3].clone();
        expect.extend(top.backward_h[0].iter());
        assert_eq!(r.vector, expect);
        assert_eq!(r.source_length, 4);
    }

    #[test]
    fn length_one_sentence() {
        let enc = toy(1, 2, 1);
        let top = enc.top();
        let joined = [top.forward_h[0].clone(), top.backward_h[0].clone()].concat();
        assert_eq!(extract_concat_last(&enc).unwrap().vector, joined);
        assert_eq!(extract_maxpool(&enc).unwrap().vector, joined);
    }

    #[test]
    fn maxpool_loop_oracle() {
        let enc = toy(3, 2, 1);
        let top = enc.top();
        let mut expect = vec![];
        for k in 0..4 {
            let mut best = f32::MIN;
            for t in 0..3 {
                let v = if k < 2 { top.forward_h[t][k] } else { top.backward_h[t][k - 2] };
                if v > best {
                    best = v;
                }
            }
            expect.push(best);
        }
        assert_eq!(extract_maxpool(&enc).unwrap().vector, expect);
    }

    #[test]
    fn lower_layers_are_ignored() {
        let enc = toy(5, 3, 3);
        let mut masked = enc.clone();
        for l in 0..2 {
            let layer = &mut masked.layers[l];
            for v in layer.forward_h.iter_mut().chain(layer.backward_h.iter_mut()) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for scheme in [RepScheme::ConcatLast, RepScheme::MaxPool] {
            assert_eq!(extract(&enc, scheme).unwrap(), extract(&masked, scheme).unwrap());
        }
    }

    #[test]
    fn combiner_identities() {
        let v = [1.0f32, -2.0, 0.5];
        let w = [0.25f32, 4.0, -1.0];
        let c = combine_concat(&v, &w).unwrap().vector;
        assert_eq!(&c[..3], &v);
        assert_eq!(combine_concat(&w, &v).unwrap().vector, [&w[..], &v[..]].concat());

        let same = combine_infersent(&v, &v).unwrap().vector;
        assert_eq!(&same[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&same[9..], &[1.0, 4.0, 0.25]);

        let a = combine_infersent(&v, &w).unwrap().vector;
        let b = combine_infersent(&w, &v).unwrap().vector;
        assert_eq!(&a[..3], &w);
        assert_eq!(&a[3..6], &v);
        assert_eq!(&a[..3], &b[3..6]);
        assert_eq!(&a[6..], &b[6..]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        assert!(matches!(combine_concat(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(combine_infersent(&[1.0], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn dump_round_trip_and_header() {
        let dump = RepDump::new(RepScheme::MaxPool, 2, vec![vec![1.5, -0.0], vec![f32::MIN_POSITIVE, 3.0]], vec![4, 9]).unwrap();
        let bytes = dump.encode();
        assert_eq!(&bytes[..5], b"SPRR1");
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        let back = RepDump::decode(&bytes, &dump.index_text(), Path::new("x")).unwrap();
        assert_eq!(back.vectors[0][1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back, dump);
        assert!(RepDump::decode(&bytes[..bytes.len() - 1], "4\n9\n", Path::new("x")).is_err());
        assert!(RepDump::decode(&bytes, "4\n", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn dims_follow_d(d in 1usize..12, n in 1usize..6) {
            let enc = toy(n, d, 2);
            for scheme in [RepScheme::ConcatLast, RepScheme::MaxPool] {
                let r = extract(&enc, scheme).unwrap();
                prop_assert_eq!(r.vector.len(), 2 * d);
                let again = extract(&enc, scheme).unwrap();
                prop_assert_eq!(
                    r.vector.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                    again.vector.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
                );
                prop_assert_eq!(combine(Combiner::Concat, &r, &r).unwrap().vector.len(), 4 * d);
                prop_assert_eq!(combine(Combiner::InferSent, &r, &r).unwrap().vector.len(), 8 * d);
            }
        }

        #[test]
        fn maxpool_dominates_and_is_permutation_invariant(seed in 0u64..500, n in 1usize..7) {
            let mut enc = toy(n, 3, 1);
            for (t, v) in enc.layers[0].forward_h.iter_mut().enumerate() {
                v[0] = ((seed as f32) * 0.37 + t as f32).cos();
            }
            let pooled = extract_maxpool(&enc).unwrap().vector;
            let top = enc.top().clone();
            for t in 0..n {
                for (k, x) in top.forward_h[t].iter().chain(&top.backward_h[t]).enumerate() {
                    prop_assert!(pooled[k] >= *x);
                }
            }
            let mut shuffled = enc.clone();
            shuffled.layers[0].forward_h.rotate_left((seed as usize) % n);
            shuffled.layers[0].backward_h.rotate_left((seed as usize) % n);
            prop_assert_eq!(extract_maxpool(&shuffled).unwrap().vector, pooled);
        }
    }
}
