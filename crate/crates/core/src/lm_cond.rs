//! Conditioning on frozen language-model token embeddings.
//!
//! LM tokens and model symbols have different lengths, so a single-head
//! attention block aligns the LM embeddings to the encoder's symbol sequence
//! and adds the result back onto the encoder output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lit, Float, Tensor};
use crate::params::{Ctx, Init, ParamId, ParamStore};

const UNK_TOKENS: [&str; 2] = ["<unk>", "[UNK]"];

/// Token vocabulary with a fixed embedding matrix. Never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    matrix: Vec<f32>,
    max_token_chars: usize,
}

/// LM token ids for one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmTokenSequence {
    pub ids: Vec<usize>,
}

impl FrozenEmbeddingTable {
    pub fn new(tokens: Vec<String>, dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if tokens.is_empty() || dim == 0 {
            return Err(Error::Format(
                "embedding table must have tokens and a positive dimension".into(),
            ));
        }
        if matrix.len() != tokens.len() * dim {
            return Err(Error::Format(format!(
                "embedding table has {} values, expected {} x {dim}",
                matrix.len(),
                tokens.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("embedding table contains non-finite values".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?} in embedding table")));
            }
        }
        let max_token_chars = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Ok(FrozenEmbeddingTable {
            tokens,
            index,
            dim,
            matrix,
            max_token_chars,
        })
    }

    /// Parses the text format: a `V D` header, then `V` lines of
    /// `token v_1 ... v_D`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty embedding table".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(hline + 1, format!("bad header: {e}")))?;
        let [v, d] = dims[..] else {
            return Err(err(hline + 1, "header must be `V D`".into()));
        };
        let mut tokens = Vec::with_capacity(v);
        let mut matrix = Vec::with_capacity(v * d);
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default().to_string();
            let before = matrix.len();
            for f in fields {
                matrix.push(
                    f.parse::<f32>()
                        .map_err(|e| err(i + 1, format!("bad value {f:?}: {e}")))?,
                );
            }
            if matrix.len() - before != d {
                return Err(err(
                    i + 1,
                    format!("expected {d} values, found {}", matrix.len() - before),
                ));
            }
            tokens.push(token);
        }
        if tokens.len() != v {
            return Err(err(
                hline + 1,
                format!("header declares {v} tokens, found {}", tokens.len()),
            ));
        }
        Self::new(tokens, d, matrix)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.tokens.len(), self.dim);
        for (t, row) in self.tokens.iter().zip(self.matrix.chunks(self.dim)) {
            s.push_str(t);
            for v in row {
                write!(s, " {v}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Small deterministic table: letters, digits, punctuation, an unknown
    /// token and a handful of common words and word pieces, 32-dimensional.
    pub fn demo() -> Self {
        let words = [
            "the", "and", "of", "to", "in", "is", "it", "that", "was", "for", "on", "with", "as", "he", "she", "be",
            "at", "by", "this", "had", "not", "are", "but", "from", "or", "have", "an", "they", "which", "one", "you",
            "were", "her", "all", "there", "hello", "world", "speech", "text", "mixer", "voice", "sound", "time",
            "ing", "ed", "er", "es", "th", "ch", "sh", "tion", "ly", "re", "un", "st", "ou",
        ];
        let mut tokens: Vec<String> = vec!["<unk>".into()];
        tokens.extend(('a'..='z').map(String::from));
        tokens.extend(('0'..='9').map(String::from));
        tokens.extend([".", ",", "!", "?", "'", "-", ";", ":"].map(String::from));
        tokens.extend(words.iter().map(|w| w.to_string()));
        let dim = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(0x4c4d);
        let matrix = (0..tokens.len() * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        Self::new(tokens, dim, matrix).expect("demo table is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn unk_id(&self) -> Option<usize> {
        UNK_TOKENS.iter().find_map(|t| self.id(t))
    }

    /// `[M, D]` embeddings of the sequence, a constant with no gradient.
    pub fn embed<F: Float>(&self, seq: &LmTokenSequence) -> Result<Tensor<F>> {
        if seq.ids.is_empty() {
            return Err(Error::invalid("embed", "empty LM token sequence"));
        }
        let mut data = Vec::with_capacity(seq.ids.len() * self.dim);
        for &id in &seq.ids {
            if id >= self.len() {
                return Err(Error::invalid(
                    "embed",
                    format!("token id {id} outside vocabulary of {}", self.len()),
                ));
            }
            data.extend(
                self.matrix[id * self.dim..(id + 1) * self.dim]
                    .iter()
                    .map(|&v| lit::<F>(v as f64)),
            );
        }
        Tensor::new(&[seq.ids.len(), self.dim], data)
    }
}

/// Greedy longest-match tokenization of each lowercased whitespace-separated
/// word. Characters no vocabulary entry covers become the unknown token.
pub fn lm_tokenize(text: &str, table: &FrozenEmbeddingTable) -> Result<LmTokenSequence> {
    let lower = text.to_lowercase();
    if lower.trim().is_empty() {
        return Err(Error::Tokenizer("empty text".into()));
    }
    let mut ids = Vec::new();
    for word in lower.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut pos = 0;
        while pos < chars.len() {
            let longest = (1..=table.max_token_chars.min(chars.len() - pos))
                .rev()
                .find_map(|len| {
                    let piece: String = chars[pos..pos + len].iter().collect();
                    table.id(&piece).map(|id| (id, len))
                });
            match longest {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => {
                    let unk = table
                        .unk_id()
                        .ok_or_else(|| Error::Tokenizer(format!("no token covers {:?}", chars[pos])))?;
                    ids.push(unk);
                    pos += 1;
                }
            }
        }
    }
    Ok(LmTokenSequence { ids })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    /// Path of the embedding table file; the built-in demo table when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// Embedding width of the table (checked against the file).
    pub lm_dim: usize,
    /// Length of the learned positional tables of both streams.
    pub max_positions: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            table: None,
            lm_dim: 128,
            max_positions: 1024,
        }
    }
}

pub const LM_CONV_KERNEL: usize = 3;

/// Single-head attention from encoder symbols (queries) to LM tokens (keys
/// and values).
#[derive(Clone, Debug)]
pub struct LmAttention {
    pub dim: usize,
    pub lm_dim: usize,
    pub max_positions: usize,
    pub lm_proj: (ParamId, ParamId),
    pub pos_text: ParamId,
    pub pos_lm: ParamId,
    pub query_conv: (ParamId, ParamId),
    pub key_conv: (ParamId, ParamId),
    pub value_proj: (ParamId, ParamId),
    pub out_proj: (ParamId, ParamId),
}

impl LmAttention {
    pub(crate) fn new<F: Float, R: Rng>(
        dim: usize,
        cfg: &LmConfig,
        store: &mut ParamStore<F>,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        if cfg.lm_dim == 0 || cfg.max_positions == 0 {
            return Err(Error::Config("lm_dim and max_positions must be positive".into()));
        }
        let k = LM_CONV_KERNEL;
        let mut lin =
            |store: &mut ParamStore<F>, name: &str, shape: &[usize], fan: usize| -> Result<(ParamId, ParamId)> {
                let out = *shape.last().unwrap();
                Ok((
                    store.add(format!("lm.{name}.weight"), init.fan_in(shape, fan))?,
                    store.add(format!("lm.{name}.bias"), init.fan_in(&[out], fan))?,
                ))
            };
        let lm_proj = lin(store, "proj", &[cfg.lm_dim, dim], cfg.lm_dim)?;
        let query_conv = lin(store, "query_conv", &[k, dim, dim], k * dim)?;
        let key_conv = lin(store, "key_conv", &[k, dim, dim], k * dim)?;
        let value_proj = lin(store, "value", &[dim, dim], dim)?;
        let out_proj = lin(store, "out", &[dim, dim], dim)?;
        let pos_text = store.add("lm.pos_text", init.embedding(&[cfg.max_positions, dim]))?;
        let pos_lm = store.add("lm.pos_lm", init.embedding(&[cfg.max_positions, dim]))?;
        Ok(LmAttention {
            dim,
            lm_dim: cfg.lm_dim,
            max_positions: cfg.max_positions,
            lm_proj,
            pos_text,
            pos_lm,
            query_conv,
            key_conv,
            value_proj,
            out_proj,
        })
    }

    pub fn count(dim: usize, cfg: &LmConfig) -> usize {
        let k = LM_CONV_KERNEL;
        (cfg.lm_dim * dim + dim) + 2 * (k * dim * dim + dim) + 2 * (dim * dim + dim) + 2 * cfg.max_positions * dim
    }

    pub fn zero_output<F: Float>(&self, store: &mut ParamStore<F>) {
        store.zero(self.out_proj.0);
        store.zero(self.out_proj.1);
    }

    fn positions<F: Float>(&self, ctx: &Ctx<'_, F>, table: ParamId, n: usize) -> Result<Tensor<F>> {
        if n > self.max_positions {
            return Err(Error::Config(format!(
                "sequence of length {n} exceeds max_positions {}",
                self.max_positions
            )));
        }
        let idx: Vec<Option<usize>> = (0..n).map(Some).collect();
        ctx.tape.gather_rows(&ctx.p(table), &idx)
    }

    /// Attention for one utterance: `t_e` is `[N, C]` with `len` valid rows,
    /// `lm_emb` is `[M, D_lm]`. Returns the `[N, C]` update (before the
    /// residual) and the `[N, M]` attention weights.
    pub fn attend_one<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        t_e: &Tensor<F>,
        len: usize,
        lm_emb: &Tensor<F>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let tape = ctx.tape;
        if lm_emb.rank() != 2 || lm_emb.dim(0) == 0 || lm_emb.dim(1) != self.lm_dim {
            return Err(Error::shape("attend_lm", lm_emb.shape(), &[0, self.lm_dim]));
        }
        let (n, m, c) = (t_e.dim(0), lm_emb.dim(0), self.dim);
        let q_in = tape.add(t_e, &self.positions(ctx, self.pos_text, n)?)?;
        let q_in = tape.apply_sequence_mask(&q_in.reshape(&[1, n, c])?, &[len])?;
        let q = tape.conv1d(&q_in, &ctx.p(self.query_conv.0), Some(&ctx.p(self.query_conv.1)))?;
        let q = tape.apply_sequence_mask(&q, &[len])?.reshape(&[n, c])?;

        let lm = tape.linear(lm_emb, &ctx.p(self.lm_proj.0), Some(&ctx.p(self.lm_proj.1)))?;
        let k_in = tape.add(&lm, &self.positions(ctx, self.pos_lm, m)?)?;
        let k = tape.conv1d(
            &k_in.reshape(&[1, m, c])?,
            &ctx.p(self.key_conv.0),
            Some(&ctx.p(self.key_conv.1)),
        )?;
        let k = k.reshape(&[m, c])?;
        let v = tape.linear(&lm, &ctx.p(self.value_proj.0), Some(&ctx.p(self.value_proj.1)))?;

        let scores = tape.scale(&tape.matmul(&q, &k, true)?, lit(1.0 / (c as f64).sqrt()))?;
        let attn = tape.exp(&tape.log_softmax(&scores, 1)?)?;
        let mixed = tape.matmul(&attn, &v, false)?;
        let out = tape.linear(&mixed, &ctx.p(self.out_proj.0), Some(&ctx.p(self.out_proj.1)))?;
        Ok((out, attn))
    }

    /// `t_e + attention(t_e, lm)` for a `[B, N, C]` batch with one LM
    /// embedding matrix per item. Output length equals the input length.
    pub fn forward<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        t_e: &Tensor<F>,
        lengths: &[usize],
        lm_embs: &[Tensor<F>],
    ) -> Result<Tensor<F>> {
        if t_e.rank() != 3 || t_e.dim(0) != lm_embs.len() || t_e.dim(2) != self.dim {
            return Err(Error::shape("attend_lm", t_e.shape(), &[lm_embs.len(), 0, self.dim]));
        }
        let (b, n, c) = (t_e.dim(0), t_e.dim(1), t_e.dim(2));
        let mut parts = Vec::with_capacity(b);
        for (i, (lm, &len)) in lm_embs.iter().zip(lengths).enumerate() {
            let idx: Vec<Option<usize>> = (0..n).map(|r| Some(i * n + r)).collect();
            let item = ctx.tape.gather_rows(t_e, &idx)?;
            parts.push(self.attend_one(ctx, &item, len, lm)?.0);
        }
        let refs: Vec<&Tensor<F>> = parts.iter().collect();
        let update = ctx.tape.concat(&refs)?.reshape(&[b, n, c])?;
        let update = ctx.tape.apply_sequence_mask(&update, lengths)?;
        ctx.tape.add(t_e, &update)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    use super::*;
    use crate::numerics::gradcheck::{project, random_tensor, Probe};
    use crate::numerics::Tape;
    use crate::verify::check_with_params;

    fn small_attention(seed: u64, lm_dim: usize) -> (LmAttention, ParamStore<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = LmConfig {
            table: None,
            lm_dim,
            max_positions: 16,
        };
        let a = LmAttention::new(4, &cfg, &mut store, &mut Init { rng: &mut rng }).unwrap();
        (a, store)
    }

    #[test]
    fn demo_table_shape_and_round_trip() {
        let t = FrozenEmbeddingTable::demo();
        assert!((90..=110).contains(&t.len()), "{}", t.len());
        assert_eq!(t.dim(), 32);
        let back = FrozenEmbeddingTable::parse(&t.to_text(), Path::new("demo")).unwrap();
        assert_eq!(back, t);
        assert_eq!(FrozenEmbeddingTable::demo(), t);
    }

    #[test]
    fn parse_errors_name_line() {
        let bad = "2 2\na 1 2\nb 1\n";
        match FrozenEmbeddingTable::parse(bad, Path::new("t.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(FrozenEmbeddingTable::parse("3 1\na 1\n", Path::new("t")).is_err());
        assert!(FrozenEmbeddingTable::parse("", Path::new("t")).is_err());
        assert!(FrozenEmbeddingTable::parse("2 1\na 1\na 2\n", Path::new("t")).is_err());
    }

    #[test]
    fn tokenizer_examples() {
        let t = FrozenEmbeddingTable::demo();
        assert_eq!(lm_tokenize("hello", &t).unwrap().ids, vec![t.id("hello").unwrap()]);
        assert_eq!(lm_tokenize("Hello", &t).unwrap().ids, vec![t.id("hello").unwrap()]);
        let two = lm_tokenize("hello world", &t).unwrap();
        assert_eq!(two.ids, vec![t.id("hello").unwrap(), t.id("world").unwrap()]);
        assert_ne!(two.ids.len(), "hello world".chars().count());
        assert!(matches!(lm_tokenize("", &t), Err(Error::Tokenizer(_))));
        assert!(lm_tokenize("   ", &t).is_err());
    }

    #[test]
    fn tokenizer_longest_match_and_unknown() {
        let t = FrozenEmbeddingTable::demo();
        let ids = lm_tokenize("thing", &t).unwrap().ids;
        let pieces: Vec<&str> = ids.iter().map(|&i| t.token(i).unwrap()).collect();
        assert_eq!(pieces, vec!["th", "ing"]);
        let ids = lm_tokenize("a\u{e9}b", &t).unwrap().ids;
        assert_eq!(ids, vec![t.id("a").unwrap(), t.unk_id().unwrap(), t.id("b").unwrap()]);
        let no_unk = FrozenEmbeddingTable::new(vec!["a".into()], 1, vec![0.5]).unwrap();
        assert!(lm_tokenize("b", &no_unk).is_err());
    }

    #[test]
    fn single_lm_token_gives_unit_weights() {
        let (a, store) = small_attention(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let te = random_tensor(&mut rng, &[5, 4], 1.0);
        let lm = random_tensor(&mut rng, &[1, 3], 1.0);
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape, &store);
        let (out, attn) = a.attend_one(&ctx, &te, 5, &lm).unwrap();
        assert!(attn.data().iter().all(|&w| (w - 1.0).abs() < 1e-15));
        // every row receives out_proj(value_proj(lm_proj(lm)))
        let l = tape
            .linear(&lm, &ctx.p(a.lm_proj.0), Some(&ctx.p(a.lm_proj.1)))
            .unwrap();
        let v = tape
            .linear(&l, &ctx.p(a.value_proj.0), Some(&ctx.p(a.value_proj.1)))
            .unwrap();
        let o = tape
            .linear(&v, &ctx.p(a.out_proj.0), Some(&ctx.p(a.out_proj.1)))
            .unwrap();
        for row in out.data().chunks(4) {
            for (x, y) in row.iter().zip(o.data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_length_preserved() {
        let (a, store) = small_attention(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, m) in [(1, 7), (6, 2), (9, 9)] {
            let te = random_tensor(&mut rng, &[n, 4], 1.0);
            let lm = random_tensor(&mut rng, &[m, 3], 1.0);
            let tape = Tape::no_grad();
            let (out, attn) = a.attend_one(&Ctx::eval(&tape, &store), &te, n, &lm).unwrap();
            assert_eq!(out.shape(), &[n, 4]);
            for row in attn.data().chunks(m) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn empty_lm_sequence_and_long_input_rejected() {
        let (a, store) = small_attention(3, 3);
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape, &store);
        let te = Tensor::<f64>::zeros(&[20, 4]);
        let lm = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(a.attend_one(&ctx, &te, 20, &lm), Err(Error::Config(_))));
        assert!(a
            .attend_one(&ctx, &Tensor::zeros(&[2, 4]), 2, &Tensor::zeros(&[2, 5]))
            .is_err());
        let t = FrozenEmbeddingTable::demo();
        assert!(t.embed::<f64>(&LmTokenSequence { ids: vec![] }).is_err());
        assert!(t.embed::<f64>(&LmTokenSequence { ids: vec![10_000] }).is_err());
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let (a, mut store) = small_attention(5, 3);
        a.zero_output(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let te = random_tensor(&mut rng, &[2, 5, 4], 1.0);
        let te = Tape::no_grad().apply_sequence_mask(&te, &[5, 3]).unwrap();
        let lms = vec![
            random_tensor(&mut rng, &[3, 3], 1.0),
            random_tensor(&mut rng, &[4, 3], 1.0),
        ];
        let tape = Tape::no_grad();
        let y = a.forward(&Ctx::eval(&tape, &store), &te, &[5, 3], &lms).unwrap();
        assert_eq!(y.data(), te.data());
    }

    #[test]
    fn table_embeddings_never_receive_gradients() {
        let (a, store) = small_attention(7, 32);
        let table = FrozenEmbeddingTable::demo();
        let seq = lm_tokenize("hello world", &table).unwrap();
        let lm = table.embed::<f64>(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let te = random_tensor(&mut rng, &[1, 6, 4], 1.0);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let y = a.forward(&ctx, &te, &[6], &[lm.clone()]).unwrap();
        let loss = project(&tape, &y, 1).unwrap();
        tape.backward(&loss).unwrap();
        assert!(!lm.requires_grad());
        assert!(tape.grad(&lm).is_none());
        let grads = ctx.param_grads();
        assert!(grads[a.lm_proj.0.index()].is_some());
    }

    #[test]
    fn attention_gradcheck() {
        for seed in 0..3 {
            let (a, store) = small_attention(20 + seed, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let te = random_tensor(&mut rng, &[2, 4, 4], 1.0);
            let lm0 = random_tensor(&mut rng, &[3, 3], 1.0);
            let lm1 = random_tensor(&mut rng, &[5, 3], 1.0);
            let ids: Vec<ParamId> = store.ids().collect();
            let res = check_with_params(&store, &ids, &[te], &mut rng, Probe::Sample(60), |ctx, v| {
                let y = a.forward(ctx, &v[0], &[4, 2], &[lm0.clone(), lm1.clone()])?;
                project(ctx.tape, &y, seed)
            })
            .unwrap();
            assert!(res.max_rel_err <= 1e-4, "{res:?}");
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        let (a, store) = small_attention(1, 3);
        let cfg = LmConfig {
            table: None,
            lm_dim: 3,
            max_positions: 16,
        };
        assert_eq!(LmAttention::count(a.dim, &cfg), store.num_scalars());
    }
}
