//! Token embeddings, the GRU text encoder and the visual region encoder.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::SelfAttention;
use crate::error::{Error, Result};
use crate::numeric::params::{uniform, xavier_uniform};
use crate::numeric::{Graph, Gru, Matrix, ParamId, ParamStore, Var};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token to row mapping. Rows 0 and 1 are reserved for padding and unknown
/// tokens; lookups are case-insensitive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from(vec![PAD.to_string(), UNK.to_string()])
    }
}

impl Vocab {
    /// Vocabulary over every distinct lowercased token, in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<String> = tokens.into_iter().map(str::to_lowercase).collect();
        seen.sort_unstable();
        seen.dedup();
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(seen.into_iter().filter(|t| t != PAD && t != UNK));
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) => i,
            None => self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK_INDEX),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

/// Word vectors read from a whitespace-separated text file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pretrained {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl Pretrained {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = Pretrained::default();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let values = values.map_err(|e| parse_err(e.to_string()))?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("expected finite vector components".into()));
            }
            if out.dim == 0 {
                out.dim = values.len();
            } else if values.len() != out.dim {
                return Err(parse_err(format!("expected {} components, found {}", out.dim, values.len())));
            }
            out.vectors.insert(word.to_string(), values);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Embedding matrix `|V| x d_e` registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub weights: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows default to `uniform(-0.1, 0.1)`; padding and unknown rows start
    /// at zero. Words present in `pretrained` take its vectors.
    pub fn register(
        store: &mut ParamStore,
        vocab: Vocab,
        dim: usize,
        pretrained: Option<&Pretrained>,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut table = uniform(vocab.len(), dim, 0.1, rng);
        for c in 0..dim {
            table.set(PAD_INDEX, c, 0.0);
            table.set(UNK_INDEX, c, 0.0);
        }
        if let Some(p) = pretrained {
            if p.dim != dim && !p.vectors.is_empty() {
                return Err(Error::Config {
                    key: "embed_dim".into(),
                    message: format!("pretrained vectors have dimension {}, model uses {dim}", p.dim),
                });
            }
            for (i, tok) in vocab.tokens.iter().enumerate() {
                if let Some(v) = p.vectors.get(tok) {
                    for (c, &x) in v.iter().enumerate() {
                        table.set(i, c, x);
                    }
                }
            }
        }
        let weights = store.register_with("embedding.weight", table, trainable, true)?;
        Ok(Self { vocab, weights, dim })
    }

    /// Looks up each token. With `dropout = Some((p, rng))` each entry is
    /// zeroed with probability `p` and the rest scaled by `1/(1-p)`.
    pub fn embed<S: AsRef<str>, R: Rng>(
        &self,
        g: &mut Graph,
        tokens: &[S],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Domain("cannot embed an empty token list".into()));
        }
        let rows = self.vocab.encode(tokens);
        let e = g.gather(self.weights, &rows)?;
        match dropout {
            Some((p, rng)) if p > 0.0 => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config {
                        key: "dropout".into(),
                        message: format!("rate must lie in [0, 1), got {p}"),
                    });
                }
                let keep = 1.0 / (1.0 - p);
                let data = (0..rows.len() * self.dim)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.mul_const(e, Matrix::new(rows.len(), self.dim, data)?)
            }
            _ => Ok(e),
        }
    }
}

/// Per-token states `H_t` (`l x d_h`) and the final state `h_seq` (`1 x d_h`).
#[derive(Clone, Copy, Debug)]
pub struct TextEncoding {
    pub token_states: Var,
    pub sequence_state: Var,
}

pub fn encode_text(g: &mut Graph, gru: &Gru, embeddings: Var) -> Result<TextEncoding> {
    let (token_states, sequence_state) = gru.run(g, embeddings)?;
    Ok(TextEncoding {
        token_states,
        sequence_state,
    })
}

/// Affine map from detector features into the visual hidden size, shared by
/// both fields.
#[derive(Clone, Copy, Debug)]
pub struct VisualProjection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl VisualProjection {
    pub fn register(store: &mut ParamStore, input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: store.register("visual.input.weight", xavier_uniform(input_dim, output_dim, rng))?,
            bias: store.register("visual.input.bias", Matrix::zeros(1, output_dim))?,
            input_dim,
            output_dim,
        })
    }

    pub fn apply(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let x = g.matmul(features, w)?;
        g.add_row(x, b)
    }
}

/// Region states `H_v`: projection followed by mask-free self-attention.
pub fn encode_visual(
    g: &mut Graph,
    projection: &VisualProjection,
    attention: &SelfAttention,
    features: Var,
) -> Result<Var> {
    if g.shape(features).0 == 0 {
        return Err(Error::Validation("visual features have no regions".into()));
    }
    let h = projection.apply(g, features)?;
    attention.attend(g, h, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gru_cell, matmul, softmax_rows};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Rng8 = ChaCha8Rng;

    fn rand_matrix(r: usize, c: usize, rng: &mut Rng8) -> Matrix {
        uniform(r, c, 1.0, rng)
    }

    #[test]
    fn vocab_reserves_pad_and_unk() {
        let v = Vocab::build(["b", "A", "a"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.lookup("<pad>"), PAD_INDEX);
        assert_eq!(v.lookup("zzz"), UNK_INDEX);
        assert_eq!(v.lookup("A"), v.lookup("a"));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn unknown_tokens_share_the_zero_unk_row() {
        let mut store = ParamStore::new();
        let mut rng = Rng8::seed_from_u64(0);
        let t = EmbeddingTable::register(&mut store, Vocab::build(["x"]), 4, None, true, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let e = t.embed::<_, Rng8>(&mut g, &["q", "r", "s"], None).unwrap();
        assert_eq!(g.value(e), &Matrix::zeros(3, 4));
        assert!(t.embed::<&str, Rng8>(&mut g, &[], None).is_err());
    }

    #[test]
    fn zero_dropout_matches_eval() {
        let mut store = ParamStore::new();
        let mut rng = Rng8::seed_from_u64(1);
        let t = EmbeddingTable::register(&mut store, Vocab::build(["x", "y"]), 5, None, true, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let a = t.embed::<_, Rng8>(&mut g, &["x", "y"], None).unwrap();
        let b = t.embed(&mut g, &["x", "y"], Some((0.0, &mut rng))).unwrap();
        assert_eq!(g.value(a), g.value(b));
        let c = t.embed(&mut g, &["x", "y"], Some((0.5, &mut rng))).unwrap();
        for (&orig, &dropped) in g.value(a).data().iter().zip(g.value(c).data()) {
            assert!(dropped == 0.0 || dropped == 2.0 * orig);
        }
    }

    #[test]
    fn pretrained_vectors_read_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "pin 0.125 -1.5 3e-2\nsofa 1 2 3\n").unwrap();
        let p = Pretrained::load(&path).unwrap();
        let mut store = ParamStore::new();
        let mut rng = Rng8::seed_from_u64(2);
        let t = EmbeddingTable::register(&mut store, Vocab::build(["pin", "other"]), 3, Some(&p), false, &mut rng)
            .unwrap();
        let mut g = Graph::new(&store);
        let e = t.embed::<_, Rng8>(&mut g, &["pin"], None).unwrap();
        assert_eq!(g.value(e).data(), &[0.125, -1.5, 0.03]);
        assert!(!store.get(t.weights).trainable);

        std::fs::write(&path, "pin 1 2\nsofa 1\n").unwrap();
        assert!(matches!(Pretrained::load(&path), Err(Error::Parse { line: 2, .. })));
    }

    fn text_setup(seed: u64) -> (ParamStore, Gru) {
        let mut store = ParamStore::new();
        let mut rng = Rng8::seed_from_u64(seed);
        let gru = Gru::register(&mut store, "gru", 4, 3, &mut rng).unwrap();
        (store, gru)
    }

    #[test]
    fn text_encoding_matches_cell_loop_and_is_causal() {
        let (store, gru) = text_setup(3);
        let mut rng = Rng8::seed_from_u64(30);
        let x = rand_matrix(6, 4, &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let enc = encode_text(&mut g, &gru, xv).unwrap();

        let mut h = vec![0.0; 3];
        for t in 0..6 {
            h = gru_cell(&store, &gru, x.row(t), &h).unwrap();
            for (a, b) in g.value(enc.token_states).row(t).iter().zip(&h) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert_eq!(g.value(enc.sequence_state).row(0), g.value(enc.token_states).row(5));

        let prefix = Matrix::new(3, 4, x.data()[..12].to_vec()).unwrap();
        let pv = g.constant(prefix);
        let p = encode_text(&mut g, &gru, pv).unwrap();
        assert_eq!(g.value(p.token_states).data(), &g.value(enc.token_states).data()[..9]);
    }

    fn visual_setup(seed: u64) -> (ParamStore, VisualProjection, SelfAttention) {
        let mut store = ParamStore::new();
        let mut rng = Rng8::seed_from_u64(seed);
        let proj = VisualProjection::register(&mut store, 5, 4, &mut rng).unwrap();
        let attn = SelfAttention::register(&mut store, "visual.review", 4, false, &mut rng).unwrap();
        (store, proj, attn)
    }

    #[test]
    fn visual_single_region_adds_its_value_projection() {
        let (store, proj, attn) = visual_setup(4);
        let mut rng = Rng8::seed_from_u64(40);
        let f = rand_matrix(1, 5, &mut rng);
        let mut g = Graph::new(&store);
        let fv = g.constant(f.clone());
        let out = encode_visual(&mut g, &proj, &attn, fv).unwrap();
        let h = proj_value(&store, &proj, &f);
        let v = matmul(&h, store.value(attn.w_v.unwrap())).unwrap();
        assert_eq!(g.shape(out), (1, 4));
        for ((o, a), b) in g.value(out).data().iter().zip(h.data()).zip(v.data()) {
            assert!((o - (a + b)).abs() < 1e-12);
        }
    }

    fn proj_value(store: &ParamStore, proj: &VisualProjection, f: &Matrix) -> Matrix {
        let mut h = matmul(f, store.value(proj.weight)).unwrap();
        for r in 0..h.rows() {
            for c in 0..h.cols() {
                h.set(r, c, h.get(r, c) + store.value(proj.bias).get(0, c));
            }
        }
        h
    }

    #[test]
    fn visual_encoding_matches_dense_formula_and_permutes() {
        let (store, proj, attn) = visual_setup(5);
        let mut rng = Rng8::seed_from_u64(50);
        let f = rand_matrix(4, 5, &mut rng);
        let mut g = Graph::new(&store);
        let fv = g.constant(f.clone());
        let out = encode_visual(&mut g, &proj, &attn, fv).unwrap();
        let out = g.value(out).clone();

        let h = proj_value(&store, &proj, &f);
        let scores = matmul(&matmul(&h, store.value(attn.w_a)).unwrap(), &h.transpose())
            .unwrap()
            .map(|x| x / 2.0);
        let a = softmax_rows(&scores).unwrap();
        let v = matmul(&h, store.value(attn.w_v.unwrap())).unwrap();
        let av = matmul(&a, &v).unwrap();
        for i in 0..out.len() {
            assert!((out.data()[i] - (h.data()[i] + av.data()[i])).abs() < 1e-12);
        }

        let perm = [2usize, 0, 3, 1];
        let fp = Matrix::from_rows(&perm.iter().map(|&i| f.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let fpv = g.constant(fp);
        let outp = encode_visual(&mut g, &proj, &attn, fpv).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in g.value(outp).row(k).iter().zip(out.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
