//! Alignment layer: projects classifier output into a `tau x h` word embedding.
//!
//! `l1` and `l2` are copies of the trained classifier; `l3` is a bias-free
//! `classes x (tau * h)` matrix whose row `k` starts out as the flattened
//! embedding of the description of class `k`. Reshapes are row-major on
//! both sides, so a one-hot `P = e_k` reproduces that embedding exactly.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fcn::{FaultLabel, FcnModel};
use crate::nn::{checkpoint, ops, Linear, Param, Parameterized, Tensor};
use crate::{Error, Result};

/// Tokenizer plus frozen embedding table.
pub trait EmbeddingProvider {
    fn tokenize(&self, text: &str) -> Vec<usize>;
    /// `tokens.len() x hidden` embeddings, row-major.
    fn embed(&self, tokens: &[usize]) -> Vec<f64>;
    fn hidden(&self) -> usize;
    fn pad_id(&self) -> usize;
}

/// Lower-cased whitespace tokenizer over a fixed vocabulary. Id 0 is padding,
/// id 1 stands for any word outside the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProvider {
    vocab: HashMap<String, usize>,
    table: Vec<f64>,
    hidden: usize,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

impl ToyProvider {
    pub fn new(hidden: usize, vocab: &[&str], seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("embedding width must be at least 1".into()));
        }
        let mut map = HashMap::new();
        for w in vocab {
            let w = w.to_lowercase();
            let next = map.len() + 2;
            map.entry(w).or_insert(next);
        }
        let rows = map.len() + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..rows * hidden)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Self {
            vocab: map,
            table,
            hidden,
        })
    }

    /// Vocabulary covering every word of the default fault descriptions.
    pub fn for_descriptions(hidden: usize, descriptions: &FaultDescriptionSet, seed: u64) -> Result<Self> {
        let mut words: Vec<&str> = Vec::new();
        for t in descriptions.texts() {
            for w in t.split_whitespace() {
                if !words.contains(&w) {
                    words.push(w);
                }
            }
        }
        Self::new(hidden, &words, seed)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 2
    }
}

impl EmbeddingProvider for ToyProvider {
    fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| *self.vocab.get(&w.to_lowercase()).unwrap_or(&UNK_ID))
            .collect()
    }

    fn embed(&self, tokens: &[usize]) -> Vec<f64> {
        let h = self.hidden;
        tokens
            .iter()
            .flat_map(|&t| {
                let t = if t < self.vocab_size() { t } else { UNK_ID };
                self.table[t * h..(t + 1) * h].iter().copied()
            })
            .collect()
    }

    fn hidden(&self) -> usize {
        self.hidden
    }

    fn pad_id(&self) -> usize {
        PAD_ID
    }
}

/// One description per class, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultDescriptionSet {
    texts: Vec<String>,
}

impl FaultDescriptionSet {
    pub fn new(texts: Vec<String>) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Config("no fault descriptions".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Config(format!("fault description {i} is empty")));
        }
        Ok(Self { texts })
    }

    /// The descriptions of [`FaultLabel`], one per class.
    pub fn standard() -> Self {
        Self {
            texts: FaultLabel::all().map(|l| l.to_string()).collect(),
        }
    }

    /// One description per line; a single trailing newline is allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::new(body.split('\n').map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Token ids padded or truncated to exactly `tau`.
pub fn fit_tokens(tokens: &[usize], tau: usize, pad: usize) -> Vec<usize> {
    let mut t: Vec<usize> = tokens.iter().take(tau).copied().collect();
    t.resize(tau, pad);
    t
}

/// `classes x (tau * h)` matrix whose row `k` is the flattened embedding of description `k`.
pub fn init_l3(
    descriptions: &FaultDescriptionSet,
    provider: &dyn EmbeddingProvider,
    tau: usize,
) -> Result<Tensor> {
    if tau == 0 {
        return Err(Error::Config("token length must be at least 1".into()));
    }
    let h = provider.hidden();
    let mut data = Vec::with_capacity(descriptions.len() * tau * h);
    for (k, text) in descriptions.texts().iter().enumerate() {
        let tokens = provider.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Config(format!("description {k} has no tokens")));
        }
        data.extend(provider.embed(&fit_tokens(&tokens, tau, provider.pad_id())));
    }
    Tensor::new(&[descriptions.len(), tau * h], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLayer {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Param,
    pub tau: usize,
    pub hidden: usize,
}

impl AlignmentLayer {
    pub fn classes(&self) -> usize {
        self.l3.value.dim(0)
    }

    /// Classifier output `P = l2(relu(l1(features)))`, shape `(B, classes)`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        self.l2.forward(&ops::relu(&self.l1.forward(features)?))
    }

    /// `H_V` for each row of `p`: shape `(B, tau, h)`.
    pub fn align_from_logits(&self, p: &Tensor) -> Result<Tensor> {
        let g = self.classes();
        p.expect_rank(2, "alignment input")?;
        if p.dim(1) != g {
            return Err(Error::Shape(format!(
                "alignment expects {g} class scores, got {}",
                p.dim(1)
            )));
        }
        let width = self.tau * self.hidden;
        let w = self.l3.value.data();
        let mut out = vec![0.0; p.dim(0) * width];
        for (row, pr) in out.chunks_exact_mut(width).zip(p.data().chunks_exact(g)) {
            for (k, &pk) in pr.iter().enumerate() {
                let wr = &w[k * width..(k + 1) * width];
                if k == 0 {
                    row.iter_mut().zip(wr).for_each(|(o, &v)| *o = pk * v);
                } else {
                    row.iter_mut().zip(wr).for_each(|(o, &v)| *o += pk * v);
                }
            }
        }
        Tensor::new(&[p.dim(0), self.tau, self.hidden], out)
    }

    /// Full path from pooled encoder features.
    pub fn align(&self, features: &Tensor) -> Result<Tensor> {
        self.align_from_logits(&self.logits(features)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut t = checkpoint::collect(self);
        t.push(("config.tau".into(), Tensor::new(&[1], vec![self.tau as f64])?));
        t.push(("config.hidden".into(), Tensor::new(&[1], vec![self.hidden as f64])?));
        checkpoint::save(path, &t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t = checkpoint::load(path)?;
        let find = |n: &str| {
            t.iter()
                .find(|(k, _)| k == n)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Persistence(format!("alignment file lacks {n}")))
        };
        let scalar = |n: &str| -> Result<usize> { Ok(find(n)?.data()[0] as usize) };
        let (tau, hidden) = (scalar("config.tau")?, scalar("config.hidden")?);
        let l1w = find("l1.weight")?;
        let l2w = find("l2.weight")?;
        let l3 = find("l3.weight")?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Self {
            l1: Linear::new("l1", l1w.dim(1), l1w.dim(0), true, &mut rng),
            l2: Linear::new("l2", l2w.dim(1), l2w.dim(0), true, &mut rng),
            l3: Param::new("l3.weight", Tensor::zeros(l3.shape()), true),
            tau,
            hidden,
        };
        checkpoint::restore(&mut layer, &t)?;
        if layer.l3.value.dim(1) != tau * hidden {
            return Err(Error::Shape("l3 width does not match tau * hidden".into()));
        }
        Ok(layer)
    }
}

impl Parameterized for AlignmentLayer {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.l1.visit(f);
        self.l2.visit(f);
        f(&self.l3);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
        f(&mut self.l3);
    }
}

/// Copies the classifier of `fcn` and initializes `l3` from the descriptions.
pub fn build_alignment(
    fcn: &FcnModel,
    descriptions: &FaultDescriptionSet,
    provider: &dyn EmbeddingProvider,
    tau: usize,
) -> Result<AlignmentLayer> {
    let g = fcn.config.classes;
    if descriptions.len() != g {
        return Err(Error::Config(format!(
            "{} fault descriptions for a classifier with {g} classes",
            descriptions.len()
        )));
    }
    Ok(AlignmentLayer {
        l1: fcn.l1.clone(),
        l2: fcn.l2.clone(),
        l3: Param::new("l3.weight", init_l3(descriptions, provider, tau)?, true),
        tau,
        hidden: provider.hidden(),
    })
}

/// Feeds every one-hot `e_k` through `l3` and compares with the description
/// embeddings bit for bit. Returns the classes that failed.
pub fn one_hot_mismatches(
    layer: &AlignmentLayer,
    descriptions: &FaultDescriptionSet,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<usize>> {
    let g = layer.classes();
    let mut eye = vec![0.0; g * g];
    (0..g).for_each(|k| eye[k * g + k] = 1.0);
    let hv = layer.align_from_logits(&Tensor::new(&[g, g], eye)?)?;
    let width = layer.tau * layer.hidden;
    let mut bad = Vec::new();
    for (k, text) in descriptions.texts().iter().enumerate() {
        let tokens = fit_tokens(&provider.tokenize(text), layer.tau, provider.pad_id());
        let expected = provider.embed(&tokens);
        let got = &hv.data()[k * width..(k + 1) * width];
        if got.iter().zip(&expected).any(|(a, b)| a.to_bits() != b.to_bits()) {
            bad.push(k);
        }
    }
    Ok(bad)
}

/// Default number of tokens per description embedding.
pub const DEFAULT_TAU: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::FcnConfig;

    fn descs(v: &[&str]) -> FaultDescriptionSet {
        FaultDescriptionSet::new(v.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn toy_provider_basics() {
        let p = ToyProvider::new(4, &["outer", "ring", "fault"], 1).unwrap();
        assert_eq!(p.tokenize("outer ring fault"), vec![2, 3, 4]);
        assert_eq!(p.tokenize("Outer gear"), vec![2, UNK_ID]);
        assert_eq!(p.embed(&[UNK_ID]), p.embed(&p.tokenize("gear")));
        assert_eq!(p.embed(&[2, 3]).len(), 8);
        assert_eq!(p, ToyProvider::new(4, &["outer", "ring", "fault"], 1).unwrap());
        assert_ne!(p, ToyProvider::new(4, &["outer", "ring", "fault"], 2).unwrap());
        assert!(ToyProvider::new(0, &[], 0).is_err());
    }

    #[test]
    fn l3_shape_truncation_and_padding() {
        let p = ToyProvider::new(3, &["a", "b", "c", "d", "e"], 0).unwrap();
        let w = init_l3(&descs(&["a b", "c"]), &p, 2).unwrap();
        assert_eq!(w.shape(), &[2, 6]);

        let w = init_l3(&descs(&["a b c d e"]), &p, 3).unwrap();
        assert_eq!(w.data(), p.embed(&[2, 3, 4]).as_slice());

        let w = init_l3(&descs(&["c"]), &p, 3).unwrap();
        assert_eq!(&w.data()[3..6], p.embed(&[PAD_ID]).as_slice());
        assert_eq!(&w.data()[6..9], p.embed(&[PAD_ID]).as_slice());
        assert!(init_l3(&descs(&["c"]), &p, 0).is_err());
    }

    #[test]
    fn description_file_parsing() {
        let d = FaultDescriptionSet::parse("one\ntwo\n").unwrap();
        assert_eq!(d.len(), 2);
        assert!(FaultDescriptionSet::parse("one\n\nthree\n").is_err());
        assert_eq!(FaultDescriptionSet::standard().len(), crate::NUM_CLASSES);
    }

    fn layer() -> (FcnModel, AlignmentLayer, ToyProvider, FaultDescriptionSet) {
        let mut cfg = FcnConfig::compact(1_000);
        cfg.in_channels = 1;
        let fcn = FcnModel::new(cfg, 3).unwrap();
        let d = FaultDescriptionSet::standard();
        let p = ToyProvider::for_descriptions(5, &d, 4).unwrap();
        let a = build_alignment(&fcn, &d, &p, 4).unwrap();
        (fcn, a, p, d)
    }

    #[test]
    fn one_hot_selects_description_embedding() {
        let (_, a, p, d) = layer();
        assert!(one_hot_mismatches(&a, &d, &p).unwrap().is_empty());
        let zero = a.align_from_logits(&Tensor::zeros(&[1, 10])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_matrix_product_and_is_linear() {
        use rand::Rng;
        let (_, a, _, _) = layer();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p1: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p2: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h1 = a.align_from_logits(&Tensor::new(&[1, 10], p1.clone()).unwrap()).unwrap();
        let w = a.l3.value.data();
        for j in 0..20 {
            let oracle: f64 = (0..10).map(|k| p1[k] * w[k * 20 + j]).sum();
            assert!((h1.data()[j] - oracle).abs() < 1e-12);
        }
        let h2 = a.align_from_logits(&Tensor::new(&[1, 10], p2.clone()).unwrap()).unwrap();
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let hm = a.align_from_logits(&Tensor::new(&[1, 10], mix).unwrap()).unwrap();
        for j in 0..20 {
            let lin = 2.0 * h1.data()[j] - 0.5 * h2.data()[j];
            assert!((hm.data()[j] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn copies_are_independent_and_agree() {
        let (fcn, mut a, _, _) = layer();
        let x = Tensor::filled(&[2, 1, 1_000], 0.01);
        let feats = fcn.encode(&x).unwrap();
        assert_eq!(a.logits(&feats).unwrap(), fcn.head(&feats).unwrap());
        a.l1.weight.value.data_mut()[0] += 1.0;
        assert_ne!(a.l1.weight.value, fcn.l1.weight.value);
    }

    #[test]
    fn class_count_mismatch() {
        let (fcn, _, p, d) = layer();
        let nine = FaultDescriptionSet::new(d.texts()[..9].to_vec()).unwrap();
        assert!(matches!(build_alignment(&fcn, &nine, &p, 4), Err(Error::Config(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let (_, a, _, _) = layer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("align.bdxw");
        a.save(&path).unwrap();
        assert_eq!(AlignmentLayer::load(&path).unwrap(), a);
    }
}
