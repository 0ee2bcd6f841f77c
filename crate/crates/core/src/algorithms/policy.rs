//! Linear-softmax token policy over hashed context features.
//!
//! The conditional distribution of the next token is
//! `softmax(Wᵀφ(ctx) / T)` restricted to the tokens the action grammar allows
//! at that position. `φ` is a sparse binary vector of hashed context
//! features: a bias, the token found at each of the last few offsets, a set of
//! suffix n-grams, and optionally a hash of the whole context.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::vocab::fnv1a;
use crate::domain::{ActionGrammar, Next, PolicyId, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of hashed feature slots (rows of the weight matrix).
    pub dim: usize,
    /// Emit `(offset, token)` features for offsets `1..=offsets`.
    pub offsets: usize,
    /// Suffix n-gram lengths.
    pub ngrams: Vec<usize>,
    /// Emit one feature hashing the entire context.
    pub full_context: bool,
    /// Emit a constant feature.
    pub bias: bool,
}

/// The default is a single 4-gram feature per position: enough to see the
/// previous call's argument together with its observation word.
impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: 4096,
            offsets: 0,
            ngrams: vec![4],
            full_context: false,
            bias: false,
        }
    }
}

/// Sparse feature vector: `(row, value)` pairs. Rows may repeat when two
/// features hash to the same slot; values then add up.
pub type Features = Vec<(u32, f64)>;

fn mix(mut h: u64) -> u64 {
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn hash_tokens(tag: u64, tokens: &[TokenId]) -> u64 {
    let mut bytes = Vec::with_capacity(8 + tokens.len() * 4);
    bytes.extend_from_slice(&tag.to_le_bytes());
    for t in tokens {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    mix(fnv1a(&bytes))
}

impl FeatureConfig {
    pub fn small(dim: usize) -> Self {
        FeatureConfig {
            dim,
            offsets: 2,
            ngrams: vec![2],
            full_context: false,
            bias: true,
        }
    }

    pub fn extract(&self, ctx: &[TokenId]) -> Features {
        let dim = self.dim as u64;
        let mut out = Vec::with_capacity(2 + self.offsets + self.ngrams.len());
        if self.bias {
            out.push(((mix(0x5eed) % dim) as u32, 1.0));
        }
        for j in 1..=self.offsets.min(ctx.len()) {
            let tok = ctx[ctx.len() - j];
            out.push(((hash_tokens(1 << 32 | j as u64, &[tok]) % dim) as u32, 1.0));
        }
        for &n in &self.ngrams {
            if n > 0 && n <= ctx.len() {
                let h = hash_tokens(2 << 32 | n as u64, &ctx[ctx.len() - n..]);
                out.push(((h % dim) as u32, 1.0));
            }
        }
        if self.full_context {
            out.push(((hash_tokens(3 << 32, ctx) % dim) as u32, 1.0));
        }
        out
    }
}

/// Log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    features: FeatureConfig,
    vocab_size: usize,
    weights: Vec<f64>,
    lineage: u32,
    version: u64,
}

impl LinearSoftmaxPolicy {
    pub fn zeros(features: FeatureConfig, vocab_size: usize) -> Self {
        let n = features.dim * vocab_size;
        LinearSoftmaxPolicy {
            features,
            vocab_size,
            weights: vec![0.0; n],
            lineage: 0,
            version: 0,
        }
    }

    pub fn with_lineage(mut self, lineage: u32) -> Self {
        self.lineage = lineage;
        self
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn lineage(&self) -> u32 {
        self.lineage
    }

    pub fn id(&self) -> PolicyId {
        PolicyId::new(self.lineage, self.version)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, token: TokenId) -> f64 {
        self.weights[row * self.vocab_size + token as usize]
    }

    pub fn set_weight(&mut self, row: usize, token: TokenId, value: f64) {
        self.weights[row * self.vocab_size + token as usize] = value;
    }

    pub fn add_weight(&mut self, row: usize, token: TokenId, delta: f64) {
        self.weights[row * self.vocab_size + token as usize] += delta;
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Gradient ascent: `W += lr · grad`, then bump the version.
    pub fn ascend(&mut self, grad: &[f64], lr: f64) {
        assert_eq!(grad.len(), self.weights.len(), "gradient shape");
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w += lr * g;
        }
        self.version += 1;
    }

    pub fn features(&self, ctx: &[TokenId]) -> Features {
        self.features.extract(ctx)
    }

    /// Raw logits `Wᵀφ` for the `allowed` tokens.
    pub fn logits(&self, feats: &Features, allowed: &[TokenId]) -> Vec<f64> {
        let mut z = vec![0.0; allowed.len()];
        for &(row, value) in feats {
            let base = row as usize * self.vocab_size;
            let w = &self.weights[base..base + self.vocab_size];
            for (zi, &tok) in z.iter_mut().zip(allowed) {
                *zi += value * w[tok as usize];
            }
        }
        z
    }

    /// Log-probabilities over `allowed` at `temperature` (> 0).
    pub fn log_probs(&self, feats: &Features, allowed: &[TokenId], temperature: f64) -> Vec<f64> {
        log_softmax(&self.logits(feats, allowed), temperature)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub truncated: bool,
}

fn greedy_index(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, z) in logits.iter().enumerate() {
        if *z > logits[best] {
            best = i;
        }
    }
    best
}

/// Samples one action token by token. `temperature == 0` decodes greedily
/// (ties to the lowest token id) and records log-probability 0.
pub fn sample_action<R: Rng + ?Sized>(
    policy: &LinearSoftmaxPolicy,
    ctx: &[TokenId],
    grammar: &ActionGrammar,
    temperature: f64,
    rng: &mut R,
) -> SampledAction {
    let mut work = ctx.to_vec();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    loop {
        let allowed = match grammar.next(&tokens) {
            Next::Allowed(a) => a,
            Next::Done => break,
            Next::Truncated => {
                return SampledAction {
                    tokens,
                    logprobs,
                    truncated: true,
                }
            }
        };
        let feats = policy.features(&work);
        let (idx, lp) = if temperature <= 0.0 {
            (greedy_index(&policy.logits(&feats, allowed)), 0.0)
        } else {
            let lps = policy.log_probs(&feats, allowed, temperature);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = lps.len() - 1;
            for (i, lp) in lps.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            (pick, lps[pick])
        };
        let tok = allowed[idx];
        tokens.push(tok);
        logprobs.push(lp);
        work.push(tok);
    }
    SampledAction {
        tokens,
        logprobs,
        truncated: false,
    }
}

/// Log-probability of `tokens` as an action from `ctx`: the sum of per-token
/// conditional log-probabilities, returned together with the per-token terms.
/// Tokens outside the grammar's allowed set score `-inf`.
pub fn action_logprob(
    policy: &LinearSoftmaxPolicy,
    ctx: &[TokenId],
    tokens: &[TokenId],
    grammar: &ActionGrammar,
    temperature: f64,
) -> (f64, Vec<f64>) {
    let mut work = ctx.to_vec();
    let mut per_token = Vec::with_capacity(tokens.len());
    for (k, &tok) in tokens.iter().enumerate() {
        let allowed = grammar.allowed_at(tokens, k);
        let lp = match allowed.iter().position(|&a| a == tok) {
            Some(i) => {
                let feats = policy.features(&work);
                if temperature <= 0.0 {
                    let logits = policy.logits(&feats, allowed);
                    if greedy_index(&logits) == i {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    policy.log_probs(&feats, allowed, temperature)[i]
                }
            }
            None => f64::NEG_INFINITY,
        };
        per_token.push(lp);
        work.push(tok);
    }
    (per_token.iter().sum(), per_token)
}

/// On-disk snapshot: only non-zero weights are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub format: String,
    pub vocab_version: u32,
    pub vocab_size: usize,
    pub features: FeatureConfig,
    pub lineage: u32,
    pub version: u64,
    pub nonzero: Vec<(u32, u32, f64)>,
}

pub const SNAPSHOT_FORMAT: &str = "agentrl-linear-softmax/1";

impl From<&LinearSoftmaxPolicy> for PolicySnapshot {
    fn from(p: &LinearSoftmaxPolicy) -> Self {
        let nonzero = p
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| ((i / p.vocab_size) as u32, (i % p.vocab_size) as u32, *w))
            .collect();
        PolicySnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            vocab_version: crate::domain::vocab::VOCAB_VERSION,
            vocab_size: p.vocab_size,
            features: p.features.clone(),
            lineage: p.lineage,
            version: p.version,
            nonzero,
        }
    }
}

impl TryFrom<PolicySnapshot> for LinearSoftmaxPolicy {
    type Error = String;

    fn try_from(s: PolicySnapshot) -> Result<Self, Self::Error> {
        if s.format != SNAPSHOT_FORMAT {
            return Err(format!("unsupported snapshot format {:?}", s.format));
        }
        if s.features.dim == 0 || s.vocab_size == 0 {
            return Err("empty weight matrix".into());
        }
        let mut p = LinearSoftmaxPolicy::zeros(s.features, s.vocab_size)
            .with_lineage(s.lineage)
            .with_version(s.version);
        for (row, col, w) in s.nonzero {
            if row as usize >= p.features.dim || col as usize >= p.vocab_size {
                return Err(format!("weight index ({row}, {col}) out of range"));
            }
            if !w.is_finite() {
                return Err(format!("non-finite weight at ({row}, {col})"));
            }
            p.set_weight(row as usize, col, w);
        }
        Ok(p)
    }
}

impl LinearSoftmaxPolicy {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolicySnapshot::from(self)).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let snap: PolicySnapshot = serde_json::from_str(text).map_err(|e| e.to_string())?;
        LinearSoftmaxPolicy::try_from(snap)
    }
}
