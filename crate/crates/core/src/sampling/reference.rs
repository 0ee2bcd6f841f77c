//! Hand-built policies with known behavior: an optimal bisection player and
//! KVStore specialists that can each repair only some slots.

use std::sync::Arc;

use crate::algorithms::{FeatureConfig, LinearSoftmaxPolicy};
use crate::domain::{serialize_action, TokenId, ToolCall, Vocabulary, BOS, OBS};
use crate::envs::bisect::{BisectEnv, BisectGuess, RANGE};
use crate::envs::kvstore::{SLOTS, VALUES};
use crate::envs::{Environment, TaskFactory};

/// Logit margin used for every taught decision.
pub const MARGIN: f64 = 40.0;

/// Adds `strength` to the logit of `token` at every feature active in `ctx`.
pub fn teach(policy: &mut LinearSoftmaxPolicy, ctx: &[TokenId], token: TokenId, strength: f64) {
    for (row, value) in policy.features(ctx) {
        policy.add_weight(row as usize, token, strength * value);
    }
}

/// Interval bisection over `[0, RANGE)`: query the upper midpoint, answer as
/// soon as the interval is a single value or the query hits. Wins every
/// sample in at most 4 queries plus the answer.
pub fn bisect_optimal() -> LinearSoftmaxPolicy {
    let vocab = Vocabulary::standard();
    let features = FeatureConfig {
        dim: 1 << 16,
        ..FeatureConfig::default()
    };
    let mut policy = LinearSoftmaxPolicy::zeros(features, vocab.len()).with_lineage(0xb15e);
    let spec = BisectGuess::new().spec().clone();
    for hidden in 0..RANGE {
        let mut env = BisectEnv::with_hidden(hidden);
        let mut ctx = vec![BOS];
        ctx.extend(vocab.tokenize(&env.initial_observation()));
        let (mut lo, mut hi) = (0, RANGE - 1);
        loop {
            let call = if lo == hi {
                ToolCall::new("answer").arg("x", lo)
            } else {
                ToolCall::new("query").arg("x", (lo + hi + 1) / 2)
            };
            let schema = spec.schema(&call.name).expect("bisect tool");
            let tokens = serialize_action(&call, schema, vocab).expect("valid call");
            for (i, &t) in tokens.iter().enumerate() {
                let mut c = ctx.clone();
                c.extend_from_slice(&tokens[..i]);
                teach(&mut policy, &c, t, MARGIN);
            }
            let out = env.apply(&call);
            ctx.extend_from_slice(&tokens);
            ctx.push(OBS);
            ctx.extend(vocab.tokenize(&out.observation));
            if out.done {
                break;
            }
            let m = (lo + hi + 1) / 2;
            match out.observation.as_str() {
                "higher" => lo = m + 1,
                "lower" => hi = m - 1,
                _ => (lo, hi) = (m, m),
            }
        }
    }
    policy
}

/// Feature layout of the KVStore specialists: the tokens at offsets 1 to 3.
pub fn specialist_features() -> FeatureConfig {
    FeatureConfig {
        dim: 1 << 12,
        offsets: 3,
        ngrams: Vec::new(),
        full_context: false,
        bias: false,
    }
}

fn offset_row(cfg: &FeatureConfig, offset: usize, token: TokenId) -> usize {
    let mut ctx = vec![BOS; offset];
    ctx[0] = token;
    cfg.extract(&ctx)[offset - 1].0 as usize
}

/// A KVStore player that repairs only the slots in `own`. When the first
/// mismatched slot is someone else's it reads that slot instead, which
/// changes nothing; when every slot matches it commits.
pub fn kv_specialist(own: &[usize], lineage: u32) -> LinearSoftmaxPolicy {
    let vocab = Vocabulary::standard();
    let cfg = specialist_features();
    let mut p = LinearSoftmaxPolicy::zeros(cfg.clone(), vocab.len()).with_lineage(lineage);
    let tool = |n: &str| vocab.tool(n).expect("kv tool");
    let word = |w: &str| vocab.word(w).expect("kv word");
    // status "all slots match" ends the observation
    p.add_weight(offset_row(&cfg, 1, word("match")), tool("commit"), MARGIN);
    // status "need k v": k sits two tokens back
    for k in 0..SLOTS {
        let row = offset_row(&cfg, 2, vocab.int(k as i64).expect("int"));
        let pick = if own.contains(&k) { "put" } else { "get" };
        p.add_weight(row, tool(pick), MARGIN);
    }
    // every argument copies the token three back: k after "need k v <tool>",
    // v after "k v put k"
    for x in 0..VALUES {
        let t = vocab.int(x).expect("int");
        p.add_weight(offset_row(&cfg, 3, t), t, MARGIN);
    }
    p
}

/// The two complementary specialists: A owns slots 0 and 1, B owns 2 and 3.
pub fn kv_specialist_pair() -> (Arc<LinearSoftmaxPolicy>, Arc<LinearSoftmaxPolicy>) {
    (
        Arc::new(kv_specialist(&[0, 1], 0xa)),
        Arc::new(kv_specialist(&[2, 3], 0xb)),
    )
}
