use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::GenError;
use crate::backbone::{BackboneConfig, Model};
use crate::corpus::{TokenId, BOS, EOS};
use crate::mixture::{inference_step, DecodeState};
use crate::numerics::Real;

/// Slack on the cumulative-mass comparison so that sums like 0.6 + 0.3 reach 0.9.
const MASS_TOLERANCE: f64 = 1e-9;

/// The nucleus of `dist`: tokens by descending probability (ties by ascending
/// id) up to the first prefix whose mass reaches `p`, with their
/// renormalized probabilities. Negative and non-finite entries count as zero.
pub fn nucleus_set<S: Real>(dist: &[S], p: f64) -> Result<Vec<(TokenId, f64)>, GenError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GenError::InvalidP(p));
    }
    let mass = |x: S| {
        let x = x.as_f64();
        if x.is_finite() && x > 0.0 {
            x
        } else {
            0.0
        }
    };
    let total: f64 = dist.iter().map(|&x| mass(x)).sum();
    if total <= 0.0 {
        return Err(GenError::DegenerateDistribution);
    }
    let mut order: Vec<usize> = (0..dist.len()).filter(|&i| mass(dist[i]) > 0.0).collect();
    order.sort_by(|&a, &b| mass(dist[b]).total_cmp(&mass(dist[a])).then(a.cmp(&b)));
    let target = p * total - MASS_TOLERANCE;
    let mut cum = 0.0;
    let mut set = Vec::new();
    for i in order {
        cum += mass(dist[i]);
        set.push((i as TokenId, mass(dist[i])));
        if cum >= target {
            break;
        }
    }
    Ok(set.into_iter().map(|(i, m)| (i, m / cum)).collect())
}

/// Draws one token from the nucleus of `dist`.
pub fn nucleus_sample<S: Real, R: Rng + ?Sized>(
    dist: &[S],
    p: f64,
    rng: &mut R,
) -> Result<TokenId, GenError> {
    let set = nucleus_set(dist, p)?;
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for &(id, q) in &set {
        cum += q;
        if u < cum {
            return Ok(id);
        }
    }
    Ok(set.last().expect("nucleus is non-empty").0)
}

/// Independent generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Continues `prompt` by nucleus sampling until EOS or `max_len` new tokens.
///
/// Returns the prompt followed by the generated tokens; an emitted EOS is
/// kept as the final token.
pub fn generate<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    prompt: &[TokenId],
    p: f64,
    max_len: usize,
    window: usize,
    rng: &mut R,
) -> Result<Vec<TokenId>, GenError> {
    if max_len < 1 {
        return Err(GenError::InvalidMaxLen);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(GenError::InvalidP(p));
    }
    let capacity = match &model.config().backbone {
        BackboneConfig::Transformer(c) => c.max_positions,
        BackboneConfig::Recurrent(_) => usize::MAX,
    };
    let mut state = DecodeState::new(model, window);
    let mut out = prompt.to_vec();
    let mut step = inference_step(model, &mut state, BOS)?;
    for &id in prompt {
        step = inference_step(model, &mut state, id)?;
    }
    for _ in 0..max_len {
        let next = nucleus_sample(&step.probs, p, rng)?;
        out.push(next);
        if next == EOS || state.prefix().len() >= capacity {
            break;
        }
        step = inference_step(model, &mut state, next)?;
    }
    Ok(out)
}

/// `n` samples generated concurrently, sample `i` using [`sample_rng`]`(seed, i)`.
pub fn generate_many<S: Real>(
    model: &Model<S>,
    prompt: &[TokenId],
    p: f64,
    max_len: usize,
    window: usize,
    seed: u64,
    n: usize,
) -> Result<Vec<Vec<TokenId>>, GenError> {
    (0..n)
        .into_par_iter()
        .map(|i| generate(model, prompt, p, max_len, window, &mut sample_rng(seed, i as u64)))
        .collect()
}
