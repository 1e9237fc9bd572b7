//! Seed derivation and parameter-ball sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::ParamBall;
use crate::loss::LossModel;

pub type DetRng = ChaCha8Rng;

pub fn rng(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a tag into a seed (splitmix64 finalizer), giving independent sub-streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed2(seed: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(seed, a), b)
}

/// Uniform point in a Euclidean ball of the given dimension.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    for a in &mut v {
        *a *= r / n;
    }
    v
}

/// Uniform point on the boundary sphere.
pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for a in &mut v {
        *a *= radius / n;
    }
    v
}

/// Random parameter in the ball under the model's metric (a product of per-center balls for
/// clustering models). With `on_boundary`, every block sits on its sphere.
pub fn sample_param<R: Rng + ?Sized>(
    rng: &mut R,
    model: &LossModel,
    ball: &ParamBall,
    on_boundary: bool,
) -> Vec<f64> {
    let blocks = model.clusters().unwrap_or(1);
    let bd = ball.center.len() / blocks;
    let mut theta = ball.center.clone();
    for b in 0..blocks {
        let off = if on_boundary {
            uniform_on_sphere(rng, bd, ball.radius)
        } else {
            uniform_in_ball(rng, bd, ball.radius)
        };
        for (t, o) in theta[b * bd..(b + 1) * bd].iter_mut().zip(off) {
            *t += o;
        }
    }
    theta
}

/// A deterministic test set of `count` parameters in the ball: the center, then alternating
/// interior and boundary draws.
pub fn param_grid(model: &LossModel, ball: &ParamBall, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(derive_seed(seed, 0x6772_6964));
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(ball.center.clone());
    }
    while out.len() < count {
        let boundary = out.len() % 2 == 0;
        out.push(sample_param(&mut r, model, ball, boundary));
    }
    out
}
