//! Random finite laws for the lemma suites.

use mclt_core::bounds::JointLaw;
use mclt_core::kernel::{Atom, DiscreteLaw};
use mclt_core::ReplicateRng;

/// Centred law on `k ∈ [2, max_support]` atoms with values in `[-2, 2]`.
pub fn random_centred_law(rng: &mut ReplicateRng, max_support: usize) -> DiscreteLaw {
    loop {
        let k = 2 + (rng.uniform() * (max_support - 1) as f64) as usize;
        let k = k.min(max_support);
        let values: Vec<f64> = (0..k).map(|_| 4.0 * rng.uniform() - 2.0).collect();
        let weights: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform()).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        let atoms: Vec<Atom> = values
            .iter()
            .zip(&probs)
            .map(|(v, p)| Atom::new(v - mean, *p))
            .collect();
        if let Ok(law) = DiscreteLaw::new(atoms) {
            if law.second_moment() > 0.0 {
                return law;
            }
        }
    }
}

/// Joint law of `(X, Y)` on at most `max_side × max_side` atoms. `Y` is scaled
/// down so that both terms of the smoothing bound matter.
pub fn random_joint_law(rng: &mut ReplicateRng, max_side: usize) -> JointLaw {
    loop {
        let kx = 1 + ((rng.uniform() * max_side as f64) as usize).min(max_side - 1);
        let ky = 1 + ((rng.uniform() * max_side as f64) as usize).min(max_side - 1);
        let y_scale = 10f64.powf(-2.0 * rng.uniform());
        let xs: Vec<f64> = (0..kx).map(|_| 4.0 * rng.uniform() - 2.0).collect();
        let ys: Vec<f64> = (0..ky).map(|_| y_scale * (2.0 * rng.uniform() - 1.0)).collect();
        let mut atoms = Vec::with_capacity(kx * ky);
        for &x in &xs {
            for &y in &ys {
                atoms.push((x, y, rng.uniform()));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        for a in &mut atoms {
            a.2 /= total;
        }
        if let Ok(joint) = JointLaw::new(atoms) {
            return joint;
        }
    }
}
