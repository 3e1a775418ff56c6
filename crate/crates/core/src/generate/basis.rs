use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CpVaeModel;

/// Default number of labelled sentences averaged per class.
pub const SAMPLES_PER_CLASS: usize = 10;

/// Which basis vector stands for each class. For sentiment data class 0 is
/// negative and class 1 positive, so `v_n = class_to_basis[0]` and
/// `v_p = class_to_basis[1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisAssignment {
    pub class_to_basis: Vec<usize>,
}

impl BasisAssignment {
    pub fn v_n(&self) -> usize {
        self.class_to_basis[0]
    }

    pub fn v_p(&self) -> usize {
        self.class_to_basis[1]
    }

    pub fn basis_for(&self, class: usize) -> Result<usize> {
        self.class_to_basis
            .get(class)
            .copied()
            .ok_or_else(|| Error::usage(format!("no basis assigned to class {class}")))
    }
}

/// Assigns each class the index of its largest mean weight. Classes are
/// resolved in order; a class whose best index is taken falls back to its
/// next highest free one, so with two classes the positive class (1)
/// yields to the negative one (0).
pub fn assign_basis(mean_p: &[Vec<f64>]) -> Result<BasisAssignment> {
    let k = mean_p.first().map_or(0, Vec::len);
    if mean_p.is_empty() || mean_p.iter().any(|p| p.len() != k) {
        return Err(Error::usage("class means must be non-empty and of equal width"));
    }
    if mean_p.len() > k {
        return Err(Error::usage(format!("{} classes but only {k} basis vectors", mean_p.len())));
    }
    let mut taken = vec![false; k];
    let mut out = Vec::with_capacity(mean_p.len());
    for p in mean_p {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let pick = order.into_iter().find(|&i| !taken[i]).expect("k >= classes");
        taken[pick] = true;
        out.push(pick);
    }
    Ok(BasisAssignment { class_to_basis: out })
}

/// Averages `p` over `n_per_class` randomly drawn sentences of each class
/// (`0..num_classes`) and calls [`assign_basis`].
pub fn identify_basis(
    model: &CpVaeModel,
    sentences: &[Vec<usize>],
    labels: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<BasisAssignment> {
    if sentences.len() != labels.len() {
        return Err(Error::usage("sentences and labels differ in length"));
    }
    if n_per_class == 0 {
        return Err(Error::usage("need at least one sentence per class"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < n_per_class {
            return Err(Error::usage(format!(
                "class {c} has {} sentences, {n_per_class} required",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let mut mean = vec![0.0; model.config().k];
        for &i in &idx[..n_per_class] {
            let b = model.encode(&sentences[i])?;
            for (m, p) in mean.iter_mut().zip(&b.p) {
                *m += p / n_per_class as f64;
            }
        }
        means.push(mean);
    }
    assign_basis(&means)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_argmax() {
        let a = assign_basis(&[vec![0.1, 0.8, 0.1], vec![0.7, 0.2, 0.1]]).unwrap();
        assert_eq!((a.v_p(), a.v_n()), (0, 1));
    }

    #[test]
    fn collision_moves_positive_to_second_best() {
        let a = assign_basis(&[vec![0.1, 0.8, 0.1], vec![0.15, 0.5, 0.35]]).unwrap();
        assert_eq!((a.v_n(), a.v_p()), (1, 2));
    }
}
