use sa_numerics::{Gradients, ParamStore, Tensor, Var};

/// Gradients for every parameter of `params`, bound on the tape as `vars`.
pub(crate) fn collect_grads(grads: &Gradients, vars: &[Var], params: &ParamStore) -> Vec<Tensor> {
    vars.iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect()
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub(crate) fn permutation<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
