use super::pgd::pgd;
use super::{AttackBudget, PerturbationMatrix};
use crate::numkit::Matrix;
use crate::policy::NeuralPolicy;
use crate::Result;

/// White-box baseline: per agent, descend `π(oᵢ + δᵢ, a*)` where `a*` is the
/// greedy action on the clean row. `a*` is fixed before the first iteration.
pub fn whitebox_perturb(
    policy: &NeuralPolicy,
    obs: &Matrix,
    budget: &AttackBudget,
) -> Result<PerturbationMatrix> {
    let targets = (0..obs.rows())
        .map(|i| policy.act(obs.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let objective = |o: &Matrix| -> Result<Matrix> {
        let mut g = Matrix::zeros(o.rows(), o.cols());
        for (i, &a) in targets.iter().enumerate() {
            let (_, grad) = policy.prob_and_grad(o.row(i), a)?;
            for (dst, v) in g.row_mut(i).iter_mut().zip(grad) {
                *dst = -v;
            }
        }
        Ok(g)
    };
    pgd(&objective, obs, budget, None)
}
