//! Synchronizing LQR: the all-pairs augmented cost, the optimal gain and its
//! per-agent partition.

use crate::error::{Error, Result};
use crate::numerics::{min_eigenvalue_symmetric, solve_dare, spectral_radius, DareSolution, Matrix};
use crate::plant::DiscreteModel;

/// Per-agent weights plus the pairwise synchronization weight.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub q_local: Vec<Matrix>,
    pub r_local: Vec<Matrix>,
    pub q_sync: Matrix,
}

impl CostSpec {
    /// Same weights for every agent.
    pub fn uniform(agents: usize, q_local: Matrix, r_local: Matrix, q_sync: Matrix) -> Self {
        Self {
            q_local: vec![q_local; agents],
            r_local: vec![r_local; agents],
            q_sync,
        }
    }

    /// Cart-pole defaults: `Q_i = diag(10, 1, 10, 1)`, `R_i = 0.01`,
    /// `Q_sync = diag(20, 0, 0, 0)`.
    pub fn cartpole_default(agents: usize) -> Self {
        Self::uniform(
            agents,
            Matrix::diag(&[10.0, 1.0, 10.0, 1.0]),
            Matrix::scalar(0.01),
            Matrix::diag(&[20.0, 0.0, 0.0, 0.0]),
        )
    }

    pub fn agents(&self) -> usize {
        self.q_local.len()
    }

    pub fn validate(&self, states: usize, inputs: usize) -> Result<()> {
        if self.r_local.len() != self.q_local.len() {
            return Err(Error::dim(format!(
                "{} state weights but {} input weights",
                self.q_local.len(),
                self.r_local.len()
            )));
        }
        if self.q_sync.shape() != (states, states) {
            return Err(Error::dim("Q_sync must match the state dimension"));
        }
        check_weight(&self.q_sync, "Q_sync", false)?;
        for q in &self.q_local {
            if q.shape() != (states, states) {
                return Err(Error::dim("Q_i must match the state dimension"));
            }
            check_weight(q, "Q_i", false)?;
        }
        for r in &self.r_local {
            if r.shape() != (inputs, inputs) {
                return Err(Error::dim("R_i must match the input dimension"));
            }
            check_weight(r, "R_i", true)?;
        }
        Ok(())
    }
}

fn check_weight(m: &Matrix, name: &str, definite: bool) -> Result<()> {
    if m.asymmetry() > 1e-12 * m.max_abs().max(1.0) {
        return Err(Error::arg(format!("{name} must be symmetric")));
    }
    let min = min_eigenvalue_symmetric(m);
    if definite && min <= 0.0 {
        return Err(Error::arg(format!("{name} must be positive definite")));
    }
    if !definite && min < -1e-12 {
        return Err(Error::arg(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

/// The stacked system all agents form together.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub agents: usize,
    pub states: usize,
    pub inputs: usize,
}

/// Stacks agent models block-diagonally. The state weight has diagonal
/// blocks `Q_i + (N−1)·Q_sync` and off-diagonal blocks `−Q_sync`, i.e. the
/// sum of `(x_i − x_j)ᵀ Q_sync (x_i − x_j)` over all unordered pairs.
pub fn build_augmented(models: &[DiscreteModel], cost: &CostSpec) -> Result<AugmentedSystem> {
    let agents = models.len();
    if agents < 2 {
        return Err(Error::arg(format!("need at least two agents, got {agents}")));
    }
    let n = models[0].states();
    let m = models[0].inputs();
    if models.iter().any(|md| md.states() != n || md.inputs() != m) {
        return Err(Error::dim("agents must share state and input dimensions"));
    }
    if cost.agents() != agents {
        return Err(Error::dim(format!(
            "cost has weights for {} agents, models for {agents}",
            cost.agents()
        )));
    }
    cost.validate(n, m)?;

    let (q, r) = augmented_weights(cost)?;
    let mut a = Matrix::zeros(agents * n, agents * n);
    let mut b = Matrix::zeros(agents * n, agents * m);
    for (i, model) in models.iter().enumerate() {
        a.set_block(i * n, i * n, &model.a);
        b.set_block(i * n, i * m, &model.b);
    }
    Ok(AugmentedSystem {
        a,
        b,
        q,
        r,
        agents,
        states: n,
        inputs: m,
    })
}

/// Stacked state and input weights of the all-pairs synchronization cost.
pub fn augmented_weights(cost: &CostSpec) -> Result<(Matrix, Matrix)> {
    let agents = cost.agents();
    if agents == 0 {
        return Err(Error::arg("cost has no agents"));
    }
    let n = cost.q_sync.rows();
    let m = cost
        .r_local
        .first()
        .ok_or_else(|| Error::arg("cost has no input weights"))?
        .rows();
    cost.validate(n, m)?;
    let mut q = Matrix::zeros(agents * n, agents * n);
    let mut r = Matrix::zeros(agents * m, agents * m);
    let coupling = -&cost.q_sync;
    let self_sync = cost.q_sync.scale((agents - 1) as f64);
    for i in 0..agents {
        r.set_block(i * m, i * m, &cost.r_local[i]);
        for j in 0..agents {
            let blk = if i == j {
                &cost.q_local[i] + &self_sync
            } else {
                coupling.clone()
            };
            q.set_block(i * n, j * n, &blk);
        }
    }
    Ok((q, r))
}

/// Optimal gain with the blocks every agent uses.
#[derive(Debug, Clone)]
pub struct GainPartition {
    pub full: Matrix,
    /// `blocks[i][j]` maps agent `j`'s state into agent `i`'s input.
    pub blocks: Vec<Vec<Matrix>>,
    /// `A_i + B_i F_ii`, at the rate the gain was synthesized for.
    pub closed_loop: Vec<Matrix>,
    pub dare: DareSolution,
    pub augmented: AugmentedSystem,
}

impl GainPartition {
    pub fn agents(&self) -> usize {
        self.blocks.len()
    }

    pub fn local(&self, i: usize) -> &Matrix {
        &self.blocks[i][i]
    }

    /// Recipients of agent `i`'s message, ascending.
    pub fn recipients(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agents()).filter(move |&j| j != i)
    }

    /// Outgoing gains of agent `i`: the blocks `F[j][i]` (`j ≠ i`, ascending)
    /// stacked vertically, so `outgoing_gain(i) · x_i` is its whole message.
    pub fn outgoing_gain(&self, i: usize) -> Matrix {
        let aug = &self.augmented;
        let mut out = Matrix::zeros((aug.agents - 1) * aug.inputs, aug.states);
        for (row, j) in self.recipients(i).enumerate() {
            out.set_block(row * aug.inputs, 0, &self.blocks[j][i]);
        }
        out
    }

    /// Spectral radius of `A_aug + B_aug F`.
    pub fn closed_loop_radius(&self) -> f64 {
        let aug = &self.augmented;
        spectral_radius(&(&aug.a + &(&aug.b * &self.full)))
    }
}

/// Solves the augmented DARE and partitions the resulting gain.
pub fn synthesize(models: &[DiscreteModel], cost: &CostSpec) -> Result<GainPartition> {
    let augmented = build_augmented(models, cost)?;
    let dare = solve_dare(&augmented.a, &augmented.b, &augmented.q, &augmented.r)?;
    let (n, m) = (augmented.states, augmented.inputs);
    let blocks: Vec<Vec<Matrix>> = (0..augmented.agents)
        .map(|i| {
            (0..augmented.agents)
                .map(|j| dare.gain.block(i * m, j * n, m, n))
                .collect()
        })
        .collect();
    let closed_loop = models
        .iter()
        .enumerate()
        .map(|(i, md)| &md.a + &(&md.b * &blocks[i][i]))
        .collect();
    Ok(GainPartition {
        full: dare.gain.clone(),
        blocks,
        closed_loop,
        dare,
        augmented,
    })
}

/// The share of agent `j`'s input contributed by agent `i`: `F_ji · x_i`.
pub fn remote_input(f_ji: &Matrix, x_i: &[f64]) -> Result<Vec<f64>> {
    if f_ji.cols() != x_i.len() {
        return Err(Error::dim(format!(
            "gain block has {} columns, state has {} entries",
            f_ji.cols(),
            x_i.len()
        )));
    }
    Ok(f_ji.mul_vec(x_i))
}
