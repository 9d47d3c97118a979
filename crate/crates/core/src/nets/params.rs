//! Named parameter storage.

use indexmap::IndexMap;

use super::tape::{BnBatchStats, BnMode, Tape, Var};
use super::tensor::{Real, Tensor};
use super::NetError;

/// Weight of the newest batch in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.1;

/// Learnable arrays plus non-learnable running statistics, both in a fixed
/// order that defines the checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub learnable: IndexMap<String, Tensor<F>>,
    pub running: IndexMap<String, Tensor<F>>,
}

impl<F: Real> Parameters<F> {
    pub fn new() -> Self {
        Self {
            learnable: IndexMap::new(),
            running: IndexMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        self.learnable
            .get(name)
            .or_else(|| self.running.get(name))
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        if self.learnable.contains_key(name) {
            return self.learnable.get_mut(name).unwrap();
        }
        self.running
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    /// Number of learnable scalars.
    pub fn n_learnable(&self) -> usize {
        self.learnable.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> Parameters<G> {
        Parameters {
            learnable: self
                .learnable
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            running: self
                .running
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Binds every learnable array as a tape leaf, in order.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>) -> Vec<Var> {
        self.learnable.values().map(|t| tape.param(t)).collect()
    }

    /// Blends batch statistics into the running mean and variance of the
    /// batch-norm layer named `prefix`.
    pub fn update_running(&mut self, prefix: &str, stats: &BnBatchStats<F>, momentum: f64) {
        let m = F::of(momentum);
        let keep = F::one() - m;
        for (key, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let t = self.get_mut(&format!("{prefix}.{key}"));
            for (r, b) in t.data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * *b;
            }
        }
    }
}

impl<F: Real> Default for Parameters<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of a scalar `loss` for each bound parameter, zeros where the
/// loss does not depend on it.
pub fn gradients<F: Real>(
    tape: &Tape<'_, F>,
    loss: Var,
    bound: &[Var],
) -> Result<Vec<Tensor<F>>, NetError> {
    let g = tape.backward(loss)?;
    Ok(bound
        .iter()
        .map(|v| {
            let shape = tape.shape(*v).to_vec();
            match g.get(*v) {
                Some(d) => Tensor::new(shape, d.to_vec()),
                None => Tensor::zeros(&shape),
            }
        })
        .collect())
}

/// Running statistics of one batch-norm layer.
#[derive(Debug)]
pub struct BnRunning<'a, F> {
    pub mean: &'a mut [F],
    pub var: &'a mut [F],
}

/// Batch normalization outside of any tape.
///
/// In train mode the batch statistics normalize the input and are blended
/// into `running` with [`BN_MOMENTUM`]; in eval mode the running statistics
/// are used as-is.
pub fn batchnorm2d_forward<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: BnRunning<'_, F>,
    train: bool,
) -> Result<Tensor<F>, NetError> {
    let s = x.shape();
    if s.len() != 4 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
        return Err(NetError::Shape(format!(
            "batch norm input {s:?} with gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if running.mean.len() != s[1] || running.var.len() != s[1] {
        return Err(NetError::Shape("running statistics width".into()));
    }
    if train && s[0] < 2 {
        return Err(NetError::BatchTooSmall(s[0]));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (gv, bv) = (tape.constant(gamma.clone()), tape.constant(beta.clone()));
    let mode = if train {
        BnMode::Train
    } else {
        BnMode::Eval {
            mean: running.mean,
            var: running.var,
        }
    };
    let (y, stats) = tape.batchnorm2d(xv, gv, bv, mode);
    let out = tape.value(y).clone();
    if let Some(st) = stats {
        let m = F::of(BN_MOMENTUM);
        for c in 0..s[1] {
            running.mean[c] = (F::one() - m) * running.mean[c] + m * st.mean[c];
            running.var[c] = (F::one() - m) * running.var[c] + m * st.var[c];
        }
    }
    Ok(out)
}
