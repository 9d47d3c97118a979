//! Actor-critic policy networks with a diagonal-Gaussian action head.
//!
//! Both architectures share one trunk between the actor and the critic. The
//! actor mean is squashed by `tanh`; the log standard deviation is a learned,
//! state-independent vector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tape::{gaussian_log_density, BnBatchStats, BnMode, Tape, Var};
use super::tensor::{Real, Tensor};
use super::NetError;
use crate::features::{DEFAULT_WINDOW, DOW30_FEATURE_WIDTH, DOW30_TICKERS};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Two conv/batch-norm/ReLU/max-pool stages, a dense layer, then heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub window: usize,
    pub features: usize,
    pub n_actions: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub pad: usize,
    pub pool: usize,
    pub dense: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            features: DOW30_FEATURE_WIDTH,
            n_actions: DOW30_TICKERS,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel: 3,
            pad: 1,
            pool: 2,
            dense: 512,
        }
    }
}

impl CnnSpec {
    fn conv(&self, size: usize) -> Option<usize> {
        (size + 2 * self.pad)
            .checked_sub(self.kernel)
            .map(|v| v + 1)
    }

    /// Spatial size after both stages, or `None` when the input is too small.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let stage = |s: usize| {
            self.conv(s)
                .filter(|c| *c >= self.pool)
                .map(|c| c / self.pool)
        };
        let h = stage(self.window).and_then(stage)?;
        let w = stage(self.features).and_then(stage)?;
        Some((h, w))
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = self.output_hw().unwrap_or((0, 0));
        self.conv2_filters * h * w
    }
}

/// Fully connected `tanh` network over the newest daily vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub features: usize,
    pub n_actions: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            features: DOW30_FEATURE_WIDTH,
            n_actions: DOW30_TICKERS,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicySpec {
    Cnn(CnnSpec),
    Mlp(MlpSpec),
}

impl PolicySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicySpec::Cnn(_) => "cnn",
            PolicySpec::Mlp(_) => "mlp",
        }
    }

    pub fn features(&self) -> usize {
        match self {
            PolicySpec::Cnn(s) => s.features,
            PolicySpec::Mlp(s) => s.features,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            PolicySpec::Cnn(s) => s.n_actions,
            PolicySpec::Mlp(s) => s.n_actions,
        }
    }

    /// Rows of the state matrix the network reads: the full window for the
    /// CNN, only the newest row for the MLP.
    pub fn obs_rows(&self) -> usize {
        match self {
            PolicySpec::Cnn(s) => s.window,
            PolicySpec::Mlp(_) => 1,
        }
    }

    /// Number of scalars in one observation.
    pub fn obs_len(&self) -> usize {
        self.obs_rows() * self.features()
    }

    /// Batch shape for `n` observations.
    pub fn obs_shape(&self, n: usize) -> Vec<usize> {
        match self {
            PolicySpec::Cnn(s) => vec![n, 1, s.window, s.features],
            PolicySpec::Mlp(s) => vec![n, s.features],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Spec(m.to_string()));
        if self.features() == 0 || self.n_actions() == 0 {
            return bad("features and n_actions must be positive");
        }
        match self {
            PolicySpec::Cnn(s) => {
                if s.conv1_filters == 0
                    || s.conv2_filters == 0
                    || s.dense == 0
                    || s.kernel == 0
                    || s.pool == 0
                {
                    return bad("filter counts, kernel, pool and dense width must be positive");
                }
                if s.output_hw().is_none_or(|(h, w)| h == 0 || w == 0) {
                    return Err(NetError::Spec(format!(
                        "input {}x{} is too small for kernel {} / pool {}",
                        s.window, s.features, s.kernel, s.pool
                    )));
                }
            }
            PolicySpec::Mlp(s) => {
                if s.hidden.is_empty() || s.hidden.contains(&0) {
                    return bad("MLP needs at least one non-empty hidden layer");
                }
            }
        }
        Ok(())
    }

    /// Learnable arrays in order, with the initialization gain of each
    /// weight (`None` for arrays with a constant initial value).
    pub fn learnable_layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<_>, name: &str, i: usize, o: usize, gain: f64| {
            out.push((format!("{name}.weight"), vec![i, o], Init::Orthogonal(gain)));
            out.push((format!("{name}.bias"), vec![o], Init::Const(0.0)));
        };
        let trunk_gain = 2f64.sqrt();
        let (trunk_out, a) = match self {
            PolicySpec::Cnn(s) => {
                let k = s.kernel;
                for (i, (cin, cout)) in [(1, s.conv1_filters), (s.conv1_filters, s.conv2_filters)]
                    .into_iter()
                    .enumerate()
                {
                    out.push((
                        format!("conv{}.weight", i + 1),
                        vec![cout, cin, k, k],
                        Init::Orthogonal(trunk_gain),
                    ));
                    out.push((format!("conv{}.bias", i + 1), vec![cout], Init::Const(0.0)));
                    out.push((format!("bn{}.gamma", i + 1), vec![cout], Init::Const(1.0)));
                    out.push((format!("bn{}.beta", i + 1), vec![cout], Init::Const(0.0)));
                }
                dense(&mut out, "fc", s.flat_dim(), s.dense, trunk_gain);
                (s.dense, s.n_actions)
            }
            PolicySpec::Mlp(s) => {
                let mut prev = s.features;
                for (i, h) in s.hidden.iter().enumerate() {
                    dense(&mut out, &format!("fc{}", i + 1), prev, *h, trunk_gain);
                    prev = *h;
                }
                (prev, s.n_actions)
            }
        };
        dense(&mut out, "actor", trunk_out, a, 0.01);
        dense(&mut out, "critic", trunk_out, 1, 1.0);
        out.push(("log_std".into(), vec![a], Init::Const(0.0)));
        out
    }

    /// Names of the batch-norm layers, in forward order.
    pub fn bn_layers(&self) -> Vec<String> {
        match self {
            PolicySpec::Cnn(_) => vec!["bn1".into(), "bn2".into()],
            PolicySpec::Mlp(_) => Vec::new(),
        }
    }

    /// Running-statistic arrays in order.
    pub fn running_layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        if let PolicySpec::Cnn(s) = self {
            for (name, c) in [("bn1", s.conv1_filters), ("bn2", s.conv2_filters)] {
                out.push((format!("{name}.running_mean"), vec![c], Init::Const(0.0)));
                out.push((format!("{name}.running_var"), vec![c], Init::Const(1.0)));
            }
        }
        out
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.learnable_layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Initial value rule for one array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Orthogonal(f64),
    Const(f64),
}

/// Batch-norm behaviour for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Tape handles produced by [`forward`].
#[derive(Debug)]
pub struct ForwardOutput<F> {
    /// One leaf per learnable array, in layout order.
    pub bound: Vec<Var>,
    /// `[N, A]` action means in `(−1, 1)`.
    pub mean: Var,
    /// `[A]` log standard deviations after clamping.
    pub log_std: Var,
    /// `[N]` state values.
    pub value: Var,
    /// Train-mode batch statistics per batch-norm layer.
    pub bn_stats: Vec<(String, BnBatchStats<F>)>,
}

/// Records the policy network on `tape` for a batch `obs` shaped as
/// [`PolicySpec::obs_shape`].
pub fn forward<'p, F: Real>(
    tape: &mut Tape<'p, F>,
    spec: &PolicySpec,
    params: &'p Parameters<F>,
    obs: Tensor<F>,
    mode: ForwardMode,
) -> Result<ForwardOutput<F>, NetError> {
    let n = obs.shape().first().copied().unwrap_or(0);
    if n == 0 || obs.shape() != spec.obs_shape(n).as_slice() {
        return Err(NetError::Shape(format!(
            "observation batch {:?}, expected {:?}",
            obs.shape(),
            spec.obs_shape(n.max(1))
        )));
    }
    let layout = spec.learnable_layout();
    if layout.len() != params.learnable.len()
        || layout
            .iter()
            .zip(&params.learnable)
            .any(|((name, shape, _), (pname, t))| name != pname || shape.as_slice() != t.shape())
    {
        return Err(NetError::Shape(
            "parameters do not match the policy spec".into(),
        ));
    }
    let bound = params.bind(tape);
    let p = |name: &str| bound[params.learnable.get_index_of(name).expect("layout checked")];
    let dense = |tape: &mut Tape<'p, F>, x: Var, name: &str| {
        let h = tape.matmul(x, p(&format!("{name}.weight")));
        tape.add_bias(h, p(&format!("{name}.bias")))
    };
    let x = tape.constant(obs);
    let mut bn_stats = Vec::new();
    let trunk = match spec {
        PolicySpec::Cnn(s) => {
            if mode == ForwardMode::Train && n < 2 {
                return Err(NetError::BatchTooSmall(n));
            }
            let mut h = x;
            for i in 1..=2 {
                let c = tape.conv2d(
                    h,
                    p(&format!("conv{i}.weight")),
                    p(&format!("conv{i}.bias")),
                    s.pad,
                    1,
                );
                let bn = format!("bn{i}");
                let bn_mode = match mode {
                    ForwardMode::Train => BnMode::Train,
                    ForwardMode::Eval => BnMode::Eval {
                        mean: params.running[&format!("{bn}.running_mean")].data(),
                        var: params.running[&format!("{bn}.running_var")].data(),
                    },
                };
                let (y, stats) = tape.batchnorm2d(
                    c,
                    p(&format!("{bn}.gamma")),
                    p(&format!("{bn}.beta")),
                    bn_mode,
                );
                if let Some(st) = stats {
                    bn_stats.push((bn, st));
                }
                let r = tape.relu(y);
                h = tape.maxpool2d(r, s.pool);
            }
            let flat = tape.reshape(h, &[n, s.flat_dim()]);
            let d = dense(tape, flat, "fc");
            tape.relu(d)
        }
        PolicySpec::Mlp(s) => {
            let mut h = x;
            for i in 1..=s.hidden.len() {
                let d = dense(tape, h, &format!("fc{i}"));
                h = tape.tanh(d);
            }
            h
        }
    };
    let pre = dense(tape, trunk, "actor");
    let mean = tape.tanh(pre);
    let v = dense(tape, trunk, "critic");
    let value = tape.reshape(v, &[n]);
    let log_std = tape.clamp(p("log_std"), LOG_STD_MIN, LOG_STD_MAX);
    Ok(ForwardOutput {
        bound,
        mean,
        log_std,
        value,
        bn_stats,
    })
}

/// Action distribution and value estimate for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

/// Eval-mode forward pass without gradients, one output per sample.
pub fn forward_eval<F: Real>(
    spec: &PolicySpec,
    params: &Parameters<F>,
    obs: Tensor<F>,
) -> Result<Vec<GaussianPolicyOutput>, NetError> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, spec, params, obs, ForwardMode::Eval)?;
    let a = spec.n_actions();
    let log_std = tape.value(out.log_std).to_f64_vec();
    let means = tape.value(out.mean).to_f64_vec();
    Ok(tape
        .value(out.value)
        .to_f64_vec()
        .into_iter()
        .enumerate()
        .map(|(i, value)| GaussianPolicyOutput {
            mean: means[i * a..(i + 1) * a].to_vec(),
            log_std: log_std.clone(),
            value,
        })
        .collect())
}

/// Draws `a ~ N(mean, exp(log_std)²)` and returns it with its log-density.
/// Clamping into the action box happens later, in the environment.
pub fn sample_action<R: Rng + ?Sized>(out: &GaussianPolicyOutput, rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = out
        .mean
        .iter()
        .zip(&out.log_std)
        .map(|(m, ls)| {
            let z: f64 = rng.sample(StandardNormal);
            m + ls.exp() * z
        })
        .collect();
    let lp = gaussian_log_density(&out.mean, &out.log_std, &action);
    (action, lp)
}
