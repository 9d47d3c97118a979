//! Experiment configuration files.
//!
//! The format is INI: a handful of top-level keys followed by sections.
//! Every key is optional and falls back to the default of the module that
//! owns it. Unknown sections and keys are rejected, and all problems in a
//! file are reported together.
//!
//! ```ini
//! seed = 7
//! out_dir = runs/example
//!
//! [data]
//! synthetic_days = 300
//! synthetic_tickers = 2
//!
//! [policy]
//! kind = mlp
//!
//! [algo]
//! kind = a2c
//! total_steps = 5000
//! ```

use std::collections::HashSet;
use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use matrix_trader::algo::{A2cConfig, AlgoConfig, PpoConfig, TrainConfig};
use matrix_trader::data::{Regime, DEFAULT_DRIFT};
use matrix_trader::env::EnvConfig;
use matrix_trader::features::FeatureLayout;
use matrix_trader::nets::{CnnSpec, MlpSpec, PolicySpec};

/// Every problem found while reading a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub problems: Vec<String>,
}

impl Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config {}:", self.source)?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Cnn,
    Mlp,
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cnn" => Ok(Self::Cnn),
            "mlp" => Ok(Self::Mlp),
            _ => Err(format!("expected cnn or mlp, got {s:?}")),
        }
    }
}

impl Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cnn => "cnn",
            Self::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoKind {
    Ppo,
    A2c,
}

impl FromStr for AlgoKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ppo" => Ok(Self::Ppo),
            "a2c" => Ok(Self::A2c),
            _ => Err(format!("expected ppo or a2c, got {s:?}")),
        }
    }
}

impl Display for AlgoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ppo => "ppo",
            Self::A2c => "a2c",
        })
    }
}

/// Comma-separated list of layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Widths)
    }
}

impl Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Dataset directory written by `ingest` or `synth`; when absent a
    /// synthetic market is generated from the `synthetic_*` keys.
    pub path: Option<PathBuf>,
    pub synthetic_days: usize,
    pub synthetic_tickers: usize,
    pub synthetic_regime: Regime,
    /// Daily log-drift magnitude of the trending synthetic regimes.
    pub synthetic_drift: f64,
    pub synthetic_seed: u64,
    /// Share of the calendar held out at the end for evaluation.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic_days: 1000,
            synthetic_tickers: 30,
            synthetic_regime: Regime::Mixed,
            synthetic_drift: DEFAULT_DRIFT,
            synthetic_seed: 0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub cnn_conv1_filters: usize,
    pub cnn_conv2_filters: usize,
    pub cnn_kernel: usize,
    pub cnn_pad: usize,
    pub cnn_pool: usize,
    pub cnn_dense: usize,
    pub mlp_hidden: Widths,
    pub normalize_obs: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let c = CnnSpec::default();
        Self {
            kind: PolicyKind::Cnn,
            cnn_conv1_filters: c.conv1_filters,
            cnn_conv2_filters: c.conv2_filters,
            cnn_kernel: c.kernel,
            cnn_pad: c.pad,
            cnn_pool: c.pool,
            cnn_dense: c.dense,
            mlp_hidden: Widths(MlpSpec::default().hidden),
            normalize_obs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSection {
    pub kind: AlgoKind,
    pub total_steps: u64,
    pub n_envs: usize,
    pub bn_refresh_batch: usize,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: AlgoKind::Ppo,
            total_steps: t.total_steps,
            n_envs: t.n_envs,
            bn_refresh_batch: t.bn_refresh_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Rollout horizon shared by all four cells, so that every cell performs
    /// the same number of updates.
    pub horizon: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { horizon: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub algo: AlgoSection,
    pub ppo: PpoConfig,
    pub a2c: A2cConfig,
    pub compare: CompareConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            env: EnvConfig {
                hmax: 1000,
                ..EnvConfig::default()
            },
            policy: PolicyConfig::default(),
            algo: AlgoSection::default(),
            ppo: PpoConfig::default(),
            a2c: A2cConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

const SECTIONS: [&str; 7] = ["data", "env", "policy", "algo", "ppo", "a2c", "compare"];

struct Reader<'a> {
    ini: &'a Ini,
    used: HashSet<(Option<String>, String)>,
    problems: Vec<String>,
}

fn label(section: Option<&str>, key: &str) -> String {
    match section {
        Some(s) => format!("[{s}] {key}"),
        None => key.to_string(),
    }
}

impl Reader<'_> {
    fn read<T>(&mut self, section: Option<&str>, key: &str, slot: &mut T)
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(props) = self.ini.section(section) else {
            return;
        };
        let values: Vec<&str> = props.get_all(key).collect();
        if values.is_empty() {
            return;
        }
        self.used
            .insert((section.map(str::to_string), key.to_string()));
        if values.len() > 1 {
            self.problems
                .push(format!("duplicate key `{}`", label(section, key)));
            return;
        }
        match values[0].trim().parse::<T>() {
            Ok(v) => *slot = v,
            Err(e) => self.problems.push(format!(
                "bad value {:?} for `{}`: {e}",
                values[0],
                label(section, key)
            )),
        }
    }

    fn unknown(&mut self) {
        for (section, props) in self.ini.iter() {
            if let Some(s) = section {
                if !SECTIONS.contains(&s) {
                    self.problems.push(format!("unknown section `[{s}]`"));
                    continue;
                }
            }
            for (key, _) in props.iter() {
                if !self
                    .used
                    .contains(&(section.map(str::to_string), key.to_string()))
                {
                    self.problems
                        .push(format!("unknown key `{}`", label(section, key)));
                }
            }
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError {
            source: source.to_string(),
            problems: vec![e.to_string()],
        })?;
        let mut r = Reader {
            ini: &ini,
            used: HashSet::new(),
            problems: Vec::new(),
        };
        let mut c = ExperimentConfig::default();
        let mut out_dir = c.out_dir.display().to_string();
        r.read(None, "seed", &mut c.seed);
        r.read(None, "out_dir", &mut out_dir);
        c.out_dir = PathBuf::from(out_dir);

        let s = Some("data");
        let mut path = String::new();
        r.read(s, "path", &mut path);
        c.data.path = (!path.is_empty()).then(|| PathBuf::from(path));
        c.data.synthetic_seed = c.seed;
        r.read(s, "synthetic_days", &mut c.data.synthetic_days);
        r.read(s, "synthetic_tickers", &mut c.data.synthetic_tickers);
        r.read(s, "synthetic_regime", &mut c.data.synthetic_regime);
        r.read(s, "synthetic_drift", &mut c.data.synthetic_drift);
        r.read(s, "synthetic_seed", &mut c.data.synthetic_seed);
        r.read(s, "test_fraction", &mut c.data.test_fraction);

        let s = Some("env");
        r.read(s, "initial_balance", &mut c.env.initial_balance);
        r.read(s, "hmax", &mut c.env.hmax);
        r.read(s, "cost_rate", &mut c.env.cost_rate);
        r.read(s, "reward_scale", &mut c.env.reward_scale);
        r.read(s, "turbulence_lookback", &mut c.env.turbulence_lookback);
        r.read(s, "window", &mut c.env.window);

        let s = Some("policy");
        let p = &mut c.policy;
        r.read(s, "kind", &mut p.kind);
        r.read(s, "cnn_conv1_filters", &mut p.cnn_conv1_filters);
        r.read(s, "cnn_conv2_filters", &mut p.cnn_conv2_filters);
        r.read(s, "cnn_kernel", &mut p.cnn_kernel);
        r.read(s, "cnn_pad", &mut p.cnn_pad);
        r.read(s, "cnn_pool", &mut p.cnn_pool);
        r.read(s, "cnn_dense", &mut p.cnn_dense);
        r.read(s, "mlp_hidden", &mut p.mlp_hidden);
        r.read(s, "normalize_obs", &mut p.normalize_obs);

        let s = Some("algo");
        r.read(s, "kind", &mut c.algo.kind);
        r.read(s, "total_steps", &mut c.algo.total_steps);
        r.read(s, "n_envs", &mut c.algo.n_envs);
        r.read(s, "bn_refresh_batch", &mut c.algo.bn_refresh_batch);

        let s = Some("ppo");
        let p = &mut c.ppo;
        r.read(s, "clip_eps", &mut p.clip_eps);
        r.read(s, "gamma", &mut p.gamma);
        r.read(s, "gae_lambda", &mut p.gae_lambda);
        r.read(s, "epochs", &mut p.epochs);
        r.read(s, "minibatch", &mut p.minibatch);
        r.read(s, "vf_coef", &mut p.vf_coef);
        r.read(s, "ent_coef", &mut p.ent_coef);
        r.read(s, "lr", &mut p.lr);
        r.read(s, "horizon", &mut p.horizon);
        r.read(s, "max_grad_norm", &mut p.max_grad_norm);

        let s = Some("a2c");
        let a = &mut c.a2c;
        r.read(s, "gamma", &mut a.gamma);
        r.read(s, "gae_lambda", &mut a.gae_lambda);
        r.read(s, "horizon", &mut a.horizon);
        r.read(s, "vf_coef", &mut a.vf_coef);
        r.read(s, "ent_coef", &mut a.ent_coef);
        r.read(s, "lr", &mut a.lr);
        r.read(s, "max_grad_norm", &mut a.max_grad_norm);
        r.read(s, "rms_alpha", &mut a.rms_alpha);
        r.read(s, "rms_eps", &mut a.rms_eps);

        r.read(Some("compare"), "horizon", &mut c.compare.horizon);

        r.unknown();
        let mut problems = r.problems;
        problems.extend(c.semantic_problems());
        if problems.is_empty() {
            Ok(c)
        } else {
            Err(ConfigError {
                source: source.to_string(),
                problems,
            })
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: path.display().to_string(),
            problems: vec![e.to_string()],
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn semantic_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.data.synthetic_drift.is_finite() && self.data.synthetic_drift > 0.0) {
            p.push("`[data] synthetic_drift` must be finite and positive".to_string());
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            p.push("`[data] test_fraction` must be in [0, 1)".to_string());
        }
        if let Err(e) = self.env.validate() {
            p.push(e.to_string());
        }
        if self.algo.total_steps == 0 || self.algo.n_envs == 0 || self.algo.bn_refresh_batch < 2 {
            p.push(
                "`[algo]` total_steps and n_envs must be positive, bn_refresh_batch at least 2"
                    .into(),
            );
        }
        if self.compare.horizon == 0 {
            p.push("`[compare] horizon` must be positive".into());
        }
        for algo in [
            AlgoConfig::Ppo(self.ppo.clone()),
            AlgoConfig::A2c(self.a2c.clone()),
        ] {
            if let Err(e) = algo.validate() {
                p.push(e.to_string());
            }
        }
        p
    }

    /// The config with every default written out.
    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: &dyn Display| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv(&mut s, "seed", &self.seed);
        kv(&mut s, "out_dir", &self.out_dir.display());
        let d = &self.data;
        s.push_str("\n[data]\n");
        kv(
            &mut s,
            "path",
            &d.path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv(&mut s, "synthetic_days", &d.synthetic_days);
        kv(&mut s, "synthetic_tickers", &d.synthetic_tickers);
        kv(&mut s, "synthetic_regime", &d.synthetic_regime);
        kv(&mut s, "synthetic_drift", &d.synthetic_drift);
        kv(&mut s, "synthetic_seed", &d.synthetic_seed);
        kv(&mut s, "test_fraction", &d.test_fraction);
        let e = &self.env;
        s.push_str("\n[env]\n");
        kv(&mut s, "initial_balance", &e.initial_balance);
        kv(&mut s, "hmax", &e.hmax);
        kv(&mut s, "cost_rate", &e.cost_rate);
        kv(&mut s, "reward_scale", &e.reward_scale);
        kv(&mut s, "turbulence_lookback", &e.turbulence_lookback);
        kv(&mut s, "window", &e.window);
        let p = &self.policy;
        s.push_str("\n[policy]\n");
        kv(&mut s, "kind", &p.kind);
        kv(&mut s, "cnn_conv1_filters", &p.cnn_conv1_filters);
        kv(&mut s, "cnn_conv2_filters", &p.cnn_conv2_filters);
        kv(&mut s, "cnn_kernel", &p.cnn_kernel);
        kv(&mut s, "cnn_pad", &p.cnn_pad);
        kv(&mut s, "cnn_pool", &p.cnn_pool);
        kv(&mut s, "cnn_dense", &p.cnn_dense);
        kv(&mut s, "mlp_hidden", &p.mlp_hidden);
        kv(&mut s, "normalize_obs", &p.normalize_obs);
        let a = &self.algo;
        s.push_str("\n[algo]\n");
        kv(&mut s, "kind", &a.kind);
        kv(&mut s, "total_steps", &a.total_steps);
        kv(&mut s, "n_envs", &a.n_envs);
        kv(&mut s, "bn_refresh_batch", &a.bn_refresh_batch);
        let p = &self.ppo;
        s.push_str("\n[ppo]\n");
        kv(&mut s, "clip_eps", &p.clip_eps);
        kv(&mut s, "gamma", &p.gamma);
        kv(&mut s, "gae_lambda", &p.gae_lambda);
        kv(&mut s, "epochs", &p.epochs);
        kv(&mut s, "minibatch", &p.minibatch);
        kv(&mut s, "vf_coef", &p.vf_coef);
        kv(&mut s, "ent_coef", &p.ent_coef);
        kv(&mut s, "lr", &p.lr);
        kv(&mut s, "horizon", &p.horizon);
        kv(&mut s, "max_grad_norm", &p.max_grad_norm);
        let a = &self.a2c;
        s.push_str("\n[a2c]\n");
        kv(&mut s, "gamma", &a.gamma);
        kv(&mut s, "gae_lambda", &a.gae_lambda);
        kv(&mut s, "horizon", &a.horizon);
        kv(&mut s, "vf_coef", &a.vf_coef);
        kv(&mut s, "ent_coef", &a.ent_coef);
        kv(&mut s, "lr", &a.lr);
        kv(&mut s, "max_grad_norm", &a.max_grad_norm);
        kv(&mut s, "rms_alpha", &a.rms_alpha);
        kv(&mut s, "rms_eps", &a.rms_eps);
        s.push_str("\n[compare]\n");
        kv(&mut s, "horizon", &self.compare.horizon);
        s
    }

    /// Policy architecture for a market with `n_tickers` tickers.
    pub fn policy_spec(&self, kind: PolicyKind, n_tickers: usize) -> PolicySpec {
        let features = FeatureLayout::new(n_tickers).width();
        let p = &self.policy;
        match kind {
            PolicyKind::Cnn => PolicySpec::Cnn(CnnSpec {
                window: self.env.window,
                features,
                n_actions: n_tickers,
                conv1_filters: p.cnn_conv1_filters,
                conv2_filters: p.cnn_conv2_filters,
                kernel: p.cnn_kernel,
                pad: p.cnn_pad,
                pool: p.cnn_pool,
                dense: p.cnn_dense,
            }),
            PolicyKind::Mlp => PolicySpec::Mlp(MlpSpec {
                features,
                n_actions: n_tickers,
                hidden: p.mlp_hidden.0.clone(),
            }),
        }
    }

    pub fn algo_config(&self, kind: AlgoKind) -> AlgoConfig {
        match kind {
            AlgoKind::Ppo => AlgoConfig::Ppo(self.ppo.clone()),
            AlgoKind::A2c => AlgoConfig::A2c(self.a2c.clone()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.algo.total_steps,
            seed: self.seed,
            n_envs: self.algo.n_envs,
            bn_refresh_batch: self.algo.bn_refresh_batch,
            normalize_obs: self.policy.normalize_obs,
        }
    }
}
