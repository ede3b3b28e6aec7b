//! Instruction network: a frozen binary classifier over adjacent state pairs.
//!
//! The raw network output `f(concat(s, s'))` is bounded with tanh and mapped
//! affinely to a probability, `p = 0.5 * (1 + tanh f)`, then clamped to
//! `[1e-6, 1 - 1e-6]`. Training minimizes binary cross-entropy with Adam.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::videodata::PairSample;

pub const PROB_FLOOR: f64 = 1e-6;
pub const INSTRUCTOR_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "skilllab-instructor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructorConfig {
    /// Number of gradient steps, one sampled batch each.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Gaussian input noise, the state-vector stand-in for random-shift augmentation.
    pub augment: bool,
    pub noise_sigma: f64,
}

impl Default for InstructorConfig {
    fn default() -> Self {
        InstructorConfig {
            epochs: 2000,
            batch_size: 1024,
            lr: 1e-4,
            hidden_width: nn::DEFAULT_HIDDEN_WIDTH,
            hidden_layers: nn::DEFAULT_HIDDEN_LAYERS,
            activation: Activation::Relu,
            augment: true,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructorNet<T> {
    net: Mlp<T>,
    obs_dim: usize,
    frozen: bool,
}

/// Maps a raw output to the clamped probability.
pub fn output_probability<T: Scalar>(f: T) -> T {
    clamp_probability(T::lit(0.5) * (T::one() + f.tanh()))
}

fn clamp_probability<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_FLOOR)).min(T::lit(1.0 - PROB_FLOOR))
}

/// `p` if `p >= 0.5`, else `0.5`.
pub fn only_dos_transform<T: Scalar>(p: T) -> T {
    let half = T::lit(0.5);
    if p >= half {
        p
    } else {
        half
    }
}

fn pair_inputs<T: Scalar>(s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array2<T>> {
    if s.dim() != s_next.dim() {
        return Err(Error::Shape(format!(
            "state batches differ: {:?} vs {:?}",
            s.dim(),
            s_next.dim()
        )));
    }
    ndarray::concatenate(ndarray::Axis(1), &[s, s_next]).map_err(|e| Error::Shape(e.to_string()))
}

/// Mean BCE over rows of `inputs`, with its gradient, for a given network.
///
/// Coordinates where the probability clamp is active get zero gradient.
pub fn bce_loss_and_grad<T: Scalar>(
    net: &Mlp<T>,
    inputs: ArrayView2<T>,
    targets: &[u8],
) -> Result<(T, MlpGrads<T>)> {
    let (out, cache) = net.forward(inputs)?;
    let n = T::lit(targets.len() as f64);
    let lo = T::lit(PROB_FLOOR);
    let hi = T::lit(1.0 - PROB_FLOOR);
    let mut loss = T::zero();
    let mut grad = Array2::zeros(out.raw_dim());
    for (i, &y) in targets.iter().enumerate() {
        let raw = T::lit(0.5) * (T::one() + out[[i, 0]].tanh());
        let p = raw.max(lo).min(hi);
        let yv = T::lit(y as f64);
        loss -= yv * p.ln() + (T::one() - yv) * (T::one() - p).ln();
        if raw > lo && raw < hi {
            grad[[i, 0]] = T::lit(2.0) * (p - yv) / n;
        }
    }
    Ok((loss / n, net.backward(&cache, grad.view())?))
}

impl<T: Scalar> InstructorNet<T> {
    /// Untrained, unfrozen network over `concat(s, s')`.
    pub fn new(obs_dim: usize, cfg: &InstructorConfig, seed: u64) -> Result<Self> {
        if obs_dim == 0 {
            return Err(Error::InvalidConfig("obs_dim must be positive".into()));
        }
        let sizes = nn::layer_sizes(2 * obs_dim, cfg.hidden_width, cfg.hidden_layers, 1);
        Ok(InstructorNet {
            net: Mlp::init(&sizes, cfg.activation, seed)?,
            obs_dim,
            frozen: false,
        })
    }

    pub fn from_mlp(net: Mlp<T>, frozen: bool) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() % 2 != 0 {
            return Err(Error::Shape(format!(
                "instruction network must map 2k inputs to 1 output, got {:?}",
                net.layer_sizes()
            )));
        }
        Ok(InstructorNet {
            obs_dim: net.input_dim() / 2,
            net,
            frozen,
        })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn fingerprint(&self) -> u64 {
        self.net.fingerprint()
    }

    pub fn predict(&self, s: &[T], s_next: &[T]) -> Result<T> {
        if s.len() != self.obs_dim || s_next.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "instructor expects states of dim {}, got {} and {}",
                self.obs_dim,
                s.len(),
                s_next.len()
            )));
        }
        let input: Vec<T> = s.iter().chain(s_next).copied().collect();
        Ok(output_probability(self.net.predict_one(&input)?[0]))
    }

    pub fn predict_batch(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array1<T>> {
        let out = self.net.predict(pair_inputs(s, s_next)?.view())?;
        Ok(out.column(0).mapv(output_probability))
    }

    /// Accuracy (with `p = 0.5` counted as class 1) and mean BCE.
    pub fn evaluate(&self, pairs: &[PairSample<T>]) -> Result<(f64, f64)> {
        if pairs.is_empty() {
            return Err(Error::Validation("cannot evaluate on zero pairs".into()));
        }
        let (inputs, targets) = stack_pairs(pairs, self.obs_dim)?;
        let out = self.net.predict(inputs.view())?;
        let mut correct = 0usize;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let p = output_probability(out[[i, 0]]).to_f64_lossy();
            if (p >= 0.5) == (y == 1) {
                correct += 1;
            }
            loss -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        let n = pairs.len() as f64;
        Ok((correct as f64 / n, loss / n))
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "{MAGIC} v{INSTRUCTOR_FORMAT_VERSION} obs_dim={} frozen={}",
            self.obs_dim, self.frozen
        )
        .map_err(|e| Error::io("<stream>", e))?;
        nn::write_mlp(&self.net, out)
    }

    pub fn read<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut header = String::new();
        input
            .read_line(&mut header)
            .map_err(|e| Error::io("<stream>", e))?;
        let fields: Vec<&str> = header.trim_end().split(' ').collect();
        if fields.first() != Some(&MAGIC) {
            return Err(Error::Version(format!("not an instructor file: {header:?}")));
        }
        if fields.get(1) != Some(&format!("v{INSTRUCTOR_FORMAT_VERSION}").as_str()) {
            return Err(Error::Version(format!(
                "unsupported instructor format {:?}",
                fields.get(1)
            )));
        }
        let mut obs_dim = None;
        let mut frozen = None;
        for f in &fields[2..] {
            match f.split_once('=') {
                Some(("obs_dim", v)) => obs_dim = v.parse::<usize>().ok(),
                Some(("frozen", v)) => frozen = v.parse::<bool>().ok(),
                _ => return Err(Error::Version(format!("unknown instructor field {f:?}"))),
            }
        }
        let (obs_dim, frozen) = obs_dim
            .zip(frozen)
            .ok_or_else(|| Error::Version("instructor header missing obs_dim or frozen".into()))?;
        let net = InstructorNet::from_mlp(nn::read_mlp(input)?, frozen)?;
        if net.obs_dim != obs_dim {
            return Err(Error::Shape(format!(
                "header obs_dim {obs_dim} does not match network input {}",
                net.obs_dim
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(file))
    }
}

fn stack_pairs<T: Scalar>(pairs: &[PairSample<T>], obs_dim: usize) -> Result<(Array2<T>, Vec<u8>)> {
    let mut inputs = Array2::zeros((pairs.len(), 2 * obs_dim));
    let mut targets = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        if p.s.len() != obs_dim || p.s_next.len() != obs_dim {
            return Err(Error::Shape(format!("pair {i} has wrong state dimension")));
        }
        for (j, &v) in p.s.iter().chain(&p.s_next).enumerate() {
            inputs[[i, j]] = v;
        }
        targets.push(p.y);
    }
    Ok((inputs, targets))
}

/// Trains on `pairs` and returns the frozen network.
///
/// Each epoch draws `min(batch_size, N)` distinct pairs (the whole set, in
/// order, when it fits) and takes one Adam step.
pub fn train_instructor<T: Scalar>(
    pairs: &[PairSample<T>],
    cfg: &InstructorConfig,
    seed: u64,
) -> Result<InstructorNet<T>> {
    if pairs.is_empty() {
        return Err(Error::Validation("no training pairs".into()));
    }
    let positives = pairs.iter().filter(|p| p.y == 1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::Validation(
            "training pairs contain a single label; classification is undefined".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 || cfg.noise_sigma < 0.0 {
        return Err(Error::InvalidConfig("instructor batch size and lr must be positive".into()));
    }
    let obs_dim = pairs[0].s.len();
    let (inputs, targets) = stack_pairs(pairs, obs_dim)?;

    let mut model = InstructorNet::new(obs_dim, cfg, derive_seed(seed, "instructor_init"))?;
    let mut state = AdamState::new(&model.net);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut batch_rng = rng_from_seed(derive_seed(seed, "instructor_batch"));
    let mut noise_rng = rng_from_seed(derive_seed(seed, "instructor_noise"));
    let n = pairs.len();
    let batch = cfg.batch_size.min(n);
    let sigma = T::lit(cfg.noise_sigma);

    for _ in 0..cfg.epochs {
        let rows: Vec<usize> = if batch == n {
            (0..n).collect()
        } else {
            index::sample(&mut batch_rng, n, batch).into_vec()
        };
        let mut x = inputs.select(ndarray::Axis(0), &rows);
        if cfg.augment && cfg.noise_sigma > 0.0 {
            x.mapv_inplace(|v| {
                let eps: f64 = StandardNormal.sample(&mut noise_rng);
                v + sigma * T::lit(eps)
            });
        }
        let y: Vec<u8> = rows.iter().map(|&i| targets[i]).collect();
        let (loss, grads) = bce_loss_and_grad(&model.net, x.view(), &y)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("instruction loss became non-finite".into()));
        }
        adam_step(&mut model.net, &grads, &mut state, &adam)?;
    }
    model.freeze();
    Ok(model)
}

/// Source of the instruction weight `p(s, s')`.
#[derive(Debug, Clone, PartialEq)]
pub enum Instructor<T> {
    Net(InstructorNet<T>),
    /// The same positive value for every pair.
    Constant(T),
}

impl<T: Scalar> Instructor<T> {
    pub fn constant(value: T) -> Result<Self> {
        if !(value > T::zero() && value.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "constant instructor value must be positive, got {value}"
            )));
        }
        Ok(Instructor::Constant(value))
    }

    pub fn predict(&self, s: &[T], s_next: &[T]) -> Result<T> {
        match self {
            Instructor::Net(net) => net.predict(s, s_next),
            Instructor::Constant(k) => Ok(*k),
        }
    }

    pub fn predict_batch(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array1<T>> {
        match self {
            Instructor::Net(net) => net.predict_batch(s, s_next),
            Instructor::Constant(k) => {
                if s.dim() != s_next.dim() {
                    return Err(Error::Shape("state batches differ".into()));
                }
                Ok(Array1::from_elem(s.nrows(), *k))
            }
        }
    }
}
