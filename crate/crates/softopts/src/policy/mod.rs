//! Hierarchical soft-option policies.
//!
//! Per task: a termination head q^T(b|s, z_prev), a master head q^H(z|s), an
//! intra-option head q^L(a|s, z) and a value head V(s, z_prev). Shared across
//! tasks: the encoder, the intra-option prior p^L(a|s, z) and the termination
//! prior p^T(b|s, z_prev); the master prior is fixed uniform. All heads are
//! single linear layers over a shared option-conditioned latent: the option
//! one-hot passes through an embedding layer whose output is concatenated to
//! the state embedding before the last encoder layer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::heads::{
    argmax, bernoulli_log_prob, log_softmax, logit, sample_bernoulli, sample_categorical, sigmoid,
    softmax,
};
use crate::nn::mlp::{Activation, Mlp, MlpSpec};
use crate::nn::store::{Init, ParamStore, TensorId};
use crate::nn::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Finite stand-in for log 0, keeping arithmetic total.
pub const LOG_ZERO: f64 = -1e30;

/// Network architecture for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    /// Number of learnable options m.
    pub option_count: usize,
    /// Encoder widths; the last entry is the latent width produced by the
    /// fuse layer (the layer that sees the option embedding).
    pub encoder_hidden: Vec<usize>,
    pub option_embed_dim: usize,
    pub activation: Activation,
    /// Init gain for head layers (0 gives exactly uniform initial policies).
    pub head_gain: f64,
    /// Expose each primitive action to the master as an extra
    /// always-terminating pseudo-option.
    pub primitive_options: bool,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.option_count == 0 {
            return Err(Error::config("option_count must be >= 1"));
        }
        if self.encoder_hidden.is_empty() {
            return Err(Error::config("encoder needs at least one hidden layer"));
        }
        if self.obs_dim == 0 || self.action_count == 0 || self.option_embed_dim == 0 {
            return Err(Error::config("all architecture widths must be >= 1"));
        }
        Ok(())
    }

    /// Number of choices available to the master head.
    pub fn master_choices(&self) -> usize {
        self.option_count
            + if self.primitive_options {
                self.action_count
            } else {
                0
            }
    }

    /// Embedding rows: one per master choice plus the sentinel.
    pub fn condition_rows(&self) -> usize {
        self.master_choices() + 1
    }

    /// Condition index meaning "no previous option"; also used by the master
    /// head, which conditions on the state alone.
    pub fn sentinel(&self) -> usize {
        self.master_choices()
    }

    pub fn latent_width(&self) -> usize {
        *self.encoder_hidden.last().unwrap()
    }

    fn trunk_widths(&self) -> &[usize] {
        &self.encoder_hidden[..self.encoder_hidden.len() - 1]
    }

    fn trunk_out(&self) -> usize {
        self.trunk_widths().last().copied().unwrap_or(self.obs_dim)
    }

    /// True for a condition index that denotes a primitive pseudo-option.
    pub fn is_primitive(&self, z: usize) -> bool {
        z >= self.option_count && z < self.master_choices()
    }
}

/// The shared encoder: state trunk, option embedding, and the fuse layer
/// combining them into the latent all heads read. Shared across tasks and
/// between prior and posterior heads.
#[derive(Debug, Clone)]
pub struct Encoder {
    arch: ArchConfig,
    trunk: Option<Mlp>,
    fuse: Mlp,
    emb_w: TensorId,
    emb_b: TensorId,
}

impl Encoder {
    fn trunk_spec(arch: &ArchConfig) -> Option<MlpSpec> {
        let widths = arch.trunk_widths();
        if widths.is_empty() {
            return None;
        }
        Some(MlpSpec {
            input: arch.obs_dim,
            hidden: widths[..widths.len() - 1].to_vec(),
            activation: arch.activation,
            output: *widths.last().unwrap(),
            activate_output: true,
        })
    }

    fn fuse_spec(arch: &ArchConfig) -> MlpSpec {
        MlpSpec {
            input: arch.trunk_out() + arch.option_embed_dim,
            hidden: Vec::new(),
            activation: arch.activation,
            output: arch.latent_width(),
            activate_output: true,
        }
    }

    pub fn register(store: &mut ParamStore, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let trunk = match Self::trunk_spec(arch) {
            Some(spec) => Some(Mlp::register(store, "enc.trunk", spec, 1.0, rng)?),
            None => None,
        };
        let fuse = Mlp::register(store, "enc.fuse", Self::fuse_spec(arch), 1.0, rng)?;
        let emb_w = store.register(
            "enc.emb.w",
            &[arch.condition_rows(), arch.option_embed_dim],
            Init::Orthogonal { gain: 1.0 },
            rng,
        )?;
        let emb_b = store.register("enc.emb.b", &[arch.option_embed_dim], Init::Zeros, rng)?;
        Ok(Encoder {
            arch: arch.clone(),
            trunk,
            fuse,
            emb_w,
            emb_b,
        })
    }

    pub fn bind(store: &ParamStore, arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let trunk = match Self::trunk_spec(arch) {
            Some(spec) => Some(Mlp::bind(store, "enc.trunk", spec)?),
            None => None,
        };
        let fuse = Mlp::bind(store, "enc.fuse", Self::fuse_spec(arch))?;
        Ok(Encoder {
            arch: arch.clone(),
            trunk,
            fuse,
            emb_w: store.id("enc.emb.w")?,
            emb_b: store.id("enc.emb.b")?,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut ids: Vec<TensorId> = Vec::new();
        if let Some(t) = &self.trunk {
            ids.extend(t.tensor_ids());
        }
        ids.extend(self.fuse.tensor_ids());
        ids.push(self.emb_w);
        ids.push(self.emb_b);
        ids
    }

    fn embed_row(&self, store: &ParamStore, cond: usize) -> Vec<f64> {
        let dim = self.arch.option_embed_dim;
        let w = store.data(self.emb_w);
        let b = store.data(self.emb_b);
        let mut out = w[cond * dim..(cond + 1) * dim].to_vec();
        for (o, bb) in out.iter_mut().zip(b.iter()) {
            *o += bb;
        }
        out
    }
}

/// Lazily computed per-state features (inference path): the trunk output is
/// shared, latents are cached per condition index.
pub struct Features<'a> {
    enc: &'a Encoder,
    store: &'a ParamStore,
    pen: Vec<f64>,
    latents: Vec<Option<Vec<f64>>>,
}

impl<'a> Features<'a> {
    pub fn new(enc: &'a Encoder, store: &'a ParamStore, obs: &[f64]) -> Result<Self> {
        let pen = match &enc.trunk {
            Some(trunk) => trunk.forward(store, obs)?,
            None => {
                if obs.len() != enc.arch.obs_dim {
                    return Err(Error::config(format!(
                        "observation width {} does not match arch obs_dim {}",
                        obs.len(),
                        enc.arch.obs_dim
                    )));
                }
                obs.to_vec()
            }
        };
        Ok(Features {
            enc,
            store,
            pen,
            latents: vec![None; enc.arch.condition_rows()],
        })
    }

    pub fn latent(&mut self, cond: usize) -> Result<&[f64]> {
        if self.latents[cond].is_none() {
            let mut input = self.pen.clone();
            input.extend(self.enc.embed_row(self.store, cond));
            self.latents[cond] = Some(self.enc.fuse.forward(self.store, &input)?);
        }
        Ok(self.latents[cond].as_deref().unwrap())
    }
}

/// Per-state features on the tape (training path).
pub struct TapeFeatures<'a> {
    enc: &'a Encoder,
    pen: NodeId,
    latents: Vec<Option<NodeId>>,
}

impl<'a> TapeFeatures<'a> {
    pub fn new(enc: &'a Encoder, tape: &mut Tape, store: &ParamStore, obs: &[f64]) -> Result<Self> {
        let obs_node = tape.constant(obs.to_vec());
        let pen = match &enc.trunk {
            Some(trunk) => trunk.forward_tape(tape, store, obs_node)?,
            None => obs_node,
        };
        Ok(TapeFeatures {
            enc,
            pen,
            latents: vec![None; enc.arch.condition_rows()],
        })
    }

    pub fn latent(&mut self, tape: &mut Tape, store: &ParamStore, cond: usize) -> Result<NodeId> {
        if let Some(n) = self.latents[cond] {
            return Ok(n);
        }
        let emb = tape.embed(store, self.enc.emb_w, self.enc.emb_b, cond);
        let joined = tape.concat(self.pen, emb);
        let latent = self.enc.fuse.forward_tape(tape, store, joined)?;
        self.latents[cond] = Some(latent);
        Ok(latent)
    }
}

/// Task-specific heads.
#[derive(Debug, Clone)]
pub struct PosteriorPolicy {
    pub task_index: usize,
    pub master: Mlp,
    pub intra: Mlp,
    pub term: Mlp,
    pub value: Mlp,
}

impl PosteriorPolicy {
    pub fn prefix(task_index: usize) -> String {
        format!("task{task_index}")
    }

    pub fn register(
        store: &mut ParamStore,
        arch: &ArchConfig,
        task_index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let p = Self::prefix(task_index);
        let latent = arch.latent_width();
        let master = Mlp::register(
            store,
            &format!("{p}.master"),
            MlpSpec::head(latent, arch.master_choices()),
            arch.head_gain,
            rng,
        )?;
        let intra = Mlp::register(
            store,
            &format!("{p}.intra"),
            MlpSpec::head(latent, arch.action_count),
            arch.head_gain,
            rng,
        )?;
        let term = Mlp::register(
            store,
            &format!("{p}.term"),
            MlpSpec::head(latent, 1),
            arch.head_gain,
            rng,
        )?;
        let value = Mlp::register(
            store,
            &format!("{p}.value"),
            MlpSpec::head(latent, 1),
            arch.head_gain,
            rng,
        )?;
        Ok(PosteriorPolicy {
            task_index,
            master,
            intra,
            term,
            value,
        })
    }

    pub fn bind(store: &ParamStore, arch: &ArchConfig, task_index: usize) -> Result<Self> {
        let p = Self::prefix(task_index);
        let latent = arch.latent_width();
        Ok(PosteriorPolicy {
            task_index,
            master: Mlp::bind(store, &format!("{p}.master"), MlpSpec::head(latent, arch.master_choices()))?,
            intra: Mlp::bind(store, &format!("{p}.intra"), MlpSpec::head(latent, arch.action_count))?,
            term: Mlp::bind(store, &format!("{p}.term"), MlpSpec::head(latent, 1))?,
            value: Mlp::bind(store, &format!("{p}.value"), MlpSpec::head(latent, 1))?,
        })
    }

    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut ids: Vec<TensorId> = self.master.tensor_ids().collect();
        ids.extend(self.intra.tensor_ids());
        ids.extend(self.term.tensor_ids());
        ids.extend(self.value.tensor_ids());
        ids
    }
}

/// Cross-task parameters: learned intra-option and termination priors, the
/// fixed uniform master prior, and the fixed Bernoulli termination prior used
/// while options are being learned.
#[derive(Debug, Clone)]
pub struct SharedPrior {
    pub intra: Mlp,
    pub term: Mlp,
    /// Fixed Bernoulli termination prior: p(terminate) = 1 - alpha.
    pub alpha: f64,
}

impl SharedPrior {
    pub fn register(
        store: &mut ParamStore,
        arch: &ArchConfig,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let latent = arch.latent_width();
        let intra = Mlp::register(
            store,
            "prior.intra",
            MlpSpec::head(latent, arch.action_count),
            arch.head_gain,
            rng,
        )?;
        let term = Mlp::register(store, "prior.term", MlpSpec::head(latent, 1), 0.0, rng)?;
        // Start the learned termination prior at the fixed Bernoulli so a
        // fresh posterior initialized from it terminates with rate 1 - alpha.
        let bias = store.id("prior.term.l0.b")?;
        store.tensor_mut(bias).data[0] = logit(1.0 - alpha);
        Ok(SharedPrior { intra, term, alpha })
    }

    pub fn bind(store: &ParamStore, arch: &ArchConfig, alpha: f64) -> Result<Self> {
        let latent = arch.latent_width();
        Ok(SharedPrior {
            intra: Mlp::bind(store, "prior.intra", MlpSpec::head(latent, arch.action_count))?,
            term: Mlp::bind(store, "prior.term", MlpSpec::head(latent, 1))?,
            alpha,
        })
    }

    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut ids: Vec<TensorId> = self.intra.tensor_ids().collect();
        ids.extend(self.term.tensor_ids());
        ids
    }

    /// log p^T(b) of the fixed Bernoulli training prior.
    pub fn fixed_term_log_prob(&self, terminate: bool) -> f64 {
        if terminate {
            (1.0 - self.alpha).ln()
        } else {
            self.alpha.ln()
        }
    }
}

/// Tensor-name predicate for everything shared across tasks (encoder and
/// prior heads). These are the parameters frozen at transfer time.
pub fn is_shared_tensor(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("prior.")
}

pub fn shared_tensor_names(store: &ParamStore) -> Vec<String> {
    let mut names: Vec<String> = store
        .ids()
        .map(|id| store.tensor(id).name().to_string())
        .filter(|n| is_shared_tensor(n))
        .collect();
    names.sort();
    names
}

/// Which distribution the termination log-ratio of the regularized reward
/// compares q^T against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermPrior {
    /// The fixed Bernoulli(1 - alpha) prior, used while learning options.
    FixedBernoulli,
    /// The distilled p^T, used at transfer time.
    Learned,
}

/// Sampling-time behavior switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMode {
    pub term_prior: TermPrior,
    /// One-option degenerate hierarchy: the master and termination levels
    /// are constant and contribute no log-probabilities or losses.
    pub distral: bool,
}

impl PolicyMode {
    pub fn training() -> Self {
        PolicyMode {
            term_prior: TermPrior::FixedBernoulli,
            distral: false,
        }
    }

    pub fn transfer() -> Self {
        PolicyMode {
            term_prior: TermPrior::Learned,
            distral: false,
        }
    }

    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        if self.distral && arch.option_count != 1 {
            return Err(Error::config(format!(
                "the one-option degenerate mode needs option_count = 1, got {}",
                arch.option_count
            )));
        }
        Ok(())
    }
}

/// One sampled hierarchy decision with every log-probability the losses need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    pub episode_start: bool,
    /// `None` at episode starts (sentinel).
    pub prev_option: Option<usize>,
    pub terminate: bool,
    pub option: usize,
    pub action: usize,
    pub log_q_term: f64,
    pub log_q_master: f64,
    pub log_q_action: f64,
    pub log_p_term: f64,
    pub log_p_master: f64,
    pub log_p_action: f64,
    pub value: f64,
}

fn check_prev(arch: &ArchConfig, episode_start: bool, z_prev: Option<usize>) -> Result<usize> {
    match (episode_start, z_prev) {
        (true, None) => Ok(arch.sentinel()),
        (false, Some(z)) if z < arch.master_choices() => Ok(z),
        (false, Some(z)) => Err(Error::usage(format!(
            "previous option {z} out of range for {} master choices",
            arch.master_choices()
        ))),
        (true, Some(_)) => Err(Error::usage(
            "episode start must carry the sentinel previous option",
        )),
        (false, None) => Err(Error::usage("sentinel previous option after the first step")),
    }
}

/// Samples one step of the hierarchical posterior: terminate (forced at
/// episode starts), select an option (kept when not terminating), then a
/// primitive action. Caches all six log-probabilities and the value estimate.
#[allow(clippy::too_many_arguments)]
pub fn act(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    prior: &SharedPrior,
    mode: PolicyMode,
    obs: &[f64],
    z_prev: Option<usize>,
    episode_start: bool,
    rng: &mut ChaCha8Rng,
) -> Result<StepDecision> {
    let arch = enc.arch();
    mode.validate(arch)?;
    let cond_prev = check_prev(arch, episode_start, z_prev)?;
    let mut fc = Features::new(enc, store, obs)?;

    let value = posterior.value.forward(store, fc.latent(cond_prev)?)?[0];

    // Termination level.
    let forced_term = episode_start || arch.is_primitive(cond_prev);
    let (terminate, log_q_term, log_p_term) = if mode.distral {
        (episode_start, 0.0, 0.0)
    } else if forced_term {
        (true, 0.0, 0.0)
    } else {
        let tl = posterior.term.forward(store, fc.latent(cond_prev)?)?[0];
        let b = sample_bernoulli(sigmoid(tl), rng);
        let lq = bernoulli_log_prob(tl, b);
        let lp = match mode.term_prior {
            TermPrior::FixedBernoulli => prior.fixed_term_log_prob(b),
            TermPrior::Learned => {
                let pl = prior.term.forward(store, fc.latent(cond_prev)?)?[0];
                bernoulli_log_prob(pl, b)
            }
        };
        (b, lq, lp)
    };

    // Master level.
    let (option, log_q_master, log_p_master) = if mode.distral {
        (0, 0.0, 0.0)
    } else if terminate {
        let logits = posterior.master.forward(store, fc.latent(arch.sentinel())?)?;
        let z = sample_categorical(&logits, rng);
        let lq = log_softmax(&logits)[z];
        let lp = -(arch.master_choices() as f64).ln();
        (z, lq, lp)
    } else {
        (cond_prev, 0.0, 0.0)
    };

    // Action level.
    let (action, log_q_action, log_p_action) = if arch.is_primitive(option) {
        (option - arch.option_count, 0.0, 0.0)
    } else {
        let latent = fc.latent(option)?;
        let q_logits = posterior.intra.forward(store, latent)?;
        let p_logits = prior.intra.forward(store, latent)?;
        let a = sample_categorical(&q_logits, rng);
        (a, log_softmax(&q_logits)[a], log_softmax(&p_logits)[a])
    };

    Ok(StepDecision {
        episode_start,
        prev_option: z_prev,
        terminate,
        option,
        action,
        log_q_term,
        log_q_master,
        log_q_action,
        log_p_term,
        log_p_master,
        log_p_action,
        value,
    })
}

/// Greedy counterpart of [`act`]: argmax at every level. Used for evaluation.
pub fn act_greedy(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    mode: PolicyMode,
    obs: &[f64],
    z_prev: Option<usize>,
    episode_start: bool,
) -> Result<(bool, usize, usize)> {
    let arch = enc.arch();
    let cond_prev = check_prev(arch, episode_start, z_prev)?;
    let mut fc = Features::new(enc, store, obs)?;
    let forced_term = episode_start || arch.is_primitive(cond_prev);
    let terminate = if mode.distral {
        episode_start
    } else if forced_term {
        true
    } else {
        posterior.term.forward(store, fc.latent(cond_prev)?)?[0] > 0.0
    };
    let option = if mode.distral {
        0
    } else if terminate {
        argmax(&posterior.master.forward(store, fc.latent(arch.sentinel())?)?)
    } else {
        cond_prev
    };
    let action = if arch.is_primitive(option) {
        option - arch.option_count
    } else {
        argmax(&posterior.intra.forward(store, fc.latent(option)?)?)
    };
    Ok((terminate, option, action))
}

/// Greedy rollout of one option prior: always continue with the given option
/// and take the prior's argmax action. Used to inspect what a learned option
/// does on its own.
pub fn prior_option_action(
    store: &ParamStore,
    enc: &Encoder,
    prior: &SharedPrior,
    obs: &[f64],
    option: usize,
) -> Result<usize> {
    let mut fc = Features::new(enc, store, obs)?;
    Ok(argmax(&prior.intra.forward(store, fc.latent(option)?)?))
}

/// Exact log q(a, z, b | s, z_prev) of the joint posterior factorization.
/// Inconsistent triples (continuing with a different option) return
/// [`LOG_ZERO`].
#[allow(clippy::too_many_arguments)]
pub fn joint_log_prob(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    mode: PolicyMode,
    obs: &[f64],
    z_prev: Option<usize>,
    terminate: bool,
    option: usize,
    action: usize,
) -> Result<f64> {
    let arch = enc.arch();
    mode.validate(arch)?;
    let episode_start = z_prev.is_none();
    let cond_prev = check_prev(arch, episode_start, z_prev)?;
    if option >= arch.master_choices() {
        return Err(Error::usage(format!("option {option} out of range")));
    }
    if action >= arch.action_count {
        return Err(Error::usage(format!("action {action} out of range")));
    }
    let mut fc = Features::new(enc, store, obs)?;

    let mut total = 0.0;
    let forced_term = episode_start || arch.is_primitive(cond_prev);
    if mode.distral {
        if terminate != episode_start {
            return Ok(LOG_ZERO);
        }
    } else if forced_term {
        if !terminate {
            return Ok(LOG_ZERO);
        }
    } else {
        let tl = posterior.term.forward(store, fc.latent(cond_prev)?)?[0];
        total += bernoulli_log_prob(tl, terminate);
    }

    if terminate {
        if !mode.distral {
            let logits = posterior.master.forward(store, fc.latent(arch.sentinel())?)?;
            total += log_softmax(&logits)[option];
        }
    } else if option != cond_prev {
        // Continuing is a delta on the previous option.
        return Ok(LOG_ZERO);
    }

    if arch.is_primitive(option) {
        if action != option - arch.option_count {
            return Ok(LOG_ZERO);
        }
    } else {
        let logits = posterior.intra.forward(store, fc.latent(option)?)?;
        total += log_softmax(&logits)[action];
    }
    Ok(total)
}

/// Initializes a task's posterior from the shared prior: intra-option and
/// termination heads are copied, master and value heads are freshly drawn.
pub fn init_posterior_from_prior(
    store: &mut ParamStore,
    arch: &ArchConfig,
    prior: &SharedPrior,
    posterior: &PosteriorPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for (src, dst) in prior.intra.tensor_ids().zip(posterior.intra.tensor_ids()) {
        store.copy_values(src, dst)?;
    }
    for (src, dst) in prior.term.tensor_ids().zip(posterior.term.tensor_ids()) {
        store.copy_values(src, dst)?;
    }
    reinit_head(store, &posterior.master, arch.head_gain, rng);
    reinit_head(store, &posterior.value, arch.head_gain, rng);
    Ok(())
}

/// Fresh orthogonal weights / zero biases for a head (zero weights when the
/// gain is zero).
pub fn reinit_head(store: &mut ParamStore, head: &Mlp, gain: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<TensorId> = head.tensor_ids().collect();
    for id in ids {
        let is_matrix = store.tensor(id).shape().len() == 2;
        if is_matrix && gain != 0.0 {
            store.reinit(id, Init::Orthogonal { gain }, rng);
        } else {
            store.reinit(id, Init::Zeros, rng);
        }
    }
}

/// Posterior master probabilities q^H(. | s) at one state (no gradient).
pub fn master_probabilities(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    obs: &[f64],
) -> Result<Vec<f64>> {
    let mut fc = Features::new(enc, store, obs)?;
    let logits = posterior.master.forward(store, fc.latent(enc.arch().sentinel())?)?;
    Ok(softmax(&logits))
}

/// Per-step tape nodes used by the losses. Absent entries correspond to
/// forced or degenerate factors that carry no gradient.
pub struct StepNodes {
    pub log_q_term: Option<NodeId>,
    pub log_q_master: Option<NodeId>,
    pub log_q_action: Option<NodeId>,
    pub value: NodeId,
    pub log_p_action: Option<NodeId>,
    /// log p^T(terminate | s, z_prev) and log p^T(continue | s, z_prev),
    /// for the termination-distillation cross-entropy.
    pub log_p_term_true: Option<NodeId>,
    pub log_p_term_false: Option<NodeId>,
}

/// Rebuilds the differentiable pieces of one recorded step on the tape.
/// When the parameters have not changed since acting, the recomputed
/// log-probabilities are bit-identical to the cached ones.
#[allow(clippy::too_many_arguments)]
pub fn step_nodes(
    tape: &mut Tape,
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    prior: &SharedPrior,
    mode: PolicyMode,
    obs: &[f64],
    decision: &StepDecision,
) -> Result<StepNodes> {
    let arch = enc.arch();
    let cond_prev = check_prev(arch, decision.episode_start, decision.prev_option)?;
    let mut tf = TapeFeatures::new(enc, tape, store, obs)?;

    let lat_prev = tf.latent(tape, store, cond_prev)?;
    let v_vec = posterior.value.forward_tape(tape, store, lat_prev)?;
    let value = tape.pick(v_vec, 0);

    let forced_term = decision.episode_start || arch.is_primitive(cond_prev) || mode.distral;
    let (log_q_term, log_p_term_true, log_p_term_false) = if forced_term {
        (None, None, None)
    } else {
        let tq = posterior.term.forward_tape(tape, store, lat_prev)?;
        let tq = tape.pick(tq, 0);
        let lq = tape.log_sigmoid(tq, !decision.terminate);
        let tp = prior.term.forward_tape(tape, store, lat_prev)?;
        let tp = tape.pick(tp, 0);
        let lp_true = tape.log_sigmoid(tp, false);
        let lp_false = tape.log_sigmoid(tp, true);
        (Some(lq), Some(lp_true), Some(lp_false))
    };

    let log_q_master = if !mode.distral && decision.terminate {
        let lat_null = tf.latent(tape, store, arch.sentinel())?;
        let logits = posterior.master.forward_tape(tape, store, lat_null)?;
        Some(tape.log_softmax_pick(logits, decision.option))
    } else {
        None
    };

    let (log_q_action, log_p_action) = if arch.is_primitive(decision.option) {
        (None, None)
    } else {
        let lat_z = tf.latent(tape, store, decision.option)?;
        let q_logits = posterior.intra.forward_tape(tape, store, lat_z)?;
        let lq = tape.log_softmax_pick(q_logits, decision.action);
        let p_logits = prior.intra.forward_tape(tape, store, lat_z)?;
        let lp = tape.log_softmax_pick(p_logits, decision.action);
        (Some(lq), Some(lp))
    };

    Ok(StepNodes {
        log_q_term,
        log_q_master,
        log_q_action,
        value,
        log_p_action,
        log_p_term_true,
        log_p_term_false,
    })
}
