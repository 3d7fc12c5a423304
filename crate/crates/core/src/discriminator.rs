//! Skill discriminators over disjoint observation subspaces and the
//! intrinsic reward they induce.
//!
//! Head `i` sees only the channels in subset `i` of the assignment and
//! predicts the skill. The reward is
//! `r^S = (1/N_d) Σ_i log q_i(k | o^{d_i}) − log p(k)` with a uniform prior,
//! so `−log p(k) = log N_k`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{validate_subset, Channel, ChannelLayout, MotionObservation};
use crate::nets::{Adam, MlpSpec, Network};

/// Lower clamp on each head's skill probability inside the reward.
pub const MIN_SKILL_PROB: f64 = 1e-8;

/// Channel subsets, one per discriminator head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Channel>>", into = "Vec<Vec<Channel>>")]
pub struct DiscriminatorAssignment {
    subsets: Vec<Vec<Channel>>,
}

impl DiscriminatorAssignment {
    /// Validates that every subset is non-empty, duplicate-free and pairwise
    /// disjoint from the others.
    pub fn new(subsets: Vec<Vec<Channel>>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::Config("at least one discriminator is required".into()));
        }
        for (i, s) in subsets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Config(format!("discriminator {i} has no channels")));
            }
            validate_subset(s)?;
            for (j, other) in subsets[..i].iter().enumerate() {
                if let Some(c) = s.iter().find(|c| other.contains(c)) {
                    return Err(Error::Config(format!(
                        "discriminators {j} and {i} overlap on channel `{c}`"
                    )));
                }
            }
        }
        let subsets = subsets
            .into_iter()
            .map(|mut s| {
                s.sort();
                s
            })
            .collect();
        Ok(Self { subsets })
    }

    pub fn from_names(names: &[&[&str]]) -> Result<Self> {
        let subsets = names
            .iter()
            .map(|s| s.iter().map(|n| n.parse()).collect::<Result<Vec<Channel>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(subsets)
    }

    /// Three heads on `[v, ω]`, `[g]` and `[θ, θ̇]`.
    pub fn multi() -> Self {
        Self::new(vec![
            vec![Channel::LinVel, Channel::AngVel],
            vec![Channel::Gravity],
            vec![Channel::JointPos, Channel::JointVel],
        ])
        .expect("disjoint by construction")
    }

    /// A single head on the given channels.
    pub fn single(channels: &[Channel]) -> Result<Self> {
        Self::new(vec![channels.to_vec()])
    }

    pub fn subsets(&self) -> &[Vec<Channel>] {
        &self.subsets
    }

    pub fn num_heads(&self) -> usize {
        self.subsets.len()
    }

    pub fn widths(&self, layout: ChannelLayout) -> Vec<usize> {
        self.subsets.iter().map(|s| layout.subset_width(s)).collect()
    }

    /// Whether the union of subsets is the full motion observation.
    pub fn covers_all_channels(&self) -> bool {
        Channel::ALL
            .iter()
            .all(|c| self.subsets.iter().any(|s| s.contains(c)))
    }

    pub fn to_names(&self) -> Vec<Vec<String>> {
        self.subsets
            .iter()
            .map(|s| s.iter().map(|c| c.name().to_string()).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<Channel>>> for DiscriminatorAssignment {
    type Error = Error;
    fn try_from(v: Vec<Vec<Channel>>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DiscriminatorAssignment> for Vec<Vec<Channel>> {
    fn from(a: DiscriminatorAssignment) -> Self {
        a.subsets
    }
}

/// The default three-way split for any joint count.
pub fn default_assignment(_layout: ChannelLayout) -> DiscriminatorAssignment {
    DiscriminatorAssignment::multi()
}

/// One skill classifier restricted to a channel subset.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorHead {
    channels: Vec<Channel>,
    columns: Vec<usize>,
    net: Network,
}

impl DiscriminatorHead {
    pub fn new<R: Rng + ?Sized>(
        layout: ChannelLayout,
        channels: &[Channel],
        hidden: &[usize],
        num_skills: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let columns = subset_columns(layout, channels);
        let net = Network::new(MlpSpec::new(columns.len(), hidden, num_skills), rng, 1.0)?;
        Ok(Self {
            channels: channels.to_vec(),
            columns,
            net,
        })
    }

    pub fn zeroed(layout: ChannelLayout, channels: &[Channel], hidden: &[usize], num_skills: usize) -> Result<Self> {
        let columns = subset_columns(layout, channels);
        let net = Network::zeroed(MlpSpec::new(columns.len(), hidden, num_skills))?;
        Ok(Self {
            channels: channels.to_vec(),
            columns,
            net,
        })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn num_skills(&self) -> usize {
        self.net.spec().output_dim
    }

    /// Columns of the motion observation this head reads.
    pub fn select(&self, motion: ArrayView2<f64>) -> Array2<f64> {
        motion.select(Axis(1), &self.columns)
    }

    pub fn logits(&self, motion: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.select(motion);
        self.net.forward(x.view())
    }

    /// Log-softmax over skills for each row of `motion`.
    pub fn log_probs(&self, motion: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(log_softmax_rows(&self.logits(motion)?))
    }
}

fn subset_columns(layout: ChannelLayout, channels: &[Channel]) -> Vec<usize> {
    let mut cols = Vec::new();
    for c in Channel::ALL {
        if channels.contains(&c) {
            cols.extend(layout.span(c));
        }
    }
    cols
}

pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

/// Log-probabilities of every skill for a single observation.
pub fn skill_logprobs(head: &DiscriminatorHead, m: &MotionObservation) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, m.as_slice().len()), m.as_slice()).expect("row");
    Ok(head.log_probs(x)?.into_raw_vec_and_offset().0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorTraining {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Minibatch gradient steps per training iteration.
    pub updates_per_iteration: usize,
}

impl Default for DiscriminatorTraining {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            updates_per_iteration: 4,
        }
    }
}

/// Per-head outcome of one update step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadUpdate {
    pub loss: f64,
    pub accuracy: f64,
}

/// All heads plus their optimisers.
#[derive(Debug, Clone)]
pub struct DiscriminatorBank {
    layout: ChannelLayout,
    assignment: DiscriminatorAssignment,
    num_skills: usize,
    heads: Vec<DiscriminatorHead>,
    optimizers: Vec<Adam>,
}

impl DiscriminatorBank {
    pub fn new<R: Rng + ?Sized>(
        layout: ChannelLayout,
        assignment: DiscriminatorAssignment,
        hidden: &[usize],
        num_skills: usize,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_skills == 0 {
            return Err(Error::Config("skills.num_skills must be positive".into()));
        }
        let heads = assignment
            .subsets()
            .iter()
            .map(|s| DiscriminatorHead::new(layout, s, hidden, num_skills, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_heads(layout, assignment, num_skills, heads, learning_rate))
    }

    pub fn from_heads(
        layout: ChannelLayout,
        assignment: DiscriminatorAssignment,
        num_skills: usize,
        heads: Vec<DiscriminatorHead>,
        learning_rate: f64,
    ) -> Self {
        let optimizers = heads
            .iter()
            .map(|h| Adam::new(h.net().params().len(), learning_rate))
            .collect();
        Self {
            layout,
            assignment,
            num_skills,
            heads,
            optimizers,
        }
    }

    pub fn assignment(&self) -> &DiscriminatorAssignment {
        &self.assignment
    }

    pub fn heads(&self) -> &[DiscriminatorHead] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [DiscriminatorHead] {
        &mut self.heads
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    /// Intrinsic reward for each row of `motion` under its skill label.
    pub fn skill_reward_batch(&self, motion: ArrayView2<f64>, skills: &[usize]) -> Result<Vec<f64>> {
        skill_reward_batch(&self.heads, motion, skills, self.num_skills)
    }

    /// One cross-entropy gradient step per head. Heads are independent.
    pub fn update(&mut self, motion: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<HeadUpdate>> {
        if labels.is_empty() || motion.nrows() == 0 {
            return Err(Error::Training("discriminator update on an empty batch".into()));
        }
        if labels.len() != motion.nrows() {
            return Err(Error::Layout("labels and observations differ in count".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&k| k >= self.num_skills) {
            return Err(Error::Domain(format!("skill label {bad} out of range")));
        }
        let mut out = Vec::with_capacity(self.heads.len());
        for (head, opt) in self.heads.iter_mut().zip(&mut self.optimizers) {
            let (update, grads) = cross_entropy_grad(head, motion, labels)?;
            opt.step(head.net.params_mut(), &grads);
            out.push(update);
        }
        Ok(out)
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizers.first().map(|o| o.lr).unwrap_or(0.0)
    }
}

/// Loss, accuracy and parameter gradient of mean cross-entropy for one head.
pub fn cross_entropy_grad(
    head: &DiscriminatorHead,
    motion: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(HeadUpdate, Vec<f64>)> {
    let x = head.select(motion);
    let tape = head.net.forward_train(x.view())?;
    let logp = log_softmax_rows(tape.output());
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut grad_logits = logp.mapv(f64::exp);
    for (s, &k) in labels.iter().enumerate() {
        let row = logp.row(s);
        loss -= row[k];
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if argmax == k {
            correct += 1;
        }
        grad_logits[[s, k]] -= 1.0;
    }
    grad_logits /= b;
    let mut grads = vec![0.0; head.net.params().len()];
    head.net.backward(&tape, grad_logits.view(), &mut grads);
    if !loss.is_finite() {
        return Err(Error::Numeric("discriminator loss is not finite".into()));
    }
    Ok((
        HeadUpdate {
            loss: loss / b,
            accuracy: correct as f64 / b,
        },
        grads,
    ))
}

/// Classification accuracy of one head on a labelled batch.
pub fn accuracy(head: &DiscriminatorHead, motion: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let logits = head.logits(motion)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &k)| {
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row[k] == best
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn skill_reward_batch(
    heads: &[DiscriminatorHead],
    motion: ArrayView2<f64>,
    skills: &[usize],
    num_skills: usize,
) -> Result<Vec<f64>> {
    if skills.len() != motion.nrows() {
        return Err(Error::Layout("skills and observations differ in count".into()));
    }
    if let Some(&bad) = skills.iter().find(|&&k| k >= num_skills) {
        return Err(Error::Domain(format!(
            "skill index {bad} out of range for {num_skills} skills"
        )));
    }
    let floor = MIN_SKILL_PROB.ln();
    let mut total = vec![0.0; skills.len()];
    for head in heads {
        let logp = head.log_probs(motion)?;
        for (s, &k) in skills.iter().enumerate() {
            total[s] += logp[[s, k]].max(floor);
        }
    }
    let nd = heads.len() as f64;
    let log_nk = (num_skills as f64).ln();
    Ok(total.into_iter().map(|t| t / nd + log_nk).collect())
}

/// Intrinsic reward of a single observation under skill `k`.
pub fn skill_reward(
    heads: &[DiscriminatorHead],
    m: &MotionObservation,
    k: usize,
    num_skills: usize,
) -> Result<f64> {
    let x = ArrayView2::from_shape((1, m.as_slice().len()), m.as_slice()).expect("row");
    Ok(skill_reward_batch(heads, x, &[k], num_skills)?[0])
}
