//! Segmentation gate: a stacked LSTM over `s_t = [x_t ‖ g_t ‖ a_{t-1}]`
//! followed by an affine map and a two-way softmax giving
//! `π_t = (P(segment), P(pass))`.
//!
//! The gate state runs through the whole utterance; only the encoder and
//! decoder restart at boundaries. The action before the first frame is
//! taken to be `Segment`.

use rand::{Rng, RngCore};

use super::types::{greedy, sample, Action, ActionSequence, PolicyOutput};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gas::GasSequence;
use crate::numeric::{softmax2, Linear, LstmStack, Matrix, Parameters, StackStep};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationGate {
    pub rnn: LstmStack,
    pub policy: Linear,
}

/// Forward record of one pass of the gate over an utterance.
#[derive(Debug, Clone)]
pub struct GateTrace {
    steps: Vec<StackStep>,
    inputs: Vec<Vec<f64>>,
    probs: Vec<[f64; 2]>,
}

impl GateTrace {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[[f64; 2]] {
        &self.probs
    }

    pub fn policy_output(&self) -> PolicyOutput {
        let rows: Vec<Vec<f64>> = self.probs.iter().map(|p| p.to_vec()).collect();
        PolicyOutput {
            probs: Matrix::from_rows(&rows).expect("finite probabilities"),
        }
    }

    /// `log π_t(a_t)` for every frame.
    pub fn log_probs(&self, actions: &[Action]) -> Vec<f64> {
        self.probs
            .iter()
            .zip(actions)
            .map(|(p, a)| p[a.index()].ln())
            .collect()
    }
}

/// Actions taken in one pass plus the trace needed to differentiate them.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub actions: ActionSequence,
    pub trace: GateTrace,
}

impl SegmentationGate {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        gas_dim: usize,
        hidden_dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let input = feature_dim + gas_dim + 1;
        let rnn = LstmStack::new(input, hidden_dim, layers, rng);
        let policy = Linear::new(rnn.output_dim(input), 2, rng);
        Self { rnn, policy }
    }

    pub fn zeros(feature_dim: usize, gas_dim: usize, hidden_dim: usize, layers: usize) -> Self {
        let input = feature_dim + gas_dim + 1;
        let rnn = LstmStack::zeros(input, hidden_dim, layers);
        let policy = Linear::zeros(rnn.output_dim(input), 2);
        Self { rnn, policy }
    }

    pub fn input_dim(&self) -> usize {
        match self.rnn.layers.first() {
            Some(l) => l.input_dim(),
            None => self.policy.input_dim(),
        }
    }

    fn check(&self, f: &FeatureMatrix, g: &GasSequence) -> Result<()> {
        if g.len() != f.len() {
            return Err(Error::shape("gate GAS rows", f.len(), g.len()));
        }
        if f.dim() + g.dim() + 1 != self.input_dim() {
            return Err(Error::shape(
                "gate state",
                self.input_dim(),
                format!("{} features + {} GAS + 1 action", f.dim(), g.dim()),
            ));
        }
        Ok(())
    }

    fn state_input(f: &FeatureMatrix, g: &GasSequence, t: usize, prev: Action) -> Vec<f64> {
        let mut s = Vec::with_capacity(f.dim() + g.dim() + 1);
        s.extend_from_slice(f.frame(t));
        s.extend_from_slice(g.frame(t));
        s.push(prev.as_input());
        s
    }

    fn step(
        &self,
        state: &[crate::numeric::LstmState],
        input: Vec<f64>,
    ) -> (StackStep, Vec<f64>, [f64; 2]) {
        let step = self.rnn.forward(state, &input);
        let logits = if step.steps.is_empty() {
            self.policy.forward(&input)
        } else {
            self.policy.forward(step.top())
        };
        let p = softmax2(logits[0], logits[1]);
        (step, input, p)
    }

    /// Runs the gate with the supplied actions fed back as `a_{t-1}`.
    /// `actions` may be shorter than the utterance: the result then covers
    /// frames `1..=actions.len() + 1` (capped at `T`).
    pub fn forward(&self, f: &FeatureMatrix, g: &GasSequence, actions: &[Action]) -> Result<GateTrace> {
        self.check(f, g)?;
        let frames = (actions.len() + 1).min(f.len());
        let mut state = self.rnn.initial_state();
        let mut trace = GateTrace {
            steps: Vec::with_capacity(frames),
            inputs: Vec::with_capacity(frames),
            probs: Vec::with_capacity(frames),
        };
        let mut prev = Action::Segment;
        for t in 0..frames {
            let (step, input, p) = self.step(&state, Self::state_input(f, g, t, prev));
            state = step.states();
            trace.steps.push(step);
            trace.inputs.push(input);
            trace.probs.push(p);
            if let Some(&a) = actions.get(t) {
                prev = a;
            }
        }
        Ok(trace)
    }

    /// Policy rows for the frames reachable from `prev_actions`.
    pub fn policy_output(
        &self,
        f: &FeatureMatrix,
        g: &GasSequence,
        prev_actions: &[Action],
    ) -> Result<PolicyOutput> {
        Ok(self.forward(f, g, prev_actions)?.policy_output())
    }

    /// Decides actions frame by frame, feeding each decision into the next
    /// gate state. `sampler = None` decodes greedily.
    pub fn rollout(
        &self,
        f: &FeatureMatrix,
        g: &GasSequence,
        mut sampler: Option<&mut dyn RngCore>,
    ) -> Result<Rollout> {
        self.check(f, g)?;
        let t_len = f.len();
        let mut state = self.rnn.initial_state();
        let mut actions = Vec::with_capacity(t_len);
        let mut trace = GateTrace {
            steps: Vec::with_capacity(t_len),
            inputs: Vec::with_capacity(t_len),
            probs: Vec::with_capacity(t_len),
        };
        let mut prev = Action::Segment;
        for t in 0..t_len {
            let (step, input, p) = self.step(&state, Self::state_input(f, g, t, prev));
            let a = match sampler.as_deref_mut() {
                Some(rng) => sample(&p, rng),
                None => greedy(&p),
            };
            state = step.states();
            trace.steps.push(step);
            trace.inputs.push(input);
            trace.probs.push(p);
            actions.push(a);
            prev = a;
        }
        Ok(Rollout { actions, trace })
    }

    /// Accumulates into `grads` the gradient of `Σ_t coeff_t · log π_t(a_t)`.
    pub fn log_prob_backward(&self, trace: &GateTrace, actions: &[Action], coeffs: &[f64], grads: &mut SegmentationGate) {
        let mut carry = self.rnn.zero_carry();
        for t in (0..trace.len()).rev() {
            let p = trace.probs[t];
            let a = actions[t].index();
            let c = coeffs[t];
            let dlogits = [
                c * (if a == 0 { 1.0 } else { 0.0 } - p[0]),
                c * (if a == 1 { 1.0 } else { 0.0 } - p[1]),
            ];
            let step = &trace.steps[t];
            if step.steps.is_empty() {
                self.policy.backward(&trace.inputs[t], &dlogits, &mut grads.policy, None);
                continue;
            }
            let mut dh = vec![0.0; self.policy.input_dim()];
            self.policy.backward(step.top(), &dlogits, &mut grads.policy, Some(&mut dh));
            self.rnn.backward(step, &dh, &mut carry, &mut grads.rnn, None);
        }
    }
}

impl Parameters for SegmentationGate {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = self
            .rnn
            .tensors()
            .into_iter()
            .map(|(n, m)| (format!("rnn.{n}"), m))
            .collect();
        v.extend(self.policy.tensors().into_iter().map(|(n, m)| (format!("policy.{n}"), m)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.rnn.tensors_mut();
        v.extend(self.policy.tensors_mut());
        v
    }
}
