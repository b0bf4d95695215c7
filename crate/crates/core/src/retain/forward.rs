use serde::{Deserialize, Serialize};

use super::{OutputHead, RetainModel, PARAM_NAMES};
use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::ehr::EncodedSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tape handles for every model parameter, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub vars: [Var; PARAM_NAMES.len()],
}

impl BoundParams {
    pub fn from_slice(vars: &[Var]) -> Result<Self> {
        let vars = vars
            .try_into()
            .map_err(|_| Error::Shape { op: "bind", detail: format!("{} vars for {} params", vars.len(), PARAM_NAMES.len()) })?;
        Ok(Self { vars })
    }

    fn gru(&self, first: usize) -> [Var; 4] {
        [self.vars[first], self.vars[first + 1], self.vars[first + 2], self.vars[first + 3]]
    }
}

/// Nodes of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// Attention over steps, chronological order.
    pub alpha: Var,
    pub betas: Vec<Var>,
    pub logits: Var,
    pub probabilities: Var,
}

/// Contribution of one code at one step to every target logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInfluence<S> {
    pub step: usize,
    pub code_index: usize,
    pub per_target: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult<S> {
    pub target_codes: Vec<String>,
    pub probabilities: Vec<S>,
    pub logits: Vec<S>,
    /// One weight per step, summing to one.
    pub alphas: Vec<S>,
    /// One gate vector per step, components in (-1, 1).
    pub betas: Vec<Vec<S>>,
    /// Every active `(step, code)` pair, in step then code-index order.
    pub influence: Vec<EventInfluence<S>>,
}

impl<S: Scalar> PredictionResult<S> {
    pub fn probability(&self, code: &str) -> Option<S> {
        self.target_codes.iter().position(|c| c == code).map(|i| self.probabilities[i])
    }

    pub fn influence_of(&self, step: usize, code_index: usize) -> Option<&[S]> {
        self.influence
            .iter()
            .find(|e| e.step == step && e.code_index == code_index)
            .map(|e| e.per_target.as_slice())
    }
}

fn gru_step<S: Scalar>(tape: &mut Tape<S>, p: [Var; 4], x: Var, h: Var, hd: usize) -> Result<Var> {
    let [w, u, bw, bu] = p;
    let a = tape.matvec(w, x)?;
    let a = tape.add(a, bw)?;
    let c = tape.matvec(u, h)?;
    let c = tape.add(c, bu)?;
    let (az, cz) = (tape.slice(a, 0, hd)?, tape.slice(c, 0, hd)?);
    let z = tape.add(az, cz)?;
    let z = tape.sigmoid(z)?;
    let (ar, cr) = (tape.slice(a, hd, hd)?, tape.slice(c, hd, hd)?);
    let r = tape.add(ar, cr)?;
    let r = tape.sigmoid(r)?;
    let (an, cn) = (tape.slice(a, 2 * hd, hd)?, tape.slice(c, 2 * hd, hd)?);
    let gated = tape.mul(r, cn)?;
    let n = tape.add(an, gated)?;
    let n = tape.tanh(n)?;
    let diff = tape.sub(h, n)?;
    let keep = tape.mul(z, diff)?;
    tape.add(n, keep)
}

impl<S: Scalar> RetainModel<S> {
    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundParams {
        BoundParams { vars: self.params().map(|t| tape.param(t)) }
    }

    fn bind_constant(&self, tape: &mut Tape<S>) -> BoundParams {
        BoundParams { vars: self.params().map(|t| tape.constant(t)) }
    }

    fn check_input(&self, seq: &EncodedSequence<S>) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        if seq.vocab_size != self.vocab_size() || seq.steps.iter().any(|s| s.multi_hot.len() != self.vocab_size()) {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("input dimension {} vs vocabulary size {}", seq.vocab_size, self.vocab_size()),
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape` using the parameter nodes in
    /// `params`. Only the tape values of `params` are read, so perturbed or
    /// substituted parameters work.
    pub fn record(&self, tape: &mut Tape<S>, params: &BoundParams, seq: &EncodedSequence<S>) -> Result<Recorded> {
        self.check_input(seq)?;
        let hd = self.config.hidden_dim;
        let p = &params.vars;
        let (emb, w_alpha, b_alpha, w_beta, b_beta, w_out, b_out) = (p[0], p[5], p[6], p[11], p[12], p[13], p[14]);

        let mut embedded = Vec::with_capacity(seq.len());
        let mut augmented = Vec::with_capacity(seq.len());
        for step in &seq.steps {
            let x = tape.constant_vector(step.multi_hot.clone());
            let v = tape.matvec(emb, x)?;
            let d = tape.constant_vector(vec![step.duration]);
            augmented.push(tape.concat(&[v, d])?);
            embedded.push(v);
        }

        let order: Vec<usize> =
            if self.config.reverse_time { (0..seq.len()).rev().collect() } else { (0..seq.len()).collect() };
        let run = |tape: &mut Tape<S>, gru: [Var; 4]| -> Result<Vec<Var>> {
            let mut states = vec![None; seq.len()];
            let mut h = tape.constant(&Tensor::zeros(crate::autodiff::Shape::Vector(hd)));
            for &i in &order {
                h = gru_step(tape, gru, augmented[i], h, hd)?;
                states[i] = Some(h);
            }
            Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
        };
        let alpha_states = run(tape, params.gru(1))?;
        let beta_states = run(tape, params.gru(7))?;

        let mut scores = Vec::with_capacity(seq.len());
        for &g in &alpha_states {
            let e = tape.dot(w_alpha, g)?;
            scores.push(tape.add(e, b_alpha)?);
        }
        let scores = tape.concat(&scores)?;
        let alpha = tape.softmax(scores, Axis::Cols)?;

        let mut betas = Vec::with_capacity(seq.len());
        let mut context = None;
        for (i, (&h, &v)) in beta_states.iter().zip(&embedded).enumerate() {
            let b = tape.matvec(w_beta, h)?;
            let b = tape.add(b, b_beta)?;
            let beta = tape.tanh(b)?;
            betas.push(beta);
            let gated = tape.mul(beta, v)?;
            let weight = tape.pick(alpha, i)?;
            let term = tape.scale(gated, weight)?;
            context = Some(match context {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let context = context.expect("non-empty sequence");
        let logits = tape.matvec(w_out, context)?;
        let logits = tape.add(logits, b_out)?;
        let probabilities = match self.config.head {
            OutputHead::Sigmoid => tape.sigmoid(logits)?,
            OutputHead::Softmax => tape.softmax(logits, Axis::Cols)?,
        };
        Ok(Recorded { alpha, betas, logits, probabilities })
    }

    /// Predicts target probabilities with attention weights and the full
    /// per-event influence table.
    pub fn forward(&self, seq: &EncodedSequence<S>) -> Result<PredictionResult<S>> {
        let mut tape = Tape::new();
        let params = self.bind_constant(&mut tape);
        let rec = self.record(&mut tape, &params, seq)?;
        let alphas = tape.value(rec.alpha).to_vec();
        let betas: Vec<Vec<S>> = rec.betas.iter().map(|&b| tape.value(b).to_vec()).collect();
        let mut influence = Vec::new();
        for (step, enc) in seq.steps.iter().enumerate() {
            for &code_index in &enc.active {
                influence.push(EventInfluence {
                    step,
                    code_index,
                    per_target: self.attribution(alphas[step], &betas[step], code_index),
                });
            }
        }
        Ok(PredictionResult {
            target_codes: self.target_codes.clone(),
            probabilities: tape.value(rec.probabilities).to_vec(),
            logits: tape.value(rec.logits).to_vec(),
            alphas,
            betas,
            influence,
        })
    }

    /// Target probabilities only, skipping the attribution table.
    pub fn predict_probabilities(&self, seq: &EncodedSequence<S>) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let params = self.bind_constant(&mut tape);
        let rec = self.record(&mut tape, &params, seq)?;
        Ok(tape.value(rec.probabilities).to_vec())
    }

    /// `alpha_t * W_out (beta_t * W_emb[:, code])` for one step. The code
    /// need not be active at that step.
    pub fn influence(&self, seq: &EncodedSequence<S>, step: usize, code_index: usize) -> Result<Vec<S>> {
        if step >= seq.len() {
            return Err(Error::OutOfRange { index: step, len: seq.len() });
        }
        if code_index >= self.vocab_size() {
            return Err(Error::OutOfRange { index: code_index, len: self.vocab_size() });
        }
        let mut tape = Tape::new();
        let params = self.bind_constant(&mut tape);
        let rec = self.record(&mut tape, &params, seq)?;
        let alpha = tape.value(rec.alpha)[step];
        Ok(self.attribution(alpha, tape.value(rec.betas[step]), code_index))
    }

    /// Influence of `code_index` given a step's attention weight and gate.
    pub fn attribution(&self, alpha: S, beta: &[S], code_index: usize) -> Vec<S> {
        let m = self.config.embed_dim;
        let v = self.vocab_size();
        let emb = self.embedding.values();
        let gated: Vec<S> = (0..m).map(|k| beta[k] * emb[k * v + code_index]).collect();
        self.output_weight
            .values()
            .chunks_exact(m)
            .map(|row| alpha * row.iter().zip(&gated).fold(S::zero(), |acc, (&w, &g)| acc + w * g))
            .collect()
    }
}
