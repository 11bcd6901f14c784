//! Sequence-to-sequence response generator: a GRU encoder reads the
//! original message, a GRU decoder (initialized from the encoder's
//! final hidden state) emits the response token by token through a
//! linear projection and softmax. Training is teacher-forced NLL
//! minimization with per-pair Adam steps; decoding supports ancestral
//! sampling, greedy, and beam search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, BOS, EOS};
use crate::error::{Error, Result};
use crate::nnet::{
    matvec, matvec_t_accum, outer_accum, sampled_index, sequence_nll, softmax, AdamHyperparams,
    AdamState, Dims, GruCell, GruStep, ParamSet, TensorId, LOG_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Sample,
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub max_len: usize,
    pub beam_width: usize,
    /// Softmax temperature; applies to sampling only. Greedy and beam
    /// rank by the model's untempered log-likelihood.
    pub temperature: f64,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Tensor handles of the generator, in declaration (= serialization) order:
/// enc_embed, dec_embed, encoder cell, decoder cell, out_w, out_b.
#[derive(Debug, Clone)]
struct GenArch {
    enc_embed: TensorId,
    dec_embed: TensorId,
    enc: GruCell,
    dec: GruCell,
    out_w: TensorId,
    out_b: TensorId,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub dims: Dims,
    pub params: ParamSet,
    arch: GenArch,
}

/// Cached activations of one teacher-forced pass.
struct PairCache {
    original: Vec<u32>,
    enc_steps: Vec<GruStep>,
    dec_steps: Vec<GruStep>,
    dec_probs: Vec<Vec<f64>>,
    dec_inputs: Vec<u32>,
    targets: Vec<u32>,
    nll: f64,
}

impl GeneratorModel {
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let enc_embed = params.add_matrix("enc_embed", dims.vocab, dims.embed, &mut rng);
        let dec_embed = params.add_matrix("dec_embed", dims.vocab, dims.embed, &mut rng);
        let enc = GruCell::declare(&mut params, "enc", dims.embed, dims.hidden, &mut rng);
        let dec = GruCell::declare(&mut params, "dec", dims.embed, dims.hidden, &mut rng);
        let out_w = params.add_matrix("out_w", dims.vocab, dims.hidden, &mut rng);
        let out_b = params.add_zero_vector("out_b", dims.vocab);
        Ok(GeneratorModel {
            dims,
            params,
            arch: GenArch {
                enc_embed,
                dec_embed,
                enc,
                dec,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuild a model around externally loaded parameters (checkpoint
    /// restore). The ParamSet must have been produced by a model with
    /// the same dims.
    pub fn from_params(dims: Dims, params: ParamSet) -> Result<Self> {
        let fresh = GeneratorModel::new(dims, 0)?;
        let expect: Vec<_> = fresh.params.iter().map(|t| (t.name.clone(), t.shape)).collect();
        let got: Vec<_> = params.iter().map(|t| (t.name.clone(), t.shape)).collect();
        if expect != got {
            return Err(Error::Shape(
                "parameter tensors do not match the generator layout".into(),
            ));
        }
        Ok(GeneratorModel {
            dims,
            params,
            arch: fresh.arch,
        })
    }

    fn check_ids(&self, seq: &[u32]) -> Result<()> {
        for &id in seq {
            if id as usize >= self.dims.vocab {
                return Err(Error::InvalidId {
                    id,
                    vocab: self.dims.vocab,
                });
            }
        }
        Ok(())
    }

    /// Run the encoder; returns all cached steps (final hidden state is
    /// `steps.last().h`, or zeros for an empty original).
    fn encode(&self, params: &ParamSet, original: &[u32]) -> Result<Vec<GruStep>> {
        let mut h = vec![0.0; self.dims.hidden];
        let mut steps = Vec::with_capacity(original.len());
        for &tok in original {
            let x = params.matrix_row(self.arch.enc_embed, tok as usize).to_vec();
            let step = self.arch.enc.step(params, &x, &h)?;
            h = step.h.clone();
            steps.push(step);
        }
        Ok(steps)
    }

    fn logits(&self, params: &ParamSet, h: &[f64]) -> Vec<f64> {
        let mut logits = params.values(self.arch.out_b).to_vec();
        let mut tmp = vec![0.0; self.dims.vocab];
        matvec(
            params.values(self.arch.out_w),
            self.dims.vocab,
            self.dims.hidden,
            h,
            &mut tmp,
        );
        for (l, t) in logits.iter_mut().zip(&tmp) {
            *l += t;
        }
        logits
    }

    /// Teacher-forced forward pass: decoder inputs are BOS followed by
    /// the response, targets are the response followed by EOS.
    fn forward_pair(&self, params: &ParamSet, original: &[u32], response: &[u32]) -> Result<PairCache> {
        let enc_steps = self.encode(params, original)?;
        let mut h = enc_steps
            .last()
            .map(|s| s.h.clone())
            .unwrap_or_else(|| vec![0.0; self.dims.hidden]);

        let mut dec_inputs = Vec::with_capacity(response.len() + 1);
        dec_inputs.push(BOS);
        dec_inputs.extend_from_slice(response);
        let mut targets = Vec::with_capacity(response.len() + 1);
        targets.extend_from_slice(response);
        targets.push(EOS);

        let mut dec_steps = Vec::with_capacity(dec_inputs.len());
        let mut dec_probs = Vec::with_capacity(dec_inputs.len());
        for &tok in &dec_inputs {
            let x = params.matrix_row(self.arch.dec_embed, tok as usize).to_vec();
            let step = self.arch.dec.step(params, &x, &h)?;
            h = step.h.clone();
            dec_probs.push(softmax(&self.logits(params, &step.h))?);
            dec_steps.push(step);
        }
        let nll = sequence_nll(&dec_probs, &targets)?;
        Ok(PairCache {
            original: original.to_vec(),
            enc_steps,
            dec_steps,
            dec_probs,
            dec_inputs,
            targets,
            nll,
        })
    }

    /// Backward through a cached pair, accumulating gradients of the
    /// sequence NLL into `params`.
    fn backward_pair(&self, params: &mut ParamSet, cache: &PairCache) {
        let hd = self.dims.hidden;
        let mut dh_carry = vec![0.0; hd];
        for t in (0..cache.dec_steps.len()).rev() {
            let probs = &cache.dec_probs[t];
            let target = cache.targets[t] as usize;
            // d(-ln max(p_y, floor))/dlogits; zero when the floor clamps.
            let mut dlogits = vec![0.0; self.dims.vocab];
            if probs[target] > LOG_FLOOR {
                dlogits.copy_from_slice(probs);
                dlogits[target] -= 1.0;
            }
            let h_t = &cache.dec_steps[t].h;
            let mut dh = dh_carry;
            matvec_t_accum(
                params.values(self.arch.out_w),
                self.dims.vocab,
                hd,
                &dlogits,
                &mut dh,
            );
            outer_accum(params.grad_mut(self.arch.out_w), &dlogits, h_t);
            for (g, d) in params.grad_mut(self.arch.out_b).iter_mut().zip(&dlogits) {
                *g += d;
            }
            let (dx, dh_prev) = self.arch.dec.backprop(params, &cache.dec_steps[t], &dh);
            params.accum_row_grad(self.arch.dec_embed, cache.dec_inputs[t] as usize, &dx);
            dh_carry = dh_prev;
        }
        let mut dh = dh_carry;
        for t in (0..cache.enc_steps.len()).rev() {
            let (dx, dh_prev) = self.arch.enc.backprop(params, &cache.enc_steps[t], &dh);
            params.accum_row_grad(self.arch.enc_embed, cache.original[t] as usize, &dx);
            dh = dh_prev;
        }
    }

    /// Sequence NLL of (original, response) under the given parameters;
    /// exposed for gradient checking against perturbed parameter sets.
    pub fn pair_nll_in(&self, params: &ParamSet, original: &[u32], response: &[u32]) -> Result<f64> {
        self.check_ids(original)?;
        self.check_ids(response)?;
        Ok(self.forward_pair(params, original, response)?.nll)
    }

    /// Forward + backward on the model's own parameters; returns the NLL.
    pub fn accumulate_pair_grads(&mut self, original: &[u32], response: &[u32]) -> Result<f64> {
        let cache = self.forward_pair(&self.params, original, response)?;
        let mut params = std::mem::take(&mut self.params);
        self.backward_pair(&mut params, &cache);
        self.params = params;
        Ok(cache.nll)
    }

    /// Log-likelihood of the response given the original, including the
    /// terminating EOS step; always ≤ 0.
    pub fn log_likelihood(&self, original: &[u32], response: &[u32]) -> Result<f64> {
        Ok(-self.pair_nll_in(&self.params, original, response)?)
    }

    /// exp(total NLL / total predicted tokens), EOS counted per response.
    pub fn perplexity(&self, corpus: &Corpus) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::Config("perplexity needs a non-empty corpus".into()));
        }
        let mut total_nll = 0.0;
        let mut total_tokens = 0usize;
        for pair in &corpus.pairs {
            total_nll += self.pair_nll_in(&self.params, &pair.original, &pair.response)?;
            total_tokens += pair.response.len() + 1;
        }
        Ok((total_nll / total_tokens as f64).exp())
    }

    /// Ancestral sampling: each token drawn from softmax(logits/T),
    /// stopping at EOS (excluded from the output) or `max_len`.
    pub fn sample_response(&self, original: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
        cfg.validate()?;
        self.check_ids(original)?;
        let params = &self.params;
        let enc_steps = self.encode(params, original)?;
        let mut h = enc_steps
            .last()
            .map(|s| s.h.clone())
            .unwrap_or_else(|| vec![0.0; self.dims.hidden]);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::new();
        let mut input = BOS;
        for _ in 0..cfg.max_len {
            let x = params.matrix_row(self.arch.dec_embed, input as usize).to_vec();
            let step = self.arch.dec.step(params, &x, &h)?;
            h = step.h;
            let mut logits = self.logits(params, &h);
            for l in &mut logits {
                *l /= cfg.temperature;
            }
            let probs = softmax(&logits)?;
            let tok = sampled_index(&probs, rng.random::<f64>()) as u32;
            if tok == EOS {
                break;
            }
            out.push(tok);
            input = tok;
        }
        Ok(out)
    }

    fn log_probs(&self, params: &ParamSet, h: &[f64]) -> Result<Vec<f64>> {
        let probs = softmax(&self.logits(params, h))?;
        Ok(probs.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect())
    }

    /// Greedy rollout: argmax token each step (lowest id on ties).
    /// Returns tokens (EOS excluded), the accumulated log-likelihood
    /// (including the EOS term when completed), and the completion step
    /// (None when the rollout hit `max_len` without emitting EOS).
    fn greedy_rollout(
        &self,
        params: &ParamSet,
        enc_h: &[f64],
        max_len: usize,
    ) -> Result<(Vec<u32>, f64, Option<usize>)> {
        let mut h = enc_h.to_vec();
        let mut tokens = Vec::new();
        let mut score = 0.0;
        let mut input = BOS;
        for s in 0..max_len {
            let x = params.matrix_row(self.arch.dec_embed, input as usize).to_vec();
            let step = self.arch.dec.step(params, &x, &h)?;
            h = step.h;
            let lps = self.log_probs(params, &h)?;
            let (best, best_lp) = lps
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
            score += best_lp;
            if best as u32 == EOS {
                return Ok((tokens, score, Some(s)));
            }
            tokens.push(best as u32);
            input = best as u32;
        }
        Ok((tokens, score, None))
    }

    /// Greedy decoding (beam of width 1).
    pub fn greedy(&self, original: &[u32], cfg: &DecodeConfig) -> Result<BeamOutcome> {
        self.beam_search(original, &DecodeConfig {
            beam_width: 1,
            ..*cfg
        })
    }

    /// Beam search over total log-likelihood (no length normalization).
    /// Hypotheses reaching EOS retire into the completed pool while
    /// occupying their beam slot; the best completed hypothesis wins,
    /// ties broken by earlier completion then lexicographic token order.
    /// A greedy rollout is always merged into the candidate pool, so the
    /// result never scores below greedy and width 1 is exactly greedy.
    /// If nothing completes within `max_len`, the best surviving partial
    /// is returned with `truncated` set.
    pub fn beam_search(&self, original: &[u32], cfg: &DecodeConfig) -> Result<BeamOutcome> {
        cfg.validate()?;
        self.check_ids(original)?;
        let params = &self.params;
        let enc_steps = self.encode(params, original)?;
        let enc_h = enc_steps
            .last()
            .map(|s| s.h.clone())
            .unwrap_or_else(|| vec![0.0; self.dims.hidden]);

        struct Hyp {
            tokens: Vec<u32>,
            score: f64,
            h: Vec<f64>,
        }
        struct Done {
            tokens: Vec<u32>,
            score: f64,
            step: usize,
        }

        let mut active = vec![Hyp {
            tokens: Vec::new(),
            score: 0.0,
            h: enc_h.clone(),
        }];
        let mut completed: Vec<Done> = Vec::new();

        for s in 0..cfg.max_len {
            // (score, extended tokens, parent index, token)
            let mut candidates: Vec<(f64, Vec<u32>, usize, u32)> = Vec::new();
            for pi in 0..active.len() {
                let input = *active[pi].tokens.last().unwrap_or(&BOS);
                let x = params.matrix_row(self.arch.dec_embed, input as usize).to_vec();
                let step = self.arch.dec.step(params, &x, &active[pi].h)?;
                let lps = self.log_probs(params, &step.h)?;
                for (tok, &lp) in lps.iter().enumerate() {
                    let mut tokens = active[pi].tokens.clone();
                    tokens.push(tok as u32);
                    candidates.push((active[pi].score + lp, tokens, pi, tok as u32));
                }
                // Stash the stepped hidden state for surviving children.
                active[pi].h = step.h;
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            candidates.truncate(cfg.beam_width);

            let mut next = Vec::with_capacity(candidates.len());
            for (score, mut tokens, pi, tok) in candidates {
                if tok == EOS {
                    tokens.pop();
                    completed.push(Done {
                        tokens,
                        score,
                        step: s,
                    });
                } else {
                    // Child starts from the parent's stepped state; its own
                    // step happens when it is expanded next round.
                    next.push(Hyp {
                        tokens,
                        score,
                        h: active[pi].h.clone(),
                    });
                }
            }
            active = next;
            if active.is_empty() {
                break;
            }
        }

        let (g_tokens, g_score, g_step) = self.greedy_rollout(params, &enc_h, cfg.max_len)?;
        if let Some(step) = g_step {
            completed.push(Done {
                tokens: g_tokens.clone(),
                score: g_score,
                step,
            });
        }

        if let Some(best) = completed.into_iter().min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.step.cmp(&b.step))
                .then_with(|| a.tokens.cmp(&b.tokens))
        }) {
            return Ok(BeamOutcome {
                tokens: best.tokens,
                loglik: best.score,
                truncated: false,
            });
        }

        let mut partials: Vec<(Vec<u32>, f64)> =
            active.into_iter().map(|h| (h.tokens, h.score)).collect();
        if g_step.is_none() {
            partials.push((g_tokens, g_score));
        }
        let best = partials
            .into_iter()
            .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
            .expect("greedy partial always present");
        Ok(BeamOutcome {
            tokens: best.0,
            loglik: best.1,
            truncated: true,
        })
    }
}

/// Result of greedy or beam decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutcome {
    pub tokens: Vec<u32>,
    pub loglik: f64,
    /// Set when no hypothesis reached EOS within max_len; `tokens` is
    /// then the best partial hypothesis.
    pub truncated: bool,
}

/// Teacher-forced training with one Adam step per pair; pair order is
/// reshuffled every epoch. Returns the per-epoch mean sequence NLL.
pub fn train_generator(
    model: &mut GeneratorModel,
    corpus: &Corpus,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if corpus.vocab.size() != model.dims.vocab {
        return Err(Error::Config(format!(
            "corpus vocabulary size {} does not match model vocabulary {}",
            corpus.vocab.size(),
            model.dims.vocab
        )));
    }
    let hp = AdamHyperparams::with_lr(lr);
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        for &i in &order {
            let pair = &corpus.pairs[i];
            let nll = model.accumulate_pair_grads(&pair.original, &pair.response)?;
            if !nll.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss {nll}")));
            }
            epoch_nll += nll;
            adam.update(&mut model.params, &hp)?;
        }
        log.push(epoch_nll / corpus.len() as f64);
    }
    Ok(log)
}
