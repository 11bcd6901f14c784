//! Human-vs-machine response classifier: a single GRU encoder reads
//! `BOS, original, SEP, response, EOS` and a sigmoid head on the final
//! hidden state estimates the probability that the response is human
//! (label 1). SEP is a model-internal vocabulary extension with
//! id = vocab size, so the embedding has vocab+1 rows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, BOS, EOS};
use crate::error::{Error, Result};
use crate::generator::{DecodeConfig, GeneratorModel};
use crate::nnet::{
    axpy, bce_loss, dot, sigmoid, AdamHyperparams, AdamState, Dims, GruCell, GruStep, ParamSet,
    TensorId,
};

/// One discriminator training example; `label` 1 means human response.
/// `sample_seed` records the decode seed of generator-written responses
/// so they can be reproduced exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub original: Vec<u32>,
    pub response: Vec<u32>,
    pub label: u8,
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Clone)]
struct DiscArch {
    embed: TensorId,
    cell: GruCell,
    head_w: TensorId,
    head_b: TensorId,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub dims: Dims,
    pub params: ParamSet,
    arch: DiscArch,
}

struct ScoreCache {
    inputs: Vec<u32>,
    steps: Vec<GruStep>,
    logit: f64,
}

impl DiscriminatorModel {
    /// Separator token id: one past the shared vocabulary.
    pub fn sep_id(&self) -> u32 {
        self.dims.vocab as u32
    }

    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let embed = params.add_matrix("embed", dims.vocab + 1, dims.embed, &mut rng);
        let cell = GruCell::declare(&mut params, "enc", dims.embed, dims.hidden, &mut rng);
        let head_w = params.add_matrix("head_w", 1, dims.hidden, &mut rng);
        let head_b = params.add_zero_vector("head_b", 1);
        Ok(DiscriminatorModel {
            dims,
            params,
            arch: DiscArch {
                embed,
                cell,
                head_w,
                head_b,
            },
        })
    }

    /// Rebuild a model around externally loaded parameters (checkpoint
    /// restore); tensor layout must match.
    pub fn from_params(dims: Dims, params: ParamSet) -> Result<Self> {
        let fresh = DiscriminatorModel::new(dims, 0)?;
        let expect: Vec<_> = fresh.params.iter().map(|t| (t.name.clone(), t.shape)).collect();
        let got: Vec<_> = params.iter().map(|t| (t.name.clone(), t.shape)).collect();
        if expect != got {
            return Err(Error::Shape(
                "parameter tensors do not match the discriminator layout".into(),
            ));
        }
        Ok(DiscriminatorModel {
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

    fn input_sequence(&self, original: &[u32], response: &[u32]) -> Vec<u32> {
        let mut seq = Vec::with_capacity(original.len() + response.len() + 3);
        seq.push(BOS);
        seq.extend_from_slice(original);
        seq.push(self.sep_id());
        seq.extend_from_slice(response);
        seq.push(EOS);
        seq
    }

    fn forward(&self, params: &ParamSet, original: &[u32], response: &[u32]) -> Result<ScoreCache> {
        let inputs = self.input_sequence(original, response);
        let mut h = vec![0.0; self.dims.hidden];
        let mut steps = Vec::with_capacity(inputs.len());
        for &tok in &inputs {
            let x = params.matrix_row(self.arch.embed, tok as usize).to_vec();
            let step = self.arch.cell.step(params, &x, &h)?;
            h = step.h.clone();
            steps.push(step);
        }
        let logit = dot(params.values(self.arch.head_w), &h) + params.values(self.arch.head_b)[0];
        Ok(ScoreCache {
            inputs,
            steps,
            logit,
        })
    }

    /// Pre-sigmoid output under the given parameters; exposed for
    /// gradient checking against perturbed parameter sets.
    pub fn pair_logit_in(&self, params: &ParamSet, original: &[u32], response: &[u32]) -> Result<f64> {
        self.check_ids(original)?;
        self.check_ids(response)?;
        Ok(self.forward(params, original, response)?.logit)
    }

    /// Probability that the response is human-written; strictly in (0,1).
    pub fn score(&self, original: &[u32], response: &[u32]) -> Result<f64> {
        Ok(sigmoid(self.pair_logit_in(&self.params, original, response)?))
    }

    /// Forward + backward of the binary cross-entropy on one example;
    /// accumulates gradients and returns the loss.
    pub fn accumulate_example_grads(&mut self, example: &LabeledExample) -> Result<f64> {
        let cache = self.forward(&self.params, &example.original, &example.response)?;
        let y = example.label as f64;
        let loss = bce_loss(cache.logit, y);
        let dlogit = sigmoid(cache.logit) - y;

        let mut params = std::mem::take(&mut self.params);
        let h_final = &cache.steps.last().expect("inputs are never empty").h;
        axpy(params.grad_mut(self.arch.head_w), dlogit, h_final);
        params.grad_mut(self.arch.head_b)[0] += dlogit;

        let mut dh: Vec<f64> = params
            .values(self.arch.head_w)
            .iter()
            .map(|w| dlogit * w)
            .collect();
        for t in (0..cache.steps.len()).rev() {
            let (dx, dh_prev) = self.arch.cell.backprop(&mut params, &cache.steps[t], &dh);
            params.accum_row_grad(self.arch.embed, cache.inputs[t] as usize, &dx);
            dh = dh_prev;
        }
        self.params = params;
        Ok(loss)
    }
}

/// Build the labeled dataset from a held-out corpus: a seeded half/half
/// split keeps the human response (label 1) on one half and replaces it
/// with `fake(original, example_seed)` on the other (label 0); the output
/// order is shuffled. The extra example of an odd split goes to label 1.
/// Per-example seeds are drawn up front so fakes could be produced in any
/// order (or in parallel) without changing the result.
pub fn build_disc_dataset_with<F>(
    heldout: &Corpus,
    seed: u64,
    mut fake: F,
) -> Result<Vec<LabeledExample>>
where
    F: FnMut(&[u32], u64) -> Result<Vec<u32>>,
{
    if heldout.is_empty() {
        return Err(Error::Config("held-out corpus is empty".into()));
    }
    let n = heldout.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_human = n.div_ceil(2);
    let fake_seeds: Vec<u64> = (n_human..n).map(|_| rng.random()).collect();

    let mut examples = Vec::with_capacity(n);
    for (slot, &i) in order.iter().enumerate() {
        let pair = &heldout.pairs[i];
        if slot < n_human {
            examples.push(LabeledExample {
                original: pair.original.clone(),
                response: pair.response.clone(),
                label: 1,
                sample_seed: None,
            });
        } else {
            let sample_seed = fake_seeds[slot - n_human];
            examples.push(LabeledExample {
                original: pair.original.clone(),
                response: fake(&pair.original, sample_seed)?,
                label: 0,
                sample_seed: Some(sample_seed),
            });
        }
    }
    examples.shuffle(&mut rng);
    Ok(examples)
}

/// Standard dataset construction: fakes are fresh generator samples for
/// the same original.
pub fn build_disc_dataset(
    heldout: &Corpus,
    generator: &GeneratorModel,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    decode.validate()?;
    if generator.dims.vocab != heldout.vocab.size() {
        return Err(Error::Config(format!(
            "generator vocabulary {} does not match corpus vocabulary {}",
            generator.dims.vocab,
            heldout.vocab.size()
        )));
    }
    build_disc_dataset_with(heldout, seed, |original, sample_seed| {
        generator.sample_response(
            original,
            &DecodeConfig {
                seed: sample_seed,
                ..*decode
            },
        )
    })
}

/// Binary cross-entropy training with one Adam step per example;
/// example order is reshuffled every epoch. Returns per-epoch mean BCE.
pub fn train_discriminator(
    model: &mut DiscriminatorModel,
    examples: &[LabeledExample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let first = examples[0].label;
    if examples.iter().all(|e| e.label == first) {
        return Err(Error::Config(format!(
            "training set contains only label {first}; both classes are required"
        )));
    }
    for e in examples {
        if e.label > 1 {
            return Err(Error::Config(format!("label {} is not binary", e.label)));
        }
    }
    let hp = AdamHyperparams::with_lr(lr);
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let loss = model.accumulate_example_grads(&examples[i])?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss {loss}")));
            }
            epoch_loss += loss;
            adam.update(&mut model.params, &hp)?;
        }
        log.push(epoch_loss / examples.len() as f64);
    }
    Ok(log)
}

/// Persist a labeled dataset as `original<TAB>response<TAB>label`,
/// tokens space-separated.
pub fn save_disc_dataset(
    examples: &[LabeledExample],
    vocab: &crate::corpus::Vocabulary,
    path: &std::path::Path,
) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        let o = vocab.decode(&e.original)?.join(" ");
        let r = vocab.decode(&e.response)?.join(" ");
        out.push_str(&format!("{o}\t{r}\t{}\n", e.label));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a labeled dataset written by [`save_disc_dataset`]. Sides are
/// whitespace-separated vocabulary tokens looked up verbatim (not
/// re-tokenized), so reserved literals like `<unk>` round-trip; unknown
/// tokens map to UNK. Sample seeds are not persisted.
pub fn load_disc_dataset(
    path: &std::path::Path,
    vocab: &crate::corpus::Vocabulary,
) -> Result<Vec<LabeledExample>> {
    let text = std::fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected original<TAB>response<TAB>label, found {} fields", parts.len()),
            });
        }
        let lookup = |s: &str| -> Vec<u32> {
            s.split_whitespace()
                .map(|t| vocab.id_of(t).unwrap_or(crate::corpus::UNK))
                .collect()
        };
        let label: u8 = parts[2].trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("label must be 0 or 1, got {:?}", parts[2]),
        })?;
        if label > 1 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        examples.push(LabeledExample {
            original: lookup(parts[0]),
            response: lookup(parts[1]),
            label,
            sample_seed: None,
        });
    }
    Ok(examples)
}
