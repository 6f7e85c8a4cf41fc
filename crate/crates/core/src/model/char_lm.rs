//! Fixed-window feedforward character language model.
//!
//! Each token is predicted from the `context` preceding tokens (left-padded
//! with the padding id): embeddings are concatenated, passed through one tanh
//! hidden layer, and projected to vocabulary logits.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DifferentiableModel, ModelMode};
use crate::data::{Samples, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, LayerSpec, Layout, ParamVector};

const EMBED: usize = 0;
const HIDDEN_W: usize = 1;
const HIDDEN_B: usize = 2;
const OUT_W: usize = 3;
const OUT_B: usize = 4;

#[derive(Debug, Clone)]
pub struct CharLm {
    vocab: usize,
    context: usize,
    embed: usize,
    hidden: usize,
    layout: Arc<Layout>,
}

struct Scratch {
    x: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
    d_act: Vec<f64>,
    d_x: Vec<f64>,
}

impl CharLm {
    pub fn new(vocab: usize, context: usize, embed: usize, hidden: usize) -> Result<Self> {
        if vocab < 2 || context == 0 || embed == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "invalid char_lm dims: vocab={vocab} context={context} embed={embed} hidden={hidden}"
            )));
        }
        let layout = Layout::new(vec![
            LayerSpec::new("embed", &[vocab, embed]),
            LayerSpec::new("hidden.weight", &[context * embed, hidden]),
            LayerSpec::new("hidden.bias", &[hidden]),
            LayerSpec::new("output.weight", &[hidden, vocab]),
            LayerSpec::new("output.bias", &[vocab]),
        ]);
        Ok(Self {
            vocab,
            context,
            embed,
            hidden,
            layout,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            x: vec![0.0; self.context * self.embed],
            act: vec![0.0; self.hidden],
            logits: vec![0.0; self.vocab],
            d_act: vec![0.0; self.hidden],
            d_x: vec![0.0; self.context * self.embed],
        }
    }

    fn context_ids(&self, seq: &[u32], pos: usize, out: &mut [u32]) {
        for (k, slot) in out.iter_mut().enumerate() {
            // slot k holds the token `context - k` steps back
            let back = self.context - k;
            *slot = if pos >= back { seq[pos - back] } else { PAD_ID };
        }
    }

    /// Forward one position; leaves activations and logits in `s` and returns
    /// `-log p(target)`.
    fn forward(&self, p: &ParamVector, ctx: &[u32], target: u32, s: &mut Scratch) -> f64 {
        let emb = p.layer(EMBED);
        let w1 = p.layer(HIDDEN_W);
        let b1 = p.layer(HIDDEN_B);
        let w2 = p.layer(OUT_W);
        let b2 = p.layer(OUT_B);
        let e = self.embed;
        for (k, &tok) in ctx.iter().enumerate() {
            let row = tok as usize * e;
            s.x[k * e..(k + 1) * e].copy_from_slice(&emb[row..row + e]);
        }
        s.act.copy_from_slice(b1);
        for (i, &xi) in s.x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w1[i * self.hidden..(i + 1) * self.hidden];
            for (a, w) in s.act.iter_mut().zip(row) {
                *a += xi * w;
            }
        }
        for a in s.act.iter_mut() {
            *a = a.tanh();
        }
        s.logits.copy_from_slice(b2);
        for (h, &ah) in s.act.iter().enumerate() {
            let row = &w2[h * self.vocab..(h + 1) * self.vocab];
            for (l, w) in s.logits.iter_mut().zip(row) {
                *l += ah * w;
            }
        }
        let max = s.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in s.logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        let t = target as usize;
        let nll = z.ln() - (s.logits[t].ln());
        // logits now hold softmax probabilities
        for l in s.logits.iter_mut() {
            *l /= z;
        }
        nll
    }

    fn sequences<'a>(&self, samples: &'a Samples) -> Result<&'a [Vec<u32>]> {
        match samples {
            Samples::Tokens(seqs) => {
                if let Some(&bad) = seqs.iter().flatten().find(|&&t| t as usize >= self.vocab) {
                    return Err(Error::Input(format!(
                        "token id {bad} outside vocabulary of {}",
                        self.vocab
                    )));
                }
                Ok(seqs)
            }
            Samples::Pairs(_) => Err(Error::Input("char_lm needs token samples".into())),
        }
    }
}

impl DifferentiableModel for CharLm {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn mode(&self) -> ModelMode {
        ModelMode::LanguageModel
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from_seed(seed);
        let mut p = ParamVector::zeros(&self.layout);
        let mut fill = |p: &mut ParamVector, layer: usize, scale: f64| {
            for v in p.layer_mut(layer) {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        };
        fill(&mut p, EMBED, 0.5);
        fill(&mut p, HIDDEN_W, 1.0 / ((self.context * self.embed) as f64).sqrt());
        fill(&mut p, OUT_W, 0.5 / (self.hidden as f64).sqrt());
        p
    }

    fn loss(&self, params: &ParamVector, samples: &Samples) -> Result<f64> {
        let seqs = self.sequences(samples)?;
        let mut s = self.scratch();
        let mut ctx = vec![PAD_ID; self.context];
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in seqs {
            for pos in 0..seq.len() {
                self.context_ids(seq, pos, &mut ctx);
                total += self.forward(params, &ctx, seq[pos], &mut s);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Input("no tokens to score".into()));
        }
        Ok(total / count as f64)
    }

    fn loss_and_grad(&self, params: &ParamVector, samples: &Samples) -> Result<(f64, ParamVector)> {
        let seqs = self.sequences(samples)?;
        let count: usize = seqs.iter().map(Vec::len).sum();
        if count == 0 {
            return Err(Error::Input("no tokens to score".into()));
        }
        let inv = 1.0 / count as f64;
        let mut grad = ParamVector::zeros(&self.layout);
        let layout = Arc::clone(&self.layout);
        let (r_emb, r_w1, r_b1, r_w2, r_b2) = (
            layout.range(EMBED),
            layout.range(HIDDEN_W),
            layout.range(HIDDEN_B),
            layout.range(OUT_W),
            layout.range(OUT_B),
        );
        let w1 = params.layer(HIDDEN_W);
        let w2 = params.layer(OUT_W);
        let (h_dim, v_dim, e) = (self.hidden, self.vocab, self.embed);

        let mut s = self.scratch();
        let mut ctx = vec![PAD_ID; self.context];
        let mut total = 0.0;
        for seq in seqs {
            for pos in 0..seq.len() {
                self.context_ids(seq, pos, &mut ctx);
                let target = seq[pos] as usize;
                total += self.forward(params, &ctx, seq[pos], &mut s);

                // d logits = (softmax - onehot) / N, stored in place
                s.logits[target] -= 1.0;
                for l in s.logits.iter_mut() {
                    *l *= inv;
                }
                let g = grad.values_mut();
                for (gb, &dl) in g[r_b2.clone()].iter_mut().zip(&s.logits) {
                    *gb += dl;
                }
                {
                    let gw2 = &mut g[r_w2.clone()];
                    for h in 0..h_dim {
                        let ah = s.act[h];
                        let row = &w2[h * v_dim..(h + 1) * v_dim];
                        let grow = &mut gw2[h * v_dim..(h + 1) * v_dim];
                        let mut da = 0.0;
                        for v in 0..v_dim {
                            grow[v] += ah * s.logits[v];
                            da += row[v] * s.logits[v];
                        }
                        // through tanh
                        s.d_act[h] = da * (1.0 - ah * ah);
                    }
                }
                for (gb, &dz) in g[r_b1.clone()].iter_mut().zip(&s.d_act) {
                    *gb += dz;
                }
                {
                    let gw1 = &mut g[r_w1.clone()];
                    for (i, &xi) in s.x.iter().enumerate() {
                        let row = &w1[i * h_dim..(i + 1) * h_dim];
                        let grow = &mut gw1[i * h_dim..(i + 1) * h_dim];
                        let mut dx = 0.0;
                        for h in 0..h_dim {
                            grow[h] += xi * s.d_act[h];
                            dx += row[h] * s.d_act[h];
                        }
                        s.d_x[i] = dx;
                    }
                }
                let gemb = &mut g[r_emb.clone()];
                for (k, &tok) in ctx.iter().enumerate() {
                    let row = tok as usize * e;
                    for (ge, dx) in gemb[row..row + e].iter_mut().zip(&s.d_x[k * e..(k + 1) * e]) {
                        *ge += dx;
                    }
                }
            }
        }
        Ok((total * inv, grad))
    }
}
