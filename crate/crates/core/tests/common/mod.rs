//! Shared test support: a straight-line scalar reference implementation
//! of the encoder forward pass and pre-training loss (used as an
//! independent oracle), plus synthetic score/corpus generators.
//!
//! The reference deliberately avoids the crate's linear algebra paths:
//! plain nested `Vec<f64>` loops only, reading weights through the
//! public parameter listing.

#![allow(dead_code)]

use std::collections::HashMap;

use cadenza_core::model::{ModelConfig, PretrainModel};
use cadenza_core::ssl::{CorruptionRecord, SegmentTargets, N_CHROMA, N_PITCH, N_TATUMS};
use cadenza_core::tokenizer::{TokenIds, VocabSpec, ATTRS};

pub use cadenza_core::synth::{synth_corpus, synth_free_score, synth_grid_score, synth_piece};

type Mat = Vec<Vec<f64>>;

pub struct RefModel {
    pub config: ModelConfig,
    params: HashMap<String, Mat>,
}

fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(x: &Mat, w: &Mat) -> Mat {
    let (n, k, m) = (x.len(), w.len(), w[0].len());
    let mut y = vec![vec![0.0; m]; n];
    for r in 0..n {
        assert_eq!(x[r].len(), k);
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..k {
                acc += x[r][i] * w[i][j];
            }
            y[r][j] = acc;
        }
    }
    y
}

fn add_bias(y: &mut Mat, b: &Mat) {
    for row in y.iter_mut() {
        for (v, bv) in row.iter_mut().zip(&b[0]) {
            *v += bv;
        }
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn layernorm(x: &Mat, gamma: &Mat, beta: &Mat) -> Mat {
    let d = x[0].len();
    x.iter()
        .map(|row| {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + 1e-5).sqrt();
            (0..d)
                .map(|c| gamma[0][c] * (row[c] - mean) * istd + beta[0][c])
                .collect()
        })
        .collect()
}

fn rope_row(row: &mut [f64], pos: usize, base: f64) {
    let d = row.len();
    for i in 0..d / 2 {
        let theta = pos as f64 * base.powf(-(2.0 * i as f64) / d as f64);
        let (s, c) = (theta.sin(), theta.cos());
        let a = row[2 * i];
        let b = row[2 * i + 1];
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
    }
}

impl RefModel {
    pub fn from_model(model: &PretrainModel) -> Self {
        let params = model
            .params()
            .into_iter()
            .map(|(name, a)| (name, to_mat(a)))
            .collect();
        RefModel { config: model.encoder.config.clone(), params }
    }

    fn p(&self, name: &str) -> &Mat {
        self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Hidden states for a segment of token ids (no dropout).
    pub fn forward(&self, ids: &[TokenIds]) -> Mat {
        let cfg = &self.config;
        let table_names = ["bar_flag", "position", "pitch", "duration"];

        // embedding: concat per-attribute rows, project
        let concat: Mat = ids
            .iter()
            .map(|t| {
                let mut row = Vec::new();
                for (a, name) in table_names.iter().enumerate() {
                    let table = self.p(&format!("emb.table.{name}"));
                    row.extend_from_slice(&table[t.0[a] as usize]);
                }
                row
            })
            .collect();
        let mut x = matmul(&concat, self.p("emb.proj.w"));
        add_bias(&mut x, self.p("emb.proj.b"));

        let pad: Vec<bool> = ids.iter().map(TokenIds::is_pad).collect();
        let s = ids.len();
        let d = cfg.d_model;
        let dh = d / cfg.n_heads;

        for layer in 0..cfg.n_layers {
            let pfx = format!("block{layer}");
            // attention
            let n = layernorm(
                &x,
                self.p(&format!("{pfx}.attn.norm.gamma")),
                self.p(&format!("{pfx}.attn.norm.beta")),
            );
            let q_all = matmul(&n, self.p(&format!("{pfx}.attn.wq.w")));
            let k_all = matmul(&n, self.p(&format!("{pfx}.attn.wk.w")));
            let v_all = matmul(&n, self.p(&format!("{pfx}.attn.wv.w")));
            let window = if layer % 2 == 1 { cfg.local_window } else { None };

            let mut ctx = vec![vec![0.0; d]; s];
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let mut q: Mat = q_all.iter().map(|r| r[cols.clone()].to_vec()).collect();
                let mut k: Mat = k_all.iter().map(|r| r[cols.clone()].to_vec()).collect();
                let v: Mat = v_all.iter().map(|r| r[cols.clone()].to_vec()).collect();
                for (i, row) in q.iter_mut().enumerate() {
                    rope_row(row, i, cfg.rope_base);
                }
                for (i, row) in k.iter_mut().enumerate() {
                    rope_row(row, i, cfg.rope_base);
                }

                for i in 0..s {
                    let mut scores = vec![f64::NEG_INFINITY; s];
                    for j in 0..s {
                        let masked = pad[j]
                            || window.map(|w| i.abs_diff(j) > w).unwrap_or(false);
                        if !masked {
                            let dot: f64 =
                                (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>();
                            scores[j] = dot / (dh as f64).sqrt();
                        }
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut weights = vec![0.0; s];
                    if max > f64::NEG_INFINITY {
                        let mut sum = 0.0;
                        for j in 0..s {
                            if scores[j] > f64::NEG_INFINITY {
                                weights[j] = (scores[j] - max).exp();
                                sum += weights[j];
                            }
                        }
                        for w in &mut weights {
                            *w /= sum;
                        }
                    }
                    for j in 0..s {
                        if weights[j] != 0.0 {
                            for c in 0..dh {
                                ctx[i][cols.start + c] += weights[j] * v[j][c];
                            }
                        }
                    }
                }
            }
            let out = matmul(&ctx, self.p(&format!("{pfx}.attn.wo.w")));
            for i in 0..s {
                for c in 0..d {
                    x[i][c] += out[i][c];
                }
            }

            // feed-forward
            let n = layernorm(
                &x,
                self.p(&format!("{pfx}.ffn.norm.gamma")),
                self.p(&format!("{pfx}.ffn.norm.beta")),
            );
            let a = matmul(&n, self.p(&format!("{pfx}.ffn.gate.w")));
            let u = matmul(&n, self.p(&format!("{pfx}.ffn.up.w")));
            let h: Mat = a
                .iter()
                .zip(&u)
                .map(|(ar, ur)| ar.iter().zip(ur).map(|(&av, &uv)| gelu(av) * uv).collect())
                .collect();
            let down = matmul(&h, self.p(&format!("{pfx}.ffn.down.w")));
            for i in 0..s {
                for c in 0..d {
                    x[i][c] += down[i][c];
                }
            }
        }
        x
    }

    /// Token logits, pianoroll and chromagram predictions.
    pub fn outputs(&self, ids: &[TokenIds]) -> (Mat, Mat, Mat) {
        let h = self.forward(ids);
        let mut token = matmul(&h, self.p("head.token.w"));
        add_bias(&mut token, self.p("head.token.b"));
        let mut pr = matmul(&h, self.p("head.pr.w"));
        add_bias(&mut pr, self.p("head.pr.b"));
        let mut cm = matmul(&h, self.p("head.cm.w"));
        add_bias(&mut cm, self.p("head.cm.b"));
        (token, pr, cm)
    }

    /// Full pre-training loss, matching the spec's definition.
    pub fn loss(
        &self,
        ids: &[TokenIds],
        record: &CorruptionRecord,
        targets: Option<&SegmentTargets>,
        n_real: usize,
    ) -> f64 {
        let (token_logits, pr, cm) = self.outputs(ids);

        let mut token_ce = 0.0;
        for (&idx, original) in record.corrupted_indices.iter().zip(&record.originals) {
            let mut offset = 0;
            for attr in ATTRS {
                let k = VocabSpec::cardinality(attr) as usize;
                let block = &token_logits[idx][offset..offset + k];
                let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + block.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                token_ce += lse - block[original.attr_id(attr) as usize];
                offset += k;
            }
        }
        if !record.corrupted_indices.is_empty() {
            token_ce /= record.corrupted_indices.len() as f64;
        }

        let mut roll = 0.0;
        if let Some(targets) = targets {
            for note in 0..n_real {
                let t = targets.for_note(note);
                let row = t.local_row as usize;
                let mut l_n = 0.0;
                let mut acc = 0.0;
                for (j, &tv) in t.pr.iter().enumerate() {
                    let diff = pr[note][j] - tv as f64;
                    acc += diff * diff;
                }
                l_n += acc / (N_TATUMS * N_PITCH) as f64;
                acc = 0.0;
                for (j, &tv) in t.cm.iter().enumerate() {
                    let diff = cm[note][j] - tv as f64;
                    acc += diff * diff;
                }
                l_n += acc / (N_TATUMS * N_CHROMA) as f64;
                acc = 0.0;
                for j in 0..N_PITCH {
                    let idx = row * N_PITCH + j;
                    let diff = pr[note][idx] - t.pr[idx] as f64;
                    acc += diff * diff;
                }
                l_n += acc / N_PITCH as f64;
                acc = 0.0;
                for j in 0..N_CHROMA {
                    let idx = row * N_CHROMA + j;
                    let diff = cm[note][idx] - t.cm[idx] as f64;
                    acc += diff * diff;
                }
                l_n += acc / N_CHROMA as f64;
                roll += l_n / n_real as f64;
            }
        }
        token_ce + roll
    }
}

pub fn max_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
