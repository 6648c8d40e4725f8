use numkit::init::xavier_uniform;
use numkit::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial::{ElectrodeLayout, RegionScheme, SpatialParams};

use crate::config::{GraphNormMode, ModelConfig};
use crate::error::{MvgtError, Result};

const LN_EPS: f64 = 1e-5;
const GRAPH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct NormParams {
    alpha: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LayerParams {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
}

/// Spatial encodings evaluated once and reused by many segment passes.
#[derive(Clone, Debug)]
pub struct SpatialValues {
    /// `[n × d]`
    pub centrality: Tensor,
    /// `[n × d]`
    pub region: Tensor,
    /// `[n × n × M]`
    pub bias: Tensor,
}

/// Encoding terms as seen by one segment's tape. Disabled terms are zero
/// constants, so every configuration runs the same arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct EncodingVars {
    /// `[tokens × d]`
    pub centrality: Var,
    /// `[tokens × d]`
    pub region: Var,
    /// `[tokens × tokens × M]`
    pub bias: Var,
}

/// The graph transformer: parameters, geometry and configuration.
#[derive(Clone, Debug)]
pub struct Mvgt {
    config: ModelConfig,
    layout: ElectrodeLayout,
    scheme: RegionScheme,
    store: ParamStore,
    norm: NormParams,
    w_x: ParamId,
    spatial: Option<SpatialParams>,
    layers: Vec<LayerParams>,
    final_gain: ParamId,
    final_bias: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl Mvgt {
    /// Registers every parameter with a fixed name and order; weights are
    /// Xavier-uniform from `seed`, norms start at identity.
    pub fn new(
        config: ModelConfig,
        layout: ElectrodeLayout,
        scheme: RegionScheme,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let scheme = scheme.restrict(&layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = layout.len();
        let (_, width) = config.token_shape(n);
        let feat = config.t * config.f;
        let d = config.d;

        let norm = NormParams {
            alpha: store.insert("graph_norm.alpha", Tensor::ones(&[feat]))?,
            gamma: store.insert("graph_norm.gamma", Tensor::ones(&[feat]))?,
            beta: store.insert("graph_norm.beta", Tensor::zeros(&[feat]))?,
        };
        let w_x = store.insert("embed.w_x", xavier_uniform(&mut rng, width, d))?;
        let spatial = if config.ablation.use_inverted {
            Some(SpatialParams::register(
                &mut store,
                &layout,
                &scheme,
                config.k,
                d,
                config.heads,
                &mut rng,
            )?)
        } else {
            None
        };
        let hidden = config.ffn_multiplier * d;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerParams {
                ln1_gain: store.insert(p("ln1.gain"), Tensor::ones(&[d]))?,
                ln1_bias: store.insert(p("ln1.bias"), Tensor::zeros(&[d]))?,
                w_q: store.insert(p("attn.w_q"), xavier_uniform(&mut rng, d, d))?,
                w_k: store.insert(p("attn.w_k"), xavier_uniform(&mut rng, d, d))?,
                w_v: store.insert(p("attn.w_v"), xavier_uniform(&mut rng, d, d))?,
                w_o: store.insert(p("attn.w_o"), xavier_uniform(&mut rng, d, d))?,
                ln2_gain: store.insert(p("ln2.gain"), Tensor::ones(&[d]))?,
                ln2_bias: store.insert(p("ln2.bias"), Tensor::zeros(&[d]))?,
                ffn_w1: store.insert(p("ffn.w1"), xavier_uniform(&mut rng, d, hidden))?,
                ffn_b1: store.insert(p("ffn.b1"), Tensor::zeros(&[hidden]))?,
                ffn_w2: store.insert(p("ffn.w2"), xavier_uniform(&mut rng, hidden, d))?,
                ffn_b2: store.insert(p("ffn.b2"), Tensor::zeros(&[d]))?,
            });
        }
        let final_gain = store.insert("final_ln.gain", Tensor::ones(&[d]))?;
        let final_bias = store.insert("final_ln.bias", Tensor::zeros(&[d]))?;
        let head_w = store.insert("head.w", xavier_uniform(&mut rng, d, config.n_classes))?;
        let head_b = store.insert("head.b", Tensor::zeros(&[config.n_classes]))?;
        Ok(Mvgt {
            config,
            layout,
            scheme,
            store,
            norm,
            w_x,
            spatial,
            layers,
            final_gain,
            final_bias,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn scheme(&self) -> &RegionScheme {
        &self.scheme
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_channels(&self) -> usize {
        self.layout.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.config.token_shape(self.n_channels()).0
    }

    /// Flattened length of one input segment, `n × T·f`.
    pub fn segment_len(&self) -> usize {
        self.n_channels() * self.config.t * self.config.f
    }

    pub fn spatial_params(&self) -> Option<&SpatialParams> {
        self.spatial.as_ref()
    }

    /// Records the spatial encodings on `tape`. `None` when the model has
    /// no enabled spatial term.
    pub fn spatial_forward(&self, tape: &mut Tape) -> Result<Option<spatial::SpatialVars>> {
        match &self.spatial {
            Some(sp) if self.config.ablation.any_spatial() => Ok(Some(sp.forward(tape, &self.store)?)),
            _ => Ok(None),
        }
    }

    /// Spatial encodings evaluated on a scratch tape.
    pub fn spatial_values(&self) -> Result<Option<SpatialValues>> {
        let mut tape = Tape::new();
        Ok(self.spatial_forward(&mut tape)?.map(|v| SpatialValues {
            centrality: tape.tensor(v.centrality),
            region: tape.tensor(v.region),
            bias: tape.tensor(v.bias),
        }))
    }

    /// Places encoding terms on `tape`, as zeros where the component is
    /// disabled. With `track`, enabled terms are gradient-tracking leaves
    /// whose adjoints can be read back from the segment's [`numkit::Gradients`].
    pub fn encoding_leaves(
        &self,
        tape: &mut Tape,
        values: Option<&SpatialValues>,
        track: bool,
    ) -> Result<EncodingVars> {
        let a = self.config.ablation;
        let (tok, d, m) = (self.n_tokens(), self.config.d, self.config.heads);
        let mut place = |on: bool, t: Option<&Tensor>, shape: &[usize]| -> Result<Var> {
            match (on, t) {
                (true, Some(t)) => {
                    let mut t = t.clone();
                    t.set_requires_grad(track);
                    Ok(tape.leaf(&t))
                }
                (true, None) => Err(MvgtError::Config("spatial encodings requested but not computed".into())),
                (false, _) => Ok(tape.zeros(shape)),
            }
        };
        Ok(EncodingVars {
            centrality: place(a.use_centrality, values.map(|v| &v.centrality), &[tok, d])?,
            region: place(a.use_bre, values.map(|v| &v.region), &[tok, d])?,
            bias: place(a.use_gse, values.map(|v| &v.bias), &[tok, tok, m])?,
        })
    }

    /// Encoding terms wired straight to spatial vars on the same tape.
    pub fn encoding_vars(&self, tape: &mut Tape, sv: Option<spatial::SpatialVars>) -> Result<EncodingVars> {
        let a = self.config.ablation;
        let (tok, d, m) = (self.n_tokens(), self.config.d, self.config.heads);
        let pick = |tape: &mut Tape, on: bool, v: Option<Var>, shape: &[usize]| match (on, v) {
            (true, Some(v)) => v,
            _ => tape.zeros(shape),
        };
        Ok(EncodingVars {
            centrality: pick(tape, a.use_centrality, sv.map(|s| s.centrality), &[tok, d]),
            region: pick(tape, a.use_bre, sv.map(|s| s.region), &[tok, d]),
            bias: pick(tape, a.use_gse, sv.map(|s| s.bias), &[tok, tok, m]),
        })
    }

    /// Per-feature normalisation of one `[n × T·f]` segment.
    pub fn graph_norm(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (n, feat) = (s[0], s[1]);
        let gamma = tape.param(&self.store, self.norm.gamma);
        let beta = tape.param(&self.store, self.norm.beta);
        let z = match self.config.graph_norm {
            GraphNormMode::Standard => {
                let alpha = tape.param(&self.store, self.norm.alpha);
                let mean = tape.mean_axis(x, 0)?;
                let shift = tape.mul(alpha, mean)?;
                let shift = tape.broadcast(shift, n)?;
                let centred = tape.sub(x, shift)?;
                let sq = tape.mul(centred, centred)?;
                let var = tape.mean_axis(sq, 0)?;
                let var = tape.add_scalar(var, GRAPH_NORM_EPS);
                let sd = tape.sqrt(var);
                let sd = tape.broadcast(sd, n)?;
                tape.div(centred, sd)?
            }
            GraphNormMode::MinMax => {
                let v = tape.value(x);
                let mut lo = vec![f64::INFINITY; feat];
                let mut hi = vec![f64::NEG_INFINITY; feat];
                for row in v.chunks(feat) {
                    for j in 0..feat {
                        lo[j] = lo[j].min(row[j]);
                        hi[j] = hi[j].max(row[j]);
                    }
                }
                let scale: Vec<f64> = (0..feat).map(|j| 1.0 / (hi[j] - lo[j] + GRAPH_NORM_EPS)).collect();
                let offset: Vec<f64> = (0..feat).map(|j| -lo[j] * scale[j]).collect();
                let scale = tape.constant(&[feat], scale)?;
                let offset = tape.constant(&[feat], offset)?;
                let scale = tape.broadcast(scale, n)?;
                let z = tape.mul(x, scale)?;
                tape.add_row(z, offset)?
            }
        };
        let gamma = tape.broadcast(gamma, n)?;
        let z = tape.mul(z, gamma)?;
        Ok(tape.add_row(z, beta)?)
    }

    /// Arranges a normalised `[n × T·f]` segment into tokens: channels in
    /// the inverted embedding, time steps (`[T × n·f]`) otherwise.
    pub fn tokenize(&self, tape: &mut Tape, xn: Var) -> Result<Var> {
        if self.config.ablation.use_inverted {
            return Ok(xn);
        }
        let (n, t, f) = (self.n_channels(), self.config.t, self.config.f);
        let steps: Vec<Var> = (0..t)
            .map(|tau| {
                let s = tape.slice_lastdim(xn, tau * f, f)?;
                tape.reshape(s, &[1, n * f])
            })
            .collect::<numkit::Result<_>>()?;
        if steps.len() == 1 {
            return Ok(steps[0]);
        }
        Ok(tape.concat(&steps, 0)?)
    }

    /// `H0 = tokens·W_X + c + r`.
    pub fn encode_nodes(&self, tape: &mut Tape, tokens: Var, enc: &EncodingVars) -> Result<Var> {
        let w_x = tape.param(&self.store, self.w_x);
        let h = tape.matmul(tokens, w_x)?;
        let h = tape.add(h, enc.centrality)?;
        Ok(tape.add(h, enc.region)?)
    }

    /// Multi-head attention with an additive per-head bias. Post-softmax
    /// maps are appended to `attention` when given.
    fn attention(
        &self,
        tape: &mut Tape,
        x: Var,
        lp: &LayerParams,
        bias: &[Var],
        attention: &mut Option<&mut Vec<f64>>,
        at: (usize, usize),
    ) -> Result<Var> {
        let dh = self.config.head_dim();
        let w_q = tape.param(&self.store, lp.w_q);
        let w_k = tape.param(&self.store, lp.w_k);
        let w_v = tape.param(&self.store, lp.w_v);
        let q = tape.matmul(x, w_q)?;
        let k = tape.matmul(x, w_k)?;
        let v = tape.matmul(x, w_v)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(bias.len());
        for (m, &b) in bias.iter().enumerate() {
            let (qm, km, vm) = if bias.len() == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_lastdim(q, m * dh, dh)?,
                    tape.slice_lastdim(k, m * dh, dh)?,
                    tape.slice_lastdim(v, m * dh, dh)?,
                )
            };
            let kt = tape.transpose(km)?;
            let s = tape.matmul(qm, kt)?;
            let s = tape.scale(s, scale);
            let s = tape.add(s, b)?;
            if tape.value(s).iter().any(|v| !v.is_finite()) {
                return Err(MvgtError::NonFinite(format!(
                    "attention logits at recycle {}, layer {}, head {m}",
                    at.0, at.1
                )));
            }
            let a = tape.softmax(s)?;
            if let Some(buf) = attention.as_deref_mut() {
                buf.extend_from_slice(tape.value(a));
            }
            heads.push(tape.matmul(a, vm)?);
        }
        let z = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_lastdim(&heads)?
        };
        let w_o = tape.param(&self.store, lp.w_o);
        Ok(tape.matmul(z, w_o)?)
    }

    /// Pre-LN block: `H' = MHA(LN(H)) + H`, `out = FFN(LN(H')) + H'`.
    fn block(
        &self,
        tape: &mut Tape,
        h: Var,
        lp: &LayerParams,
        bias: &[Var],
        attention: &mut Option<&mut Vec<f64>>,
        at: (usize, usize),
    ) -> Result<Var> {
        let p = self.config.dropout;
        let g1 = tape.param(&self.store, lp.ln1_gain);
        let b1 = tape.param(&self.store, lp.ln1_bias);
        let x = tape.layer_norm(h, g1, b1, LN_EPS)?;
        let a = self.attention(tape, x, lp, bias, attention, at)?;
        let a = tape.dropout(a, p)?;
        let h1 = tape.add(h, a)?;

        let g2 = tape.param(&self.store, lp.ln2_gain);
        let b2 = tape.param(&self.store, lp.ln2_bias);
        let y = tape.layer_norm(h1, g2, b2, LN_EPS)?;
        let w1 = tape.param(&self.store, lp.ffn_w1);
        let fb1 = tape.param(&self.store, lp.ffn_b1);
        let w2 = tape.param(&self.store, lp.ffn_w2);
        let fb2 = tape.param(&self.store, lp.ffn_b2);
        let f = tape.matmul(y, w1)?;
        let f = tape.add_row(f, fb1)?;
        let f = tape.gelu(f);
        let f = tape.dropout(f, p)?;
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, fb2)?;
        Ok(tape.add(h1, f)?)
    }

    /// The recycled block stack applied to `H0`.
    pub fn encoder(
        &self,
        tape: &mut Tape,
        h0: Var,
        enc: &EncodingVars,
        mut attention: Option<&mut Vec<f64>>,
    ) -> Result<Var> {
        let tok = self.n_tokens();
        let bias: Vec<Var> = if self.config.heads == 1 {
            vec![tape.reshape(enc.bias, &[tok, tok])?]
        } else {
            (0..self.config.heads)
                .map(|m| {
                    let s = tape.slice_lastdim(enc.bias, m, 1)?;
                    tape.reshape(s, &[tok, tok])
                })
                .collect::<numkit::Result<_>>()?
        };
        let mut h = h0;
        for r in 0..self.config.recycles {
            if r > 0 && self.config.detach_recycles {
                h = tape.detach(h);
            }
            for (l, lp) in self.layers.iter().enumerate() {
                h = self.block(tape, h, lp, &bias, &mut attention, (r, l))?;
            }
        }
        Ok(h)
    }

    /// Final layer norm, mean over tokens, then a linear map to class
    /// logits `[1 × C]`.
    pub fn readout(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let d = self.config.d;
        let g = tape.param(&self.store, self.final_gain);
        let b = tape.param(&self.store, self.final_bias);
        let h = tape.layer_norm(h, g, b, LN_EPS)?;
        let pooled = tape.mean_axis(h, 0)?;
        let pooled = tape.reshape(pooled, &[1, d])?;
        let w = tape.param(&self.store, self.head_w);
        let b = tape.param(&self.store, self.head_b);
        let z = tape.matmul(pooled, w)?;
        Ok(tape.add_row(z, b)?)
    }

    /// Full pass for one `[n × T·f]` segment, returning `[1 × C]` logits.
    pub fn forward_segment(
        &self,
        tape: &mut Tape,
        segment: &[f64],
        enc: &EncodingVars,
        attention: Option<&mut Vec<f64>>,
    ) -> Result<Var> {
        if segment.len() != self.segment_len() {
            return Err(MvgtError::Data(format!(
                "segment holds {} values; model expects {} channels × {}",
                segment.len(),
                self.n_channels(),
                self.config.t * self.config.f
            )));
        }
        let x = tape.constant(
            &[self.n_channels(), self.config.t * self.config.f],
            segment.to_vec(),
        )?;
        let xn = self.graph_norm(tape, x)?;
        let tokens = self.tokenize(tape, xn)?;
        let h0 = self.encode_nodes(tape, tokens, enc)?;
        let h = self.encoder(tape, h0, enc, attention)?;
        self.readout(tape, h)
    }

    /// Evaluation-mode logits `[B × C]`, row per segment.
    pub fn logits(&self, segments: &[&[f64]]) -> Result<Vec<f64>> {
        let values = self.spatial_values()?;
        let threads = crate::thread_cap().min(segments.len()).max(1);
        if threads == 1 {
            return self.logits_chunk(segments, values.as_ref());
        }
        let per = segments.len().div_ceil(threads);
        let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = segments
                .chunks(per)
                .map(|chunk| {
                    let values = values.as_ref();
                    scope.spawn(move || self.logits_chunk(chunk, values))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(segments.len() * self.config.n_classes);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    fn logits_chunk(&self, segments: &[&[f64]], values: Option<&SpatialValues>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(segments.len() * self.config.n_classes);
        let mut tape = Tape::new();
        for seg in segments {
            let enc = self.encoding_leaves(&mut tape, values, false)?;
            let z = self.forward_segment(&mut tape, seg, &enc, None)?;
            out.extend_from_slice(tape.value(z));
            tape.clear();
        }
        Ok(out)
    }

    /// Evaluation-mode logits and post-softmax attention for one segment.
    /// The maps are `[R × L × M × tokens × tokens]`.
    pub fn forward_with_attention(&self, segment: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let values = self.spatial_values()?;
        let mut tape = Tape::new();
        let enc = self.encoding_leaves(&mut tape, values.as_ref(), false)?;
        let mut maps = Vec::new();
        let z = self.forward_segment(&mut tape, segment, &enc, Some(&mut maps))?;
        Ok((tape.value(z).to_vec(), maps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use spatial::SchemeKind;

    fn tiny(ablation: Ablation) -> Mvgt {
        let layout = ElectrodeLayout::standard_62();
        let scheme = RegionScheme::builtin(SchemeKind::Lobe).unwrap();
        let config = ModelConfig {
            d: 8,
            k: 4,
            layers: 1,
            heads: 2,
            recycles: 2,
            ablation,
            ..ModelConfig::default()
        };
        Mvgt::new(config, layout, scheme, 1).unwrap()
    }

    fn segment(model: &Mvgt) -> Vec<f64> {
        (0..model.segment_len()).map(|i| ((i * 7919) % 101) as f64 / 50.0).collect()
    }

    #[test]
    fn logits_have_class_width() {
        for a in Ablation::ROWS {
            let m = tiny(a);
            let x = segment(&m);
            let z = m.logits(&[&x, &x]).unwrap();
            assert_eq!(z.len(), 6);
            assert_eq!(z[..3], z[3..]);
        }
    }

    #[test]
    fn attention_map_count() {
        let m = tiny(Ablation::FULL);
        let (_, maps) = m.forward_with_attention(&segment(&m)).unwrap();
        assert_eq!(maps.len(), 2 * 2 * 62 * 62);
        let p = tiny(Ablation::ROWS[0]);
        let (_, maps) = p.forward_with_attention(&segment(&p)).unwrap();
        assert_eq!(maps.len(), 2 * 2 * 5 * 5);
    }

    #[test]
    fn wrong_segment_length_is_data_error() {
        let m = tiny(Ablation::FULL);
        assert!(matches!(m.logits(&[&[0.0; 3]]), Err(MvgtError::Data(_))));
    }

    #[test]
    fn parameter_names_are_stable() {
        let m = tiny(Ablation::FULL);
        let names: Vec<&str> = m.store().iter().map(|(_, n, _)| n).collect();
        assert_eq!(names[0], "graph_norm.alpha");
        assert!(names.contains(&"spatial.basis.mu"));
        assert!(names.contains(&"layers.0.ffn.w2"));
        assert_eq!(*names.last().unwrap(), "head.b");
        assert!(tiny(Ablation::ROWS[0]).store().id("spatial.basis.mu").is_none());
    }
}
