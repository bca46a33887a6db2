use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    concat, conv_backward, conv_forward, split, upsample2, upsample2_backward, ConvCache, ConvSpec,
    Volume,
};
use super::LearnError;

/// Encoder-decoder topology. Level `l` works at `1 / 2^l` resolution with
/// `channels[l]` feature maps; every level is entered by a stride-2 3x3
/// convolution and left by nearest upsampling plus a 3x3 convolution, with a
/// skip concatenation from the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub channels: Vec<usize>,
}

impl ModelConfig {
    pub fn new(n_bins: usize, channels: Vec<usize>) -> Self {
        Self {
            in_channels: n_bins,
            out_channels: n_bins / 2,
            channels,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(LearnError::Config("channel widths must be non-empty and positive".into()));
        }
        if self.in_channels == 0 || self.out_channels * 2 != self.in_channels {
            return Err(LearnError::Config(format!(
                "out_channels ({}) must be half of in_channels ({})",
                self.out_channels, self.in_channels
            )));
        }
        Ok(())
    }

    pub fn check_dims(&self, rows: usize, cols: usize) -> Result<(), LearnError> {
        let f = 1usize << (self.n_levels() - 1);
        if rows == 0 || cols == 0 || rows % f != 0 || cols % f != 0 {
            return Err(LearnError::Shape(format!(
                "{rows}x{cols} is not divisible by {f} for {} levels",
                self.n_levels()
            )));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(24, vec![16, 32, 64, 128, 256])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer {
    pub name: String,
    pub spec: ConvSpec,
    pub offset: usize,
}

/// Layer table in parameter order: `enc0a, enc0b, (down_l, enc_l)...,
/// (up_l, dec_l)... from the deepest level, head`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    config: ModelConfig,
    layers: Vec<Layer>,
    n_params: usize,
}

struct Tape {
    caches: Vec<Option<ConvCache>>,
}

impl UNet {
    pub fn new(config: ModelConfig) -> Result<Self, LearnError> {
        config.validate()?;
        let ch = &config.channels;
        let lv = ch.len();
        let mut specs: Vec<(String, ConvSpec)> = Vec::new();
        let conv = |c_in, c_out, k, stride| ConvSpec { c_in, c_out, k, stride };
        specs.push(("enc0a".into(), conv(config.in_channels, ch[0], 3, 1)));
        specs.push(("enc0b".into(), conv(ch[0], ch[0], 3, 1)));
        for l in 1..lv {
            specs.push((format!("down{l}"), conv(ch[l - 1], ch[l], 3, 2)));
            specs.push((format!("enc{l}"), conv(ch[l], ch[l], 3, 1)));
        }
        for l in (0..lv - 1).rev() {
            specs.push((format!("up{l}"), conv(ch[l + 1], ch[l], 3, 1)));
            specs.push((format!("dec{l}"), conv(2 * ch[l], ch[l], 3, 1)));
        }
        specs.push(("head".into(), conv(ch[0], config.out_channels, 1, 1)));
        let mut offset = 0;
        let layers = specs
            .into_iter()
            .map(|(name, spec)| {
                let l = Layer { name, spec, offset };
                offset += spec.n_params();
                l
            })
            .collect();
        Ok(Self {
            config,
            layers,
            n_params: offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// (name, shape) of every weight and bias tensor in parameter order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                let s = l.spec;
                [
                    (format!("{}.weight", l.name), vec![s.c_out, s.c_in, s.k, s.k]),
                    (format!("{}.bias", l.name), vec![s.c_out]),
                ]
            })
            .collect()
    }

    /// He-normal weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for (i, l) in self.layers.iter().enumerate() {
            let fan_in = (l.spec.c_in * l.spec.k * l.spec.k) as f64;
            let gain = if i + 1 == self.layers.len() { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite std");
            for w in &mut p[l.offset..l.offset + l.spec.n_weights()] {
                *w = normal.sample(&mut rng);
            }
        }
        p
    }

    fn slice<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        let l = &self.layers[i];
        &params[l.offset..l.offset + l.spec.n_params()]
    }

    fn check_input(&self, params: &[f64], x: &Volume) -> Result<(), LearnError> {
        if params.len() != self.n_params {
            return Err(LearnError::Shape(format!(
                "{} parameters for a {}-parameter model",
                params.len(),
                self.n_params
            )));
        }
        if x.channels != self.config.in_channels {
            return Err(LearnError::Shape(format!(
                "{} input channels, model expects {}",
                x.channels, self.config.in_channels
            )));
        }
        self.config.check_dims(x.rows, x.cols)
    }

    pub fn forward(&self, params: &[f64], x: &Volume) -> Result<Volume, LearnError> {
        self.check_input(params, x)?;
        Ok(self.run(params, x, false).0)
    }

    fn run(&self, params: &[f64], x: &Volume, record: bool) -> (Volume, Tape) {
        let lv = self.config.n_levels();
        let mut tape = Tape {
            caches: (0..self.layers.len()).map(|_| None).collect(),
        };
        let step = |i: usize, h: &Volume, relu: bool, tape: &mut Tape| {
            let (y, cache) = conv_forward(&self.layers[i].spec, self.slice(params, i), h, relu);
            if record {
                tape.caches[i] = Some(cache);
            }
            y
        };
        let mut skips = Vec::with_capacity(lv);
        let mut h = step(0, x, true, &mut tape);
        h = step(1, &h, true, &mut tape);
        for l in 1..lv {
            skips.push(h);
            h = step(2 * l, &skips[l - 1], true, &mut tape);
            h = step(2 * l + 1, &h, true, &mut tape);
        }
        let mut i = 2 * lv;
        for l in (0..lv - 1).rev() {
            h = step(i, &upsample2(&h), true, &mut tape);
            h = step(i + 1, &concat(&h, &skips[l]), true, &mut tape);
            i += 2;
        }
        let out = step(i, &h, false, &mut tape);
        (out, tape)
    }

    /// Mean squared error against `target` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradients(
        &self,
        params: &[f64],
        x: &Volume,
        target: &Volume,
    ) -> Result<(f64, Vec<f64>), LearnError> {
        self.check_input(params, x)?;
        if target.shape() != [self.config.out_channels, x.rows, x.cols] {
            return Err(LearnError::Shape(format!(
                "target shape {:?}, expected {:?}",
                target.shape(),
                [self.config.out_channels, x.rows, x.cols]
            )));
        }
        let (out, mut tape) = self.run(params, x, true);
        let n = out.data.len() as f64;
        let mut dout = out.clone();
        let mut loss = 0.0;
        for (d, (&o, &t)) in dout.data.iter_mut().zip(out.data.iter().zip(&target.data)) {
            loss += (o - t) * (o - t);
            *d = 2.0 * (o - t) / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(LearnError::NonFinite(format!("loss {loss}")));
        }

        let lv = self.config.n_levels();
        let mut grad = vec![0.0; self.n_params];
        let back = |i: usize, dy: Volume, need_dx: bool, tape: &mut Tape, grad: &mut Vec<f64>| {
            let l = &self.layers[i];
            let cache = tape.caches[i].take().expect("forward cache");
            conv_backward(
                &l.spec,
                self.slice(params, i),
                &cache,
                dy,
                &mut grad[l.offset..l.offset + l.spec.n_params()],
                need_dx,
            )
        };
        let head = self.layers.len() - 1;
        let mut dh = back(head, dout, true, &mut tape, &mut grad).unwrap();
        let mut dskips: Vec<Option<Volume>> = (0..lv).map(|_| None).collect();
        // decoder in reverse: level 0 was applied last
        for l in 0..lv - 1 {
            let i = 2 * lv + 2 * (lv - 2 - l);
            let dcat = back(i + 1, dh, true, &mut tape, &mut grad).unwrap();
            let (dup, dskip) = split(dcat, self.config.channels[l]);
            dskips[l] = Some(dskip);
            dh = upsample2_backward(&back(i, dup, true, &mut tape, &mut grad).unwrap());
        }
        for l in (1..lv).rev() {
            dh = back(2 * l + 1, dh, true, &mut tape, &mut grad).unwrap();
            dh = back(2 * l, dh, true, &mut tape, &mut grad).unwrap();
            if let Some(ds) = dskips[l - 1].take() {
                for (a, b) in dh.data.iter_mut().zip(&ds.data) {
                    *a += b;
                }
            }
        }
        dh = back(1, dh, true, &mut tape, &mut grad).unwrap();
        back(0, dh, false, &mut tape, &mut grad);
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_volume(c: usize, r: usize, w: usize, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume {
            channels: c,
            rows: r,
            cols: w,
            data: (0..c * r * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_params_zero_output() {
        let net = UNet::new(ModelConfig::new(4, vec![4, 8])).unwrap();
        let x = random_volume(4, 16, 16, 1);
        let y = net.forward(&vec![0.0; net.n_params()], &x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_contract_and_determinism() {
        let net = UNet::new(ModelConfig::new(8, vec![4, 4, 8])).unwrap();
        let p = net.init_params(3);
        let x = random_volume(8, 96, 96, 2);
        let a = net.forward(&p, &x).unwrap();
        assert_eq!(a.shape(), [4, 96, 96]);
        assert_eq!(a, net.forward(&p, &x).unwrap());
        assert!(net.forward(&p, &random_volume(8, 90, 96, 2)).is_err());
        assert!(net.forward(&p, &random_volume(6, 96, 96, 2)).is_err());
    }

    #[test]
    fn shapes_across_levels() {
        for levels in 2..=5 {
            let net = UNet::new(ModelConfig::new(2, vec![2; levels])).unwrap();
            let p = net.init_params(levels as u64);
            for n in [32, 64, 96] {
                let x = random_volume(2, n, n, 5);
                assert_eq!(net.forward(&p, &x).unwrap().shape(), [1, n, n]);
            }
        }
    }

    #[test]
    fn self_target_has_zero_loss() {
        let net = UNet::new(ModelConfig::new(4, vec![3, 5])).unwrap();
        let p = net.init_params(9);
        let x = random_volume(4, 8, 8, 4);
        let y = net.forward(&p, &x).unwrap();
        let (loss, g) = net.loss_and_gradients(&p, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        // doubling every residual quadruples the loss
        let t1 = random_volume(2, 8, 8, 6);
        let t2 = Volume {
            data: y.data.iter().zip(&t1.data).map(|(o, t)| o - 2.0 * (o - t)).collect(),
            ..t1.clone()
        };
        let l1 = net.loss_and_gradients(&p, &x, &t1).unwrap().0;
        let l2 = net.loss_and_gradients(&p, &x, &t2).unwrap().0;
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2);
    }

    #[test]
    fn gradients_match_central_differences() {
        for (levels, widths) in [(2usize, vec![2usize, 2]), (3, vec![2, 3, 2])] {
            let net = UNet::new(ModelConfig::new(2, widths)).unwrap();
            assert_eq!(net.config().n_levels(), levels);
            let mut p = net.init_params(11);
            // non-zero biases so every bias path is exercised
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            for v in p.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            let x = random_volume(2, 8, 8, 13);
            let t = random_volume(1, 8, 8, 14);
            let (_, g) = net.loss_and_gradients(&p, &x, &t).unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] = p[i] + h;
                let lp = net.loss_and_gradients(&q, &x, &t).unwrap().0;
                q[i] = p[i] - h;
                let lm = net.loss_and_gradients(&q, &x, &t).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(g[i].abs());
                if scale < 1e-7 {
                    assert!((fd - g[i]).abs() < 1e-9, "param {i}: {fd} vs {}", g[i]);
                    continue;
                }
                worst = worst.max((fd - g[i]).abs() / scale);
            }
            assert!(worst < 1e-4, "worst relative error {worst}");
        }
    }
}
