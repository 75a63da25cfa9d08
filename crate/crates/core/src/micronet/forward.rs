use super::{Activation, LayerKind, LayerSpec, MicronetError, NetworkSpec, Shape, WeightBundle};

const BN_EPS: f32 = 1e-5;

/// Channel-major (`C x H x W`) activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, MicronetError> {
        if data.len() != shape.numel() {
            return Err(MicronetError::Structure {
                layer: "input".into(),
                reason: format!("{} values for shape {shape}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape.h * self.shape.w;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Zero-padded ("same") convolution. `weight` is `[out, in / groups, k, k]`.
fn conv2d(x: &FeatureMap, weight: &[f32], out_c: usize, k: usize, stride: usize, groups: usize) -> FeatureMap {
    let Shape { h, w, c } = x.shape;
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad = (k / 2) as isize;
    let cin_g = c / groups;
    let cout_g = out_c / groups;
    let mut out = FeatureMap::zeros(Shape::new(oh, ow, out_c));
    for oc in 0..out_c {
        let g = oc / cout_g;
        let dst = &mut out.data[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..cin_g {
            let src = x.plane(g * cin_g + ic);
            let kern = &weight[(oc * cin_g + ic) * k * k..(oc * cin_g + ic + 1) * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ky in 0..k {
                        let iy = (oy * stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += kern[ky * k + kx] * src[iy as usize * w + ix as usize];
                        }
                    }
                    dst[oy * ow + ox] += acc;
                }
            }
        }
    }
    out
}

fn batch_norm(x: &mut FeatureMap, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) {
    let n = x.shape.h * x.shape.w;
    for c in 0..x.shape.c {
        let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
        let shift = beta[c] - mean[c] * scale;
        for v in &mut x.data[c * n..(c + 1) * n] {
            *v = *v * scale + shift;
        }
    }
}

fn activate(x: &mut FeatureMap, act: Activation) {
    if act != Activation::None {
        x.data.iter_mut().for_each(|v| *v = act.apply(*v));
    }
}

fn squeeze_excite(x: &mut FeatureMap, fc1: &[f32], fc2: &[f32], r: usize) {
    let c = x.shape.c;
    let n = x.shape.h * x.shape.w;
    let pooled: Vec<f32> = (0..c).map(|i| x.plane(i).iter().sum::<f32>() / n as f32).collect();
    let hidden: Vec<f32> = (0..r)
        .map(|j| {
            let z: f32 = (0..c).map(|i| fc1[j * c + i] * pooled[i]).sum();
            z.max(0.0)
        })
        .collect();
    for i in 0..c {
        let z: f32 = (0..r).map(|j| fc2[i * r + j] * hidden[j]).sum();
        let gate = (z + 3.0).clamp(0.0, 6.0) / 6.0;
        x.data[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= gate);
    }
}

struct Params<'a> {
    tensors: std::slice::Iter<'a, super::Tensor>,
}

impl<'a> Params<'a> {
    fn next(&mut self) -> &'a [f32] {
        &self.tensors.next().expect("bundle checked against spec").data
    }

    fn bn(&mut self, x: &mut FeatureMap) {
        let (g, b, m, v) = (self.next(), self.next(), self.next(), self.next());
        batch_norm(x, g, b, m, v);
    }
}

fn run_layer(l: &LayerSpec, x: FeatureMap, p: &mut Params<'_>) -> FeatureMap {
    match l.kind {
        LayerKind::Conv | LayerKind::PointwiseConv => {
            let mut y = conv2d(&x, p.next(), l.out_channels, l.kernel, l.stride, 1);
            if l.batch_norm {
                p.bn(&mut y);
            }
            if l.use_se {
                let (f1, f2) = (p.next(), p.next());
                squeeze_excite(&mut y, f1, f2, l.se_channels);
            }
            activate(&mut y, l.activation);
            y
        }
        LayerKind::Bneck => {
            let mut e = conv2d(&x, p.next(), l.exp_size, 1, 1, 1);
            p.bn(&mut e);
            activate(&mut e, l.activation);
            let mut d = conv2d(&e, p.next(), l.exp_size, l.kernel, l.stride, l.exp_size);
            p.bn(&mut d);
            if l.use_se {
                let (f1, f2) = (p.next(), p.next());
                squeeze_excite(&mut d, f1, f2, l.se_channels);
            }
            activate(&mut d, l.activation);
            let mut y = conv2d(&d, p.next(), l.out_channels, 1, 1, 1);
            p.bn(&mut y);
            if l.residual() {
                y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
            }
            y
        }
        LayerKind::Pool => {
            let out = l.out_shape();
            let k = l.kernel;
            let mut y = FeatureMap::zeros(out);
            for c in 0..out.c {
                let src = x.plane(c);
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        let mut s = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                s += src[(oy * k + ky) * x.shape.w + ox * k + kx];
                            }
                        }
                        y.data[(c * out.h + oy) * out.w + ox] = s / (k * k) as f32;
                    }
                }
            }
            y
        }
        LayerKind::Linear => {
            let (w, b) = (p.next(), p.next());
            let n = x.data.len();
            let data = (0..l.out_channels)
                .map(|o| b[o] + w[o * n..(o + 1) * n].iter().zip(&x.data).map(|(a, v)| a * v).sum::<f32>())
                .collect();
            FeatureMap {
                shape: l.out_shape(),
                data,
            }
        }
    }
}

/// Runs the network and returns every layer's output, first entry being the input.
pub fn forward_trace(
    spec: &NetworkSpec,
    weights: &WeightBundle,
    image: &[f32],
) -> Result<Vec<FeatureMap>, MicronetError> {
    weights.check(spec)?;
    let mut x = FeatureMap::new(spec.input_shape(), image.to_vec())?;
    let mut params = Params {
        tensors: weights.tensors.iter(),
    };
    let mut trace = vec![x.clone()];
    for l in &spec.layers {
        x = run_layer(l, x, &mut params);
        debug_assert_eq!(x.shape, l.out_shape(), "{}", l.name);
        trace.push(x.clone());
    }
    Ok(trace)
}

/// Logits for one channel-major `32 x 32 x 3` image.
pub fn forward(spec: &NetworkSpec, weights: &WeightBundle, image: &[f32]) -> Result<Vec<f32>, MicronetError> {
    weights.check(spec)?;
    let mut x = FeatureMap::new(spec.input_shape(), image.to_vec())?;
    let mut params = Params {
        tensors: weights.tensors.iter(),
    };
    for l in &spec.layers {
        x = run_layer(l, x, &mut params);
    }
    Ok(x.data)
}

/// Independent per-image inference over a batch, in parallel.
pub fn forward_batch(
    spec: &NetworkSpec,
    weights: &WeightBundle,
    images: &[Vec<f32>],
) -> Result<Vec<Vec<f32>>, MicronetError> {
    use rayon::prelude::*;
    images.par_iter().map(|img| forward(spec, weights, img)).collect()
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let e: Vec<f64> = logits.iter().map(|&z| (z as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
