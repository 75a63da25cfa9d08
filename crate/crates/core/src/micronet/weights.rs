use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LayerKind, MicronetError, NetworkSpec};

const MANIFEST_MAGIC: &str = "microbotnet-weights v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn describe(name: &str, shape: &[usize]) -> String {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        format!("{name} [{}]", dims.join("x"))
    }
}

/// Every weight of a network, in the order [`enumerate_tensors`] lists them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub tensors: Vec<Tensor>,
}

/// Deterministic tensor enumeration: names and shapes, in execution order.
///
/// Convolutions are `[out, in / groups, k, k]`, SE projections `[out, in]`,
/// and each batch norm contributes `gamma`, `beta`, `mean`, `var`.
pub fn enumerate_tensors(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let bn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize| {
        for field in ["gamma", "beta", "mean", "var"] {
            out.push((format!("{prefix}.bn.{field}"), vec![c]));
        }
    };
    let se = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize, r: usize| {
        out.push((format!("{prefix}.se.fc1"), vec![r, c]));
        out.push((format!("{prefix}.se.fc2"), vec![c, r]));
    };
    for l in &spec.layers {
        let n = &l.name;
        let cin = l.in_shape.c;
        match l.kind {
            LayerKind::Conv | LayerKind::PointwiseConv => {
                out.push((format!("{n}.weight"), vec![l.out_channels, cin, l.kernel, l.kernel]));
                if l.batch_norm {
                    bn(&mut out, n, l.out_channels);
                }
                if l.use_se {
                    se(&mut out, n, l.out_channels, l.se_channels);
                }
            }
            LayerKind::Bneck => {
                let e = l.exp_size;
                out.push((format!("{n}.expand.weight"), vec![e, cin, 1, 1]));
                bn(&mut out, &format!("{n}.expand"), e);
                out.push((format!("{n}.dw.weight"), vec![e, 1, l.kernel, l.kernel]));
                bn(&mut out, &format!("{n}.dw"), e);
                if l.use_se {
                    se(&mut out, n, e, l.se_channels);
                }
                out.push((format!("{n}.project.weight"), vec![l.out_channels, e, 1, 1]));
                bn(&mut out, &format!("{n}.project"), l.out_channels);
            }
            LayerKind::Pool => {}
            LayerKind::Linear => {
                out.push((format!("{n}.weight"), vec![l.out_channels, l.in_shape.numel()]));
                out.push((format!("{n}.bias"), vec![l.out_channels]));
            }
        }
    }
    out
}

impl WeightBundle {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self::from_fn(spec, |_, _, n| vec![0.0; n])
    }

    /// He-normal convolutions, `N(0, 1/fan_in)` projections, identity batch
    /// norm, zero bias.
    pub fn random(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        Self::from_fn(spec, |name, shape, n| {
            if name.ends_with(".bn.gamma") || name.ends_with(".bn.var") {
                return vec![1.0; n];
            }
            if name.contains(".bn.") || name.ends_with(".bias") {
                return vec![0.0; n];
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if name.ends_with(".weight") && shape.len() == 4 { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive fan-in");
            (0..n).map(|_| normal.sample(rng) as f32).collect()
        })
    }

    fn from_fn(spec: &NetworkSpec, mut f: impl FnMut(&str, &[usize], usize) -> Vec<f32>) -> Self {
        let tensors = enumerate_tensors(spec)
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = f(&name, &shape, n);
                Tensor { name, shape, data }
            })
            .collect();
        Self { tensors }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Verifies names, shapes and sizes against the spec's enumeration.
    pub fn check(&self, spec: &NetworkSpec) -> Result<(), MicronetError> {
        let want = enumerate_tensors(spec);
        for (i, (name, shape)) in want.iter().enumerate() {
            let expected = Tensor::describe(name, shape);
            let Some(t) = self.tensors.get(i) else {
                return Err(MicronetError::TensorMismatch {
                    index: i,
                    expected,
                    found: "end of bundle".into(),
                });
            };
            let n: usize = shape.iter().product();
            if &t.name != name || &t.shape != shape || t.data.len() != n {
                return Err(MicronetError::TensorMismatch {
                    index: i,
                    expected,
                    found: format!("{} with {} values", Tensor::describe(&t.name, &t.shape), t.data.len()),
                });
            }
        }
        if let Some(extra) = self.tensors.get(want.len()) {
            return Err(MicronetError::TensorMismatch {
                index: want.len(),
                expected: "end of bundle".into(),
                found: Tensor::describe(&extra.name, &extra.shape),
            });
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MicronetError + '_ {
    move |source| MicronetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a text manifest at `manifest` and the little-endian `f32` blob next
/// to it with extension `.bin`.
pub fn save_weights(bundle: &WeightBundle, manifest: impl AsRef<Path>) -> Result<(), MicronetError> {
    let manifest = manifest.as_ref();
    let blob_path = manifest.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| MicronetError::Config(format!("bad manifest path {}", manifest.display())))?;
    let mut text = format!("{MANIFEST_MAGIC}\nblob {blob_name}\ntensors {}\n", bundle.tensors.len());
    let mut blob = Vec::with_capacity(bundle.num_values() * 4);
    for t in &bundle.tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        text += &format!("{} {}\n", t.name, dims.join(" "));
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(manifest, text).map_err(io_err(manifest))?;
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))
}

/// Loads a bundle and checks it against `spec`, naming the first divergent tensor.
pub fn load_weights(spec: &NetworkSpec, manifest: impl AsRef<Path>) -> Result<WeightBundle, MicronetError> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let bad = |line: usize, reason: String| MicronetError::Manifest { line, reason };
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim()) != Some(MANIFEST_MAGIC) {
        return Err(bad(1, format!("expected header {MANIFEST_MAGIC:?}")));
    }
    let field = |i: usize, key: &str| -> Result<&str, MicronetError> {
        lines
            .get(i)
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .ok_or_else(|| bad(i + 1, format!("expected `{key} ...`")))
    };
    let blob_name = field(1, "blob")?;
    let count: usize = field(2, "tensors")?
        .trim()
        .parse()
        .map_err(|e| bad(3, format!("tensor count: {e}")))?;

    let mut headers = Vec::with_capacity(count);
    for i in 0..count {
        let line_no = i + 4;
        let line = lines
            .get(i + 3)
            .ok_or_else(|| bad(line_no, format!("missing tensor {i} of {count}")))?;
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(|| bad(line_no, "empty tensor line".into()))?;
        let shape = parts
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(line_no, format!("shape of {name}: {e}")))?;
        headers.push((name.to_string(), shape));
    }

    // check structure before touching the blob so the error names the tensor
    let want = enumerate_tensors(spec);
    for (i, (name, shape)) in want.iter().enumerate() {
        let expected = Tensor::describe(name, shape);
        match headers.get(i) {
            Some((n, s)) if n == name && s == shape => {}
            Some((n, s)) => {
                return Err(MicronetError::TensorMismatch {
                    index: i,
                    expected,
                    found: Tensor::describe(n, s),
                })
            }
            None => {
                return Err(MicronetError::TensorMismatch {
                    index: i,
                    expected,
                    found: "end of manifest".into(),
                })
            }
        }
    }
    if headers.len() > want.len() {
        let (n, s) = &headers[want.len()];
        return Err(MicronetError::TensorMismatch {
            index: want.len(),
            expected: "end of manifest".into(),
            found: Tensor::describe(n, s),
        });
    }

    let blob_path = manifest.with_file_name(blob_name);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let total: usize = headers.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(MicronetError::Truncated {
            expected: total * 4,
            found: blob.len(),
        });
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let tensors = headers
        .into_iter()
        .map(|(name, shape)| {
            let n = shape.iter().product();
            let data = values.by_ref().take(n).collect();
            Tensor { name, shape, data }
        })
        .collect();
    Ok(WeightBundle { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::build_microbotnet;
    use crate::seeded_rng;

    #[test]
    fn enumeration_count_alpha_one() {
        let spec = build_microbotnet(1.0, 10).unwrap();
        // stem 1+4, bneck without SE 3*(1+4), with SE +2, 576 conv 1+4, head 1, logits 2
        let expected = 5 + 15 + 9 * 17 + 5 + 1 + 2;
        assert_eq!(enumerate_tensors(&spec).len(), expected);
    }

    #[test]
    fn learnable_values_match_param_count() {
        use crate::micronet::{count_macs, MacConvention};
        for alpha in [0.25, 1.0] {
            let spec = build_microbotnet(alpha, 10).unwrap();
            let learnable: usize = enumerate_tensors(&spec)
                .iter()
                .filter(|(n, _)| !n.ends_with(".bn.mean") && !n.ends_with(".bn.var"))
                .map(|(_, s)| s.iter().product::<usize>())
                .sum();
            assert_eq!(learnable as u64, count_macs(&spec, MacConvention::Thop).total_params);
        }
    }

    #[test]
    fn save_load_bit_identical() {
        let spec = build_microbotnet(0.32, 10).unwrap();
        let w = WeightBundle::random(&spec, &mut seeded_rng(7));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        save_weights(&w, &path).unwrap();
        let back = load_weights(&spec, &path).unwrap();
        assert_eq!(back.tensors.len(), w.tensors.len());
        for (a, b) in back.tensors.iter().zip(&w.tensors) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let spec = build_microbotnet(0.25, 10).unwrap();
        let w = WeightBundle::random(&spec, &mut seeded_rng(8));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        save_weights(&w, &path).unwrap();
        let blob = path.with_extension("bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_weights(&spec, &path), Err(MicronetError::Truncated { .. })));
    }

    #[test]
    fn wrong_spec_names_first_divergent_tensor() {
        let small = build_microbotnet(0.25, 10).unwrap();
        let big = build_microbotnet(1.0, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        save_weights(&WeightBundle::zeros(&small), &path).unwrap();
        match load_weights(&big, &path) {
            Err(MicronetError::TensorMismatch { index, expected, .. }) => {
                assert_eq!(index, 0);
                assert!(expected.starts_with("conv_0.weight [16x3x3x3]"), "{expected}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn check_detects_reordering() {
        let spec = build_microbotnet(0.25, 10).unwrap();
        let mut w = WeightBundle::zeros(&spec);
        w.tensors.swap(1, 2);
        let err = w.check(&spec).unwrap_err().to_string();
        assert!(err.contains("#1") && err.contains("conv_0.bn.gamma"), "{err}");
    }
}
