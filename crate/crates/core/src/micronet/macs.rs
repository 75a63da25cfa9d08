use serde::Serialize;

use super::{LayerKind, LayerSpec, NetworkSpec, Shape};

/// Primitive operations a layer lowers to. Costs are attached by a
/// [`MacConvention`], so the same lowering serves every convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Conv {
        input: Shape,
        output: Shape,
        kernel: usize,
        groups: usize,
    },
    BatchNorm { output: Shape },
    /// Average pool producing `output`, each output averaging `window` inputs.
    AvgPool { output: Shape, window: usize },
    Linear { inputs: usize, outputs: usize, bias: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MacConvention {
    /// Counting rules of the THOP profiler used for the published tables:
    /// convolutions count multiplies, batch norm 2 ops per element, average
    /// pools `window + 1` ops per output, linear layers `(2 in - 1) out`.
    #[default]
    Thop,
    /// Multiplies of convolutions and linear layers only.
    Multiplies,
}

impl MacConvention {
    pub fn cost(self, op: &Op) -> u64 {
        let n = |s: &Shape| s.numel() as u64;
        match (self, op) {
            (
                _,
                Op::Conv {
                    input,
                    output,
                    kernel,
                    groups,
                },
            ) => n(output) * (kernel * kernel * input.c / groups) as u64,
            (MacConvention::Thop, Op::BatchNorm { output }) => 2 * n(output),
            (MacConvention::Thop, Op::AvgPool { output, window }) => (*window as u64 + 1) * n(output),
            (MacConvention::Thop, Op::Linear { inputs, outputs, .. }) => {
                (2 * *inputs as u64 - 1) * *outputs as u64
            }
            (MacConvention::Multiplies, Op::Linear { inputs, outputs, .. }) => {
                (*inputs * *outputs) as u64
            }
            (MacConvention::Multiplies, Op::BatchNorm { .. } | Op::AvgPool { .. }) => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MacConvention::Thop => "thop",
            MacConvention::Multiplies => "multiplies",
        }
    }
}

/// Learnable parameters of one op: conv and linear weights, linear biases and
/// two per batch-norm channel (running statistics are not learnable).
pub fn op_params(op: &Op) -> u64 {
    match *op {
        Op::Conv {
            input,
            output,
            kernel,
            groups,
        } => (output.c * kernel * kernel * input.c / groups) as u64,
        Op::BatchNorm { output } => 2 * output.c as u64,
        Op::AvgPool { .. } => 0,
        Op::Linear {
            inputs,
            outputs,
            bias,
        } => (inputs * outputs + if bias { outputs } else { 0 }) as u64,
    }
}

/// Lowers one layer to its primitive ops, in execution order.
pub fn layer_ops(l: &LayerSpec) -> Vec<Op> {
    let input = l.in_shape;
    let out = l.out_shape();
    let conv = |input: Shape, output: Shape, kernel: usize, groups: usize| Op::Conv {
        input,
        output,
        kernel,
        groups,
    };
    let se = |ops: &mut Vec<Op>, s: Shape| {
        if l.use_se {
            ops.push(Op::AvgPool {
                output: Shape::new(1, 1, s.c),
                window: s.h * s.w,
            });
            ops.push(Op::Linear {
                inputs: s.c,
                outputs: l.se_channels,
                bias: false,
            });
            ops.push(Op::Linear {
                inputs: l.se_channels,
                outputs: s.c,
                bias: false,
            });
        }
    };
    let mut ops = Vec::new();
    match l.kind {
        LayerKind::Conv | LayerKind::PointwiseConv => {
            ops.push(conv(input, out, l.kernel, 1));
            if l.batch_norm {
                ops.push(Op::BatchNorm { output: out });
            }
            se(&mut ops, out);
        }
        LayerKind::Bneck => {
            let expanded = Shape::new(input.h, input.w, l.exp_size);
            let dw = Shape::new(out.h, out.w, l.exp_size);
            ops.push(conv(input, expanded, 1, 1));
            ops.push(Op::BatchNorm { output: expanded });
            ops.push(conv(expanded, dw, l.kernel, l.exp_size));
            ops.push(Op::BatchNorm { output: dw });
            se(&mut ops, dw);
            ops.push(conv(dw, out, 1, 1));
            ops.push(Op::BatchNorm { output: out });
        }
        LayerKind::Pool => ops.push(Op::AvgPool {
            output: out,
            window: l.kernel * l.kernel,
        }),
        LayerKind::Linear => ops.push(Op::Linear {
            inputs: input.numel(),
            outputs: l.out_channels,
            bias: true,
        }),
    }
    ops
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacRow {
    pub name: String,
    #[serde(rename = "in")]
    pub in_shape: Shape,
    #[serde(rename = "out")]
    pub out_shape: Shape,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacReport {
    pub alpha: f64,
    pub classes: usize,
    pub convention: MacConvention,
    pub layers: Vec<MacRow>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl MacReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// Fixed-width text table with a totals line.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>12} {:>12} {:>10} {:>10}\n",
            "layer", "in", "out", "macs", "params"
        );
        for r in &self.layers {
            s += &format!(
                "{:<10} {:>12} {:>12} {:>10} {:>10}\n",
                r.name,
                r.in_shape.to_string(),
                r.out_shape.to_string(),
                r.macs,
                r.params
            );
        }
        s += &format!("{:<36} {:>10} {:>10}\n", "total", self.total_macs, self.total_params);
        s
    }
}

pub fn count_macs(spec: &NetworkSpec, convention: MacConvention) -> MacReport {
    let layers: Vec<MacRow> = spec
        .layers
        .iter()
        .map(|l| {
            let ops = layer_ops(l);
            MacRow {
                name: l.name.clone(),
                in_shape: l.in_shape,
                out_shape: l.out_shape(),
                macs: ops.iter().map(|o| convention.cost(o)).sum(),
                params: ops.iter().map(op_params).sum(),
            }
        })
        .collect();
    MacReport {
        alpha: spec.alpha,
        classes: spec.classes,
        convention,
        total_macs: layers.iter().map(|r| r.macs).sum(),
        total_params: layers.iter().map(|r| r.params).sum(),
        layers,
    }
}
