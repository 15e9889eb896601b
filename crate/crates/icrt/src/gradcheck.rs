//! Central finite-difference oracles for the analytic gradients.
//!
//! Lives in the library so both unit tests and the acceptance suite can run
//! the same checks; nothing here is used on the training path.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

/// Builds a scalar-loss graph from the given leaf tensors.
pub type BuildFn = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;

/// Compare analytic gradients against central finite differences for every
/// element of every input. Returns the maximum relative error observed.
pub fn finite_diff_check(inputs: &[Tensor<f64>], build: &BuildFn) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).scalar_value())
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let mut grads = g.backward(loss)?;

    let mut max_rel: f64 = 0.0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.take_or_zeros(ids[i], input.shape());
        for j in 0..input.numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_EPS;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_EPS;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * FD_EPS);
            let a = analytic.data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

/// One registered op with a randomized small-tensor instance generator.
pub struct OpCase {
    pub name: &'static str,
    pub gen: fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, BuildFn),
}

fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random tensor bounded away from zero (for kinked ops like abs).
fn rt_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Reduce an arbitrary op output to a scalar with fixed random weights so
/// every output element carries a distinct cotangent.
fn weighted_sum(g: &mut Graph<f64>, out: NodeId, weights: &Tensor<f64>) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

/// The full per-op gradient-check registry: every op exposed by [`Graph`].
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3]), rt(rng, &[3, 2])];
                let w = rt(rng, &[2, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.matmul(ids[0], ids[1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "bmm",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 2, 3]), rt(rng, &[2, 3, 2])];
                let w = rt(rng, &[2, 2, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.bmm(ids[0], ids[1], false)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "bmm_transpose_b",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 2, 3]), rt(rng, &[2, 2, 3])];
                let w = rt(rng, &[2, 2, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.bmm(ids[0], ids[1], true)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "add",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 2]), rt(rng, &[2, 2])];
                let w = rt(rng, &[2, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.add(ids[0], ids[1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "sub",
            gen: |rng| {
                let inputs = vec![rt(rng, &[4]), rt(rng, &[4])];
                let w = rt(rng, &[4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.sub(ids[0], ids[1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "mul",
            gen: |rng| {
                let inputs = vec![rt(rng, &[4]), rt(rng, &[4])];
                let w = rt(rng, &[4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.mul(ids[0], ids[1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "add_bias",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3]), rt(rng, &[3])];
                let w = rt(rng, &[2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.add_bias(ids[0], ids[1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "scale",
            gen: |rng| {
                let inputs = vec![rt(rng, &[3])];
                let c = rng.random_range(-2.0..2.0);
                let w = rt(rng, &[3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.scale(ids[0], c);
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "softmax",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3])];
                let w = rt(rng, &[2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.softmax(ids[0]);
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "rmsnorm",
            gen: |rng| {
                let inputs = vec![rt_nonzero(rng, &[2, 3]), rt_nonzero(rng, &[3])];
                let w = rt(rng, &[2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.rmsnorm(ids[0], ids[1], 1e-5)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "silu",
            gen: |rng| {
                let inputs = vec![rt(rng, &[4])];
                let w = rt(rng, &[4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.silu(ids[0]);
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "sigmoid",
            gen: |rng| {
                let inputs = vec![rt(rng, &[4])];
                let w = rt(rng, &[4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.sigmoid(ids[0]);
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "abs",
            gen: |rng| {
                let inputs = vec![rt_nonzero(rng, &[4])];
                let w = rt(rng, &[4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.abs(ids[0]);
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "embedding",
            gen: |rng| {
                let inputs = vec![rt(rng, &[3, 2])];
                let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
                let w = rt(rng, &[4, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.embedding(ids[0], &idx)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "concat",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 2]), rt(rng, &[2, 1])];
                let w = rt(rng, &[2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.concat(&[ids[0], ids[1]], 1)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "slice",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 4])];
                let w = rt(rng, &[2, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.slice(ids[0], 1, 1, 2)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "reshape",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3])];
                let w = rt(rng, &[3, 2]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.reshape(ids[0], &[3, 2])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "permute",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3, 2])];
                let w = rt(rng, &[2, 2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.permute(ids[0], &[2, 0, 1])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "rope",
            gen: |rng| {
                let inputs = vec![rt(rng, &[1, 2, 4])];
                let pos: Vec<usize> = vec![rng.random_range(0..50), rng.random_range(0..50)];
                let w = rt(rng, &[1, 2, 4]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.rope(ids[0], &pos, 10000.0)?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
        OpCase {
            name: "sum_all",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 2])];
                let b: BuildFn = Box::new(move |g, ids| Ok(g.sum_all(ids[0])));
                (inputs, b)
            },
        },
        OpCase {
            name: "mean_all",
            gen: |rng| {
                let inputs = vec![rt(rng, &[4])];
                let b: BuildFn = Box::new(move |g, ids| Ok(g.mean_all(ids[0])));
                (inputs, b)
            },
        },
        OpCase {
            name: "attn_pool",
            gen: |rng| {
                let inputs = vec![rt(rng, &[2, 3]), rt(rng, &[2, 2, 3]), rt(rng, &[2, 2, 3])];
                let w = rt(rng, &[2, 2, 3]);
                let b: BuildFn = Box::new(move |g, ids| {
                    let o = g.attn_pool(ids[0], ids[1], ids[2])?;
                    weighted_sum(g, o, &w)
                });
                (inputs, b)
            },
        },
    ]
}

/// Run `cases_per_op` random gradient checks for every registered op.
/// Returns (op name, worst relative error) per op.
pub fn run_op_suite(cases_per_op: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    use rand::SeedableRng;
    let mut results = Vec::new();
    for case in op_cases() {
        let mut worst: f64 = 0.0;
        for i in 0..cases_per_op {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let (inputs, build) = (case.gen)(&mut rng);
            worst = worst.max(finite_diff_check(&inputs, &build)?);
        }
        results.push((case.name, worst));
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quick version of the full per-op sweep; the acceptance suite runs the
    /// 100-case version.
    #[test]
    fn every_op_matches_finite_differences() {
        for (name, err) in run_op_suite(8, 42).unwrap() {
            assert!(err < 1e-4, "op {name}: rel err {err:.3e} >= 1e-4");
        }
    }
}
