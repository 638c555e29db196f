//! Gradient cases shared by the `gradients` test target and the acceptance
//! suite. Every differentiable op is checked at 100 seeded points with
//! eps = 1e-5; a point-set passes when every parameter's relative error is
//! below 1e-4. Each case panics on failure and returns its worst error.

use std::cell::Cell;

use capsx::model::loss::{margin_loss_node, reconstruction_loss_node, RECONSTRUCTION_SCALE};
use capsx::model::routing::{agreement, route_nodes, weighted_votes};
use capsx::model::squash::squash_node;
use capsx::model::{forward_nodes, loss_nodes, parameter_shapes, DecodeTarget, ModelConfig, NormAxis, ROUTING_WEIGHT};
use capsx::tensor::gradcheck::{grad_check, GradCheckReport};
use capsx::tensor::{Graph, NodeId, ReduceKind, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const POINTS: u64 = 100;

thread_local! {
    static WORST: Cell<f64> = const { Cell::new(0.0) };
}

fn note(err: f64) {
    WORST.with(|w| w.set(w.get().max(err)));
}

fn take_worst() -> f64 {
    WORST.with(|w| w.replace(0.0))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Reduces `y` to a scalar through fixed random weights so that every output
/// coordinate carries a distinct cotangent.
fn project(g: &mut Graph, y: NodeId) -> Result<NodeId> {
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let weights = g.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let weighted = g.mul(y, weights)?;
    Ok(g.sum(weighted))
}

/// Runs the check at `POINTS` seeded points and returns the worst report.
fn check_points<S, F>(name: &str, seed: u64, sample: S, build: F) -> GradCheckReport
where
    S: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Copy,
{
    let mut worst: Option<GradCheckReport> = None;
    let mut checked = 0;
    for k in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k));
        let point = sample(&mut rng);
        let report = grad_check(build, &point, EPS).unwrap();
        checked += report.checked;
        assert!(report.passes(TOLERANCE), "{name} at point {k}: {report:?}");
        if worst.as_ref().is_none_or(|w| report.max_relative_error > w.max_relative_error) {
            worst = Some(report);
        }
    }
    assert!(checked > 0, "{name}: every coordinate was excluded");
    let worst = worst.unwrap();
    note(worst.max_relative_error);
    worst
}

pub fn conv2d_stride_one_and_two() -> f64 {
    for stride in [1, 2] {
        check_points(
            "conv2d",
            stride as u64,
            |rng| vec![uniform(rng, &[2, 2, 5, 5], -1.0, 1.0), uniform(rng, &[3, 2, 3, 3], -1.0, 1.0), uniform(rng, &[3], -1.0, 1.0)],
            move |g, p| {
                let y = g.conv2d(p[0], p[1], p[2], stride)?;
                project(g, y)
            },
        );
    }
    take_worst()
}

pub fn batched_matvec_and_linear() -> f64 {
    check_points(
        "batched_matvec",
        3,
        |rng| vec![uniform(rng, &[3, 2, 2, 4], -1.0, 1.0), uniform(rng, &[2, 3, 4], -1.0, 1.0)],
        |g, p| {
            let y = g.batched_matvec(p[0], p[1])?;
            project(g, y)
        },
    );
    check_points(
        "linear",
        4,
        |rng| vec![uniform(rng, &[2, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3], -1.0, 1.0)],
        |g, p| {
            let y = g.linear(p[0], p[1], p[2])?;
            project(g, y)
        },
    );
    take_worst()
}

pub fn pointwise_ops() -> f64 {
    let sample = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[2, 5], -2.0, 2.0)];
    check_points("relu", 5, sample, |g, p| {
        let y = g.relu(p[0]);
        project(g, y)
    });
    check_points("sigmoid", 6, sample, |g, p| {
        let y = g.sigmoid(p[0]);
        project(g, y)
    });
    check_points("square", 7, sample, |g, p| {
        let y = g.square(p[0]);
        project(g, y)
    });
    check_points("affine", 8, sample, |g, p| {
        let y = g.affine(p[0], 1.7, -0.3);
        project(g, y)
    });
    take_worst()
}

pub fn binary_ops() -> f64 {
    let sample = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)];
    check_points("add", 9, sample, |g, p| {
        let y = g.add(p[0], p[1])?;
        project(g, y)
    });
    check_points("sub", 10, sample, |g, p| {
        let y = g.sub(p[0], p[1])?;
        project(g, y)
    });
    check_points("mul", 11, sample, |g, p| {
        let y = g.mul(p[0], p[1])?;
        project(g, y)
    });
    take_worst()
}

pub fn softmax_every_axis() -> f64 {
    for axis in 0..3 {
        check_points(
            "softmax",
            12 + axis as u64,
            |rng| vec![uniform(rng, &[2, 3, 4], -2.0, 2.0)],
            move |g, p| {
                let y = g.softmax(p[0], axis)?;
                project(g, y)
            },
        );
    }
    take_worst()
}

pub fn reductions() -> f64 {
    for (i, kind) in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Norm2].into_iter().enumerate() {
        for axis in [None, Some(0), Some(2)] {
            check_points(
                "reduce",
                20 + i as u64,
                |rng| vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)],
                move |g, p| {
                    let y = g.reduce(kind, p[0], axis)?;
                    project(g, y)
                },
            );
        }
    }
    take_worst()
}

pub fn reshape_and_gather() -> f64 {
    let sample = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[2, 3], -1.0, 1.0)];
    check_points("reshape", 30, sample, |g, p| {
        let y = g.reshape(p[0], &[3, 2])?;
        project(g, y)
    });
    check_points("gather", 31, sample, |g, p| {
        // Repeated and skipped indices exercise the scatter-add.
        let y = g.gather(p[0], vec![5, 0, 0, 3, 2, 5, 1, 1], &[2, 4])?;
        project(g, y)
    });
    take_worst()
}

pub fn squash_op() -> f64 {
    check_points(
        "squash",
        40,
        |rng| vec![uniform(rng, &[3, 4], -1.5, 1.5)],
        |g, p| {
            let y = squash_node(g, p[0])?;
            project(g, y)
        },
    );
    take_worst()
}

pub fn squashed_norm_at_unit_vector() -> f64 {
    // ‖squash(s)‖² = (‖s‖²/(1+‖s‖²))², whose gradient at (1, 0) is (0.5, 0).
    let point = [Tensor::from_vec(vec![1.0, 0.0])];
    let report = grad_check(
        |g, p| {
            let v = squash_node(g, p[0])?;
            let sq = g.square(v);
            Ok(g.sum(sq))
        },
        &point,
        EPS,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
    assert!(report.max_coordinate_error < 1e-6, "{report:?}");
    note(report.max_relative_error);
    take_worst()
}

pub fn squash_composed_with_matvec() -> f64 {
    check_points(
        "squash∘matvec",
        41,
        |rng| vec![uniform(rng, &[3, 2, 2, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)],
        |g, p| {
            let votes = g.batched_matvec(p[0], p[1])?;
            let v = squash_node(g, votes)?;
            project(g, v)
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let point = [uniform(&mut rng, &[3, 2, 2, 4], -1.0, 1.0), uniform(&mut rng, &[3, 4], -1.0, 1.0)];
    let report = grad_check(
        |g, p| {
            let votes = g.batched_matvec(p[0], p[1])?;
            let v = squash_node(g, votes)?;
            project(g, v)
        },
        &point,
        EPS,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
    take_worst()
}

pub fn routing_ops() -> f64 {
    check_points(
        "weighted_votes",
        50,
        |rng| vec![uniform(rng, &[2, 3, 2], 0.0, 1.0), uniform(rng, &[2, 3, 2, 2], -1.0, 1.0)],
        |g, p| {
            let s = weighted_votes(g, p[0], p[1])?;
            project(g, s)
        },
    );
    check_points(
        "agreement",
        51,
        |rng| vec![uniform(rng, &[2, 3, 2, 2], -1.0, 1.0), uniform(rng, &[2, 2, 2], -1.0, 1.0)],
        |g, p| {
            let a = agreement(g, p[0], p[1])?;
            project(g, a)
        },
    );
    take_worst()
}

pub fn unrolled_routing_both_axes() -> f64 {
    for (i, axis) in [NormAxis::OverParents, NormAxis::OverChildren].into_iter().enumerate() {
        check_points(
            "routing",
            60 + i as u64,
            |rng| vec![uniform(rng, &[2, 4, 3, 2], -1.0, 1.0)],
            move |g, p| {
                let out = route_nodes(g, p[0], 3, axis)?;
                project(g, out.v)
            },
        );
    }
    take_worst()
}

pub fn losses() -> f64 {
    check_points("margin_loss", 70, |rng| vec![uniform(rng, &[2, 3], 0.0, 1.0)], |g, p| margin_loss_node(g, p[0], &[0, 2]));
    check_points(
        "reconstruction_loss",
        71,
        |rng| vec![uniform(rng, &[2, 6], 0.0, 1.0), uniform(rng, &[2, 6], 0.0, 1.0)],
        |g, p| reconstruction_loss_node(g, p[0], p[1]),
    );
    take_worst()
}

/// Parameters scaled so that activations stay out of the squash's small-norm
/// regime, where gradients vanish quadratically.
fn tiny_model_point(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> (Vec<Tensor>, Tensor) {
    let params = parameter_shapes(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let bound = if name.ends_with("bias") {
                0.5
            } else if name == ROUTING_WEIGHT {
                1.0
            } else {
                2.0 / (shape[1..].iter().product::<usize>() as f64).sqrt()
            };
            uniform(rng, &shape, -bound, bound)
        })
        .collect();
    let image = uniform(rng, &[1, 1, cfg.input_height, cfg.input_width], 0.0, 1.0);
    (params, image)
}

#[derive(Clone, Copy)]
enum Objective {
    Margin,
    Reconstruction,
}

fn check_tiny_model(objective: Objective, seed: u64) -> GradCheckReport {
    let cfg = ModelConfig::tiny();
    assert_eq!((cfg.num_primary(), cfg.classes, cfg.class_dim, cfg.primary_dim), (8, 3, 2, 4));
    let mut worst: Option<GradCheckReport> = None;
    for k in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + k);
        let (point, image) = tiny_model_point(&mut rng, &cfg);
        let label = (k % cfg.classes as u64) as usize;
        let report = grad_check(
            |g, ids| {
                let x = g.constant(image.clone());
                let fwd = forward_nodes(&cfg, g, ids, x, DecodeTarget::Classes(&[label]))?;
                let losses = loss_nodes(g, &fwd, x, &[label])?;
                Ok(match objective {
                    Objective::Margin => losses.margin,
                    Objective::Reconstruction => losses.reconstruction,
                })
            },
            &point,
            EPS,
        )
        .unwrap();
        assert_eq!(report.per_parameter.len(), point.len());
        assert!(report.passes(TOLERANCE), "point {k}: {report:?}");
        note(report.max_relative_error);
        if worst.as_ref().is_none_or(|w| report.max_relative_error > w.max_relative_error) {
            worst = Some(report);
        }
    }
    worst.unwrap()
}

pub fn tiny_model_margin_loss() -> f64 {
    check_tiny_model(Objective::Margin, 1);
    take_worst()
}

pub fn tiny_model_reconstruction_loss() -> f64 {
    check_tiny_model(Objective::Reconstruction, 2);
    take_worst()
}

/// The training objective is a fixed linear combination of the two checked
/// losses; its reverse-mode gradient must be that same combination.
pub fn tiny_model_total_loss_combines_checked_parts() -> f64 {
    let cfg = ModelConfig::tiny();
    for k in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + k);
        let (point, image) = tiny_model_point(&mut rng, &cfg);
        let label = (k % cfg.classes as u64) as usize;
        let grads = |pick: fn(&capsx::model::LossNodes) -> NodeId| -> Vec<Tensor> {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = point.iter().map(|t| g.param(t.clone())).collect();
            let x = g.constant(image.clone());
            let fwd = forward_nodes(&cfg, &mut g, &ids, x, DecodeTarget::Classes(&[label])).unwrap();
            let losses = loss_nodes(&mut g, &fwd, x, &[label]).unwrap();
            let mut out = g.backward(pick(&losses)).unwrap();
            ids.iter().map(|&id| out.take(id).unwrap()).collect()
        };
        let total = grads(|l| l.total);
        let margin = grads(|l| l.margin);
        let recon = grads(|l| l.reconstruction);
        for p in 0..point.len() {
            for ((&t, &m), &r) in total[p].data().iter().zip(margin[p].data()).zip(recon[p].data()) {
                let expected = m + RECONSTRUCTION_SCALE * r;
                assert!((t - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "point {k} param {p}: {t} vs {expected}");
                note((t - expected).abs() / (1.0 + expected.abs()));
            }
        }
    }
    take_worst()
}

/// Every case with its name, in a fixed order.
#[allow(dead_code)]
pub const CASES: &[(&str, fn() -> f64)] = &[
    ("conv2d_stride_one_and_two", conv2d_stride_one_and_two),
    ("batched_matvec_and_linear", batched_matvec_and_linear),
    ("pointwise_ops", pointwise_ops),
    ("binary_ops", binary_ops),
    ("softmax_every_axis", softmax_every_axis),
    ("reductions", reductions),
    ("reshape_and_gather", reshape_and_gather),
    ("squash_op", squash_op),
    ("squashed_norm_at_unit_vector", squashed_norm_at_unit_vector),
    ("squash_composed_with_matvec", squash_composed_with_matvec),
    ("routing_ops", routing_ops),
    ("unrolled_routing_both_axes", unrolled_routing_both_axes),
    ("losses", losses),
    ("tiny_model_margin_loss", tiny_model_margin_loss),
    ("tiny_model_reconstruction_loss", tiny_model_reconstruction_loss),
    ("tiny_model_total_loss_combines_checked_parts", tiny_model_total_loss_combines_checked_parts),
];
