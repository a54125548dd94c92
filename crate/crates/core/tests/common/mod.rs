#![allow(dead_code)]

use rand::Rng;
use vislab::model::{
    assemble_sequence, pool_visual, project_visual, visalign_fuse, FuseInit, FusionMode, Model, ModelConfig,
    VisualTokens,
};
use vislab::rng::{normal, seeded, DetRng};
use vislab::tensor::gradcheck::{check, GradCheckReport};
use vislab::tensor::{causal_visibility, Tape, Tensor, Var};
use vislab::Result;

pub const GRAD_TOL: f64 = 1e-5;
pub const CASES: u64 = 20;

pub fn gauss(rng: &mut DetRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal(rng, 1.0)).collect()).unwrap()
}

fn dim(rng: &mut DetRng) -> usize {
    rng.gen_range(1..=5)
}

type Builder = fn(&mut DetRng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

/// One named op: builds random inputs and the graph for a given case seed.
pub struct OpCase {
    pub name: &'static str,
    pub build: Builder,
}

fn one(rng: &mut DetRng) -> Vec<Tensor<f64>> {
    let (r, c) = (dim(rng), dim(rng));
    vec![gauss(rng, r, c)]
}

fn two_same(rng: &mut DetRng) -> Vec<Tensor<f64>> {
    let (r, c) = (dim(rng), dim(rng));
    vec![gauss(rng, r, c), gauss(rng, r, c)]
}

fn random_mask(rng: &mut DetRng, s: usize) -> Vec<bool> {
    (0..s * s).map(|i| i / s == i % s || rng.gen_bool(0.6)).collect()
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            build: |rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                (vec![gauss(rng, m, k), gauss(rng, k, n)], Box::new(|t, v| t.matmul(v[0], v[1])))
            },
        },
        OpCase {
            name: "transpose",
            build: |rng| (one(rng), Box::new(|t, v| t.transpose(v[0]))),
        },
        OpCase {
            name: "add",
            build: |rng| (two_same(rng), Box::new(|t, v| t.add(v[0], v[1]))),
        },
        OpCase {
            name: "mul",
            build: |rng| (two_same(rng), Box::new(|t, v| t.mul(v[0], v[1]))),
        },
        OpCase {
            name: "add_row",
            build: |rng| {
                let (r, c) = (dim(rng), dim(rng));
                (vec![gauss(rng, r, c), gauss(rng, 1, c)], Box::new(|t, v| t.add_row(v[0], v[1])))
            },
        },
        OpCase {
            name: "mul_row",
            build: |rng| {
                let (r, c) = (dim(rng), dim(rng));
                (vec![gauss(rng, r, c), gauss(rng, 1, c)], Box::new(|t, v| t.mul_row(v[0], v[1])))
            },
        },
        OpCase {
            name: "scale",
            build: |rng| {
                let s = normal(rng, 2.0);
                (one(rng), Box::new(move |t, v| t.scale(v[0], s)))
            },
        },
        OpCase {
            name: "sum",
            build: |rng| (one(rng), Box::new(|t, v| t.sum(v[0]))),
        },
        OpCase {
            name: "mean_rows",
            build: |rng| (one(rng), Box::new(|t, v| t.mean_rows(v[0]))),
        },
        OpCase {
            name: "repeat_rows",
            build: |rng| {
                let c = dim(rng);
                let times = dim(rng);
                (vec![gauss(rng, 1, c)], Box::new(move |t, v| t.repeat_rows(v[0], times)))
            },
        },
        OpCase {
            name: "concat_features",
            build: |rng| {
                let (r, a, b) = (dim(rng), dim(rng), dim(rng));
                (vec![gauss(rng, r, a), gauss(rng, r, b)], Box::new(|t, v| t.concat_features(v[0], v[1])))
            },
        },
        OpCase {
            name: "concat_rows",
            build: |rng| {
                let (a, b, c, w) = (dim(rng), dim(rng), dim(rng), dim(rng));
                (
                    vec![gauss(rng, a, w), gauss(rng, b, w), gauss(rng, c, w)],
                    Box::new(|t, v| t.concat_rows(v)),
                )
            },
        },
        OpCase {
            name: "gather_rows",
            build: |rng| {
                let (r, c) = (dim(rng), dim(rng));
                let rows: Vec<usize> = (0..dim(rng) + 2).map(|_| rng.gen_range(0..r)).collect();
                (vec![gauss(rng, r, c)], Box::new(move |t, v| t.gather_rows(v[0], &rows)))
            },
        },
        OpCase {
            name: "slice_rows",
            build: |rng| {
                let (r, c) = (dim(rng) + 1, dim(rng));
                let start = rng.gen_range(0..r);
                let end = rng.gen_range(start + 1..=r);
                (vec![gauss(rng, r, c)], Box::new(move |t, v| t.slice_rows(v[0], start, end)))
            },
        },
        OpCase {
            name: "softmax_rows",
            build: |rng| (one(rng), Box::new(|t, v| t.softmax_rows(v[0], None))),
        },
        OpCase {
            name: "softmax_rows_masked",
            build: |rng| {
                let s = dim(rng) + 1;
                let mask = random_mask(rng, s);
                (vec![gauss(rng, s, s)], Box::new(move |t, v| t.softmax_rows(v[0], Some(&mask))))
            },
        },
        OpCase {
            name: "softmax_rows_causal",
            build: |rng| {
                let s = dim(rng) + 1;
                let mask = causal_visibility(s);
                (vec![gauss(rng, s, s)], Box::new(move |t, v| t.softmax_rows(v[0], Some(&mask))))
            },
        },
        OpCase {
            name: "layer_norm_rows",
            build: |rng| {
                let (r, c) = (dim(rng), dim(rng) + 1);
                (vec![gauss(rng, r, c)], Box::new(|t, v| t.layer_norm_rows(v[0])))
            },
        },
        OpCase {
            name: "gelu",
            build: |rng| (one(rng), Box::new(|t, v| t.gelu(v[0]))),
        },
        OpCase {
            name: "embedding_lookup",
            build: |rng| {
                let (vocab, d) = (dim(rng) + 1, dim(rng));
                let ids: Vec<usize> = (0..dim(rng) + 1).map(|_| rng.gen_range(0..vocab)).collect();
                (vec![gauss(rng, vocab, d)], Box::new(move |t, v| t.embedding_lookup(v[0], &ids)))
            },
        },
        OpCase {
            name: "cross_entropy",
            build: |rng| {
                let (n, c) = (dim(rng), dim(rng) + 1);
                let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
                (vec![gauss(rng, n, c)], Box::new(move |t, v| t.cross_entropy(v[0], &targets)))
            },
        },
        OpCase {
            name: "visual_projection",
            build: |rng| {
                let (n, dv, dt) = (dim(rng), dim(rng), dim(rng));
                (vec![gauss(rng, n, dv), gauss(rng, dv, dt)], Box::new(|t, v| t.matmul(v[0], v[1])))
            },
        },
        OpCase {
            name: "visalign_fusion",
            build: |rng| {
                let (n_t, n_v, dv, dt) = (dim(rng), dim(rng), dim(rng), dim(rng));
                let k = rng.gen_range(0..=n_t);
                let vis = gauss(rng, n_v, dv).cast::<f32>();
                let visual = VisualTokens::from_features(vis).unwrap();
                (
                    vec![gauss(rng, n_t, dt), gauss(rng, dv, dt), gauss(rng, 2 * dt, dt)],
                    Box::new(move |t, v| {
                        let v_proj = project_visual(t, &visual, v[1])?;
                        let v_hat = pool_visual(t, v_proj)?;
                        let text = visalign_fuse(t, v[0], v_hat, v[2])?;
                        Ok(assemble_sequence(t, text, v_proj, k)?.embeddings)
                    }),
                )
            },
        },
    ]
}

pub fn run_op(case: &OpCase, seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed.wrapping_mul(0x9E37_79B9).wrapping_add(case.name.len() as u64));
    let (inputs, f) = (case.build)(&mut rng);
    check(&inputs, seed, |t, v| f(t, v)).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", case.name))
}

/// Small two-layer model config for composed-model checks.
pub fn tiny_config(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        d_t: 8,
        d_v: 4,
        layers: 2,
        heads: 2,
        vocab: 12,
        max_seq: 16,
        n_visual: 3,
        ff_mult: 2,
        fusion,
        init_std: 0.4,
        fuse_init: FuseInit::IdentityTop { bottom_std: 0.4 },
    }
}

/// Full model (embeddings, fusion, blocks, head, loss) checked with respect
/// to every parameter.
pub fn run_model(fusion: FusionMode, seed: u64) -> GradCheckReport {
    let model = Model::<f64>::init(tiny_config(fusion), seed).unwrap();
    let mut rng = seeded(seed ^ 0xABCD);
    let n_t = rng.gen_range(2..=5);
    let k = rng.gen_range(0..=n_t);
    let ids: Vec<usize> = (0..n_t).map(|_| rng.gen_range(0..12)).collect();
    let visual = VisualTokens::from_features(gauss(&mut rng, 3, 4).cast::<f32>()).unwrap();
    let targets: Vec<usize> = (0..n_t + 3).map(|_| rng.gen_range(0..12)).collect();
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();
    check(&inputs, seed, |tape, vars| {
        let bound = model.params.bind_existing(vars)?;
        let input = model.build_input(tape, &bound, &ids, &visual, k)?;
        let (logits, _) = model.forward(tape, &bound, &input, false)?;
        tape.cross_entropy(logits, &targets)
    })
    .unwrap_or_else(|e| panic!("model {fusion} seed {seed}: {e}"))
}
