//! Central-difference gradient checks for every differentiable op and layer, and for the
//! full acoustic model on a 4-frame example, each over 20 seeds. Shared by the gradient
//! tests and the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use svs_core::dpe::{DualPitchEncoder, F0Contour, PitchPath};
use svs_core::dsp::MelSpectrogram;
use svs_core::lst::{LocalStyleTokens, Side};
use svs_core::model::{AcousticModel, Conditioning, ModelConfig};
use svs_core::nn::rng::seeded;
use svs_core::nn::{
    grad_check, grad_check_at, grad_check_sampled, scaled_dot_attention, Affine, ConvGlu, ConvGluStack,
    Embedding, GradCheckReport, Graph, Padding, ParamStore, Tensor, Var,
};
use svs_core::score::FrameInputs;
use svs_core::Result;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;
/// Larger step for the deep model: with a fourth-order stencil, roundoff dominates truncation there.
const MODEL_EPS: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst relative error of one group of checks, or the first failure.
#[derive(Debug)]
pub struct Outcome {
    pub group: &'static str,
    pub checks: usize,
    pub worst: f64,
    pub failure: Option<String>,
}

impl Outcome {
    fn new(group: &'static str) -> Self {
        Self { group, checks: 0, worst: 0.0, failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checks > 0 && self.worst < TOL
    }

    fn record(&mut self, label: &str, r: Result<GradCheckReport>) {
        match r {
            Ok(r) if r.checked > 0 => {
                self.checks += 1;
                if r.max_rel_error >= TOL && self.failure.is_none() {
                    self.failure = Some(format!("{label}: rel error {:e} at {:?}", r.max_rel_error, r.worst));
                }
                self.worst = self.worst.max(r.max_rel_error);
            }
            Ok(_) => {
                self.failure.get_or_insert_with(|| format!("{label}: nothing checked"));
            }
            Err(e) => {
                self.failure.get_or_insert_with(|| format!("{label}: {e}"));
            }
        }
    }
}

/// Projects `y` onto fixed random weights so the scalar loss is smooth.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = seeded(seed ^ 0xABCD);
    let w = rand_t(&mut rng, g.shape(y));
    g.dot(y, &w)
}

fn each_seed(mut make: impl FnMut(u64)) {
    for seed in 0..SEEDS {
        make(seed);
    }
}

pub fn conv1d_same_and_causal() -> Outcome {
    let mut out = Outcome::new("conv1d_same_and_causal");
    for (pad, tag) in [(Padding::Same, "same"), (Padding::Causal, "causal")] {
        each_seed(|seed| {
            let mut rng = seeded(seed);
            let k = [1, 3, 5][seed as usize % 3];
            let inputs = [rand_t(&mut rng, &[3, 7]), rand_t(&mut rng, &[4, 3, k]), rand_t(&mut rng, &[4])];
            out.record(
                &format!("conv1d {tag} seed {seed}"),
                grad_check(
                    "conv1d",
                    |g, v| {
                        let y = g.conv1d(v[0], v[1], v[2], pad)?;
                        project(g, y, seed)
                    },
                    &inputs,
                    EPS,
                ),
            );
        });
    }
    out
}

pub fn elementwise_and_structural_ops() -> Outcome {
    let mut out = Outcome::new("elementwise_and_structural_ops");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let a = rand_t(&mut rng, &[4, 6]);
        let b = rand_t(&mut rng, &[4, 6]);
        let c = rand_t(&mut rng, &[2, 6]);
        let v = rand_t(&mut rng, &[3]);
        let bias = rand_t(&mut rng, &[6]);
        let cases: Vec<(&str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync>)> = vec![
            ("glu", vec![a.clone()], Box::new(|g, v| g.glu(v[0]))),
            ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
            ("concat", vec![a.clone(), c.clone()], Box::new(|g, v| g.concat(&[v[0], v[1]]))),
            ("broadcast_cols", vec![v.clone()], Box::new(|g, v| g.broadcast_cols(v[0], 5))),
            ("matmul", vec![a.clone(), b.transpose2()], Box::new(|g, v| g.matmul(v[0], v[1]))),
            ("transpose", vec![a.clone()], Box::new(|g, v| g.transpose(v[0]))),
            ("scale", vec![a.clone()], Box::new(|g, v| g.scale(v[0], -0.7))),
            ("softmax_rows", vec![a.clone()], Box::new(|g, v| g.softmax_rows(v[0]))),
            ("add_row_bias", vec![a.clone(), bias.clone()], Box::new(|g, v| g.add_row_bias(v[0], v[1]))),
            ("slice_cols", vec![a.clone()], Box::new(|g, v| g.slice_cols(v[0], 2, 3))),
        ];
        for (name, inputs, f) in cases {
            out.record(
                &format!("{name} seed {seed}"),
                grad_check(
                    name,
                    |g, v| {
                        let y = f(g, v)?;
                        project(g, y, seed)
                    },
                    &inputs,
                    EPS,
                ),
            );
        }
    });
    out
}

pub fn reductions_and_losses() -> Outcome {
    let mut out = Outcome::new("reductions_and_losses");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let x = rand_t(&mut rng, &[3, 5]);
        // Keep every residual well away from the kink of |·|.
        let target = Tensor::from_fn(&[3, 5], |i| {
            let d = 0.1 + 0.5 * ((i * 7 + seed as usize) % 5) as f64 / 5.0;
            x.data()[i] + if i % 2 == 0 { d } else { -d }
        });
        out.record(
            &format!("l1 seed {seed}"),
            grad_check("l1", |g, v| g.l1_loss(v[0], &target), &[x.clone()], EPS),
        );
        out.record(
            &format!("sum seed {seed}"),
            grad_check(
                "sum",
                |g, v| {
                    let y = g.glu(v[0])?;
                    g.sum(y)
                },
                &[rand_t(&mut rng, &[4, 3])],
                EPS,
            ),
        );
        let w = rand_t(&mut rng, &[3, 5]);
        out.record(
            &format!("dot seed {seed}"),
            grad_check(
                "dot",
                |g, v| {
                    let y = g.softmax_rows(v[0])?;
                    g.dot(y, &w)
                },
                &[x.clone()],
                EPS,
            ),
        );
    });
    out
}

pub fn embedding_lookup() -> Outcome {
    let mut out = Outcome::new("embedding_lookup");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let table = rand_t(&mut rng, &[6, 4]);
        let ids: Vec<usize> = (0..7).map(|_| rng.gen_range(0..6)).collect();
        out.record(
            &format!("embedding seed {seed}"),
            grad_check(
                "embedding",
                |g, v| {
                    let y = g.embedding(v[0], &ids)?;
                    project(g, y, seed)
                },
                &[table.clone()],
                EPS,
            ),
        );
    });
    out
}

pub fn attention_all_inputs() -> Outcome {
    let mut out = Outcome::new("attention_all_inputs");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let inputs = [rand_t(&mut rng, &[5, 4]), rand_t(&mut rng, &[3, 4]), rand_t(&mut rng, &[3, 4])];
        out.record(
            &format!("attention seed {seed}"),
            grad_check(
                "attention",
                |g, v| {
                    let (s, o) = scaled_dot_attention(g, v[0], v[1], v[2])?;
                    let a = project(g, s, seed)?;
                    let b = project(g, o, seed + 1)?;
                    g.add(a, b)
                },
                &inputs,
                EPS,
            ),
        );
    });
    out
}

/// Checks gradients of a layer with respect to its input and every parameter.
fn check_layer(
    out: &mut Outcome,
    name: &str,
    seed: u64,
    params: &ParamStore<f32>,
    x: Tensor<f64>,
    forward: impl Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> Result<Var> + Sync,
) {
    let p64: ParamStore<f64> = params.cast();
    let names: Vec<String> = p64.names().map(str::to_string).collect();
    let mut inputs = vec![x];
    inputs.extend(names.iter().map(|n| p64.get(n).unwrap().as_ref().clone()));
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        for (n, &var) in names.iter().zip(&v[1..]) {
            g.bind_param(n, var);
        }
        let y = forward(g, &p64, v[0])?;
        project(g, y, seed)
    };
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let r = if total <= 1000 {
        grad_check(name, f, &inputs, EPS)
    } else {
        grad_check_sampled(name, f, &inputs, EPS, 400, seed)
    };
    out.record(&format!("{name} seed {seed}"), r);
}

pub fn layers() -> Outcome {
    let mut out = Outcome::new("layers");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let mut p = ParamStore::new();
        let glu = ConvGlu::new("glu", 3, 4, 3, Padding::Same);
        glu.init(&mut p, &mut rng);
        check_layer(&mut out, "conv_glu", seed, &p, rand_t(&mut rng, &[3, 6]), |g, p, x| glu.forward(g, p, x));

        let mut p = ParamStore::new();
        let stack = ConvGluStack::new("stack", 3, 4, &[3, 3, 1], Padding::Causal, true);
        stack.init(&mut p, &mut rng);
        check_layer(&mut out, "conv_glu_stack", seed, &p, rand_t(&mut rng, &[3, 6]), |g, p, x| {
            stack.forward(g, p, x)
        });

        let mut p = ParamStore::new();
        let aff = Affine::new("aff", 4, 3);
        aff.init(&mut p, &mut rng);
        check_layer(&mut out, "affine", seed, &p, rand_t(&mut rng, &[5, 4]), |g, p, x| aff.forward(g, p, x));

        let mut p = ParamStore::new();
        let emb = Embedding::new("emb", 5, 3);
        emb.init(&mut p, &mut rng);
        let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
        check_layer(&mut out, "embedding_layer", seed, &p, rand_t(&mut rng, &[1]), |g, p, _| {
            emb.forward(g, p, &ids)
        });
    });
    out
}

pub fn style_tokens_end_to_end() -> Outcome {
    let mut out = Outcome::new("style_tokens_end_to_end");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let mut p = ParamStore::new();
        let lst = LocalStyleTokens::new("lst", Side::Text, 3, 2, 4, 3, &[3, 1]);
        lst.init(&mut p, &mut rng);
        let singer = rand_t(&mut rng, &[2, 5]);
        check_layer(&mut out, "lst", seed, &p, rand_t(&mut rng, &[3, 5]), |g, p, x| {
            let s = g.constant(singer.clone());
            let (scores, t) = lst.forward(g, p, x, s, None)?;
            let a = project(g, scores, seed + 7)?;
            let b = project(g, t, seed + 8)?;
            g.add(a, b)
        });
    });
    out
}

pub fn pitch_encoders() -> Outcome {
    let mut out = Outcome::new("pitch_encoders");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let mut p = ParamStore::new();
        let enc = DualPitchEncoder::new("pitch", 4, &[3, 3]);
        enc.init(&mut p, &mut rng);
        let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..129)).collect();
        let f0 = F0Contour::new(
            (0..6)
                .map(|_| if rng.gen_bool(0.7) { rng.gen_range(80.0..900.0) } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let midi_params = keep(&p, &["pitch.midi."]);
        check_layer(&mut out, "midi encoder", seed, &midi_params, rand_t(&mut rng, &[1]), |g, p, _| {
            enc.forward_midi(g, p, &ids)
        });
        let f0_params = keep(&p, &["pitch.f0."]);
        check_layer(&mut out, "f0 encoder", seed, &f0_params, rand_t(&mut rng, &[1]), |g, p, _| {
            enc.forward_f0(g, p, &f0)
        });
    });
    out
}

fn keep(p: &ParamStore<f32>, prefixes: &[&str]) -> ParamStore<f32> {
    let mut out = ParamStore::new();
    for (n, t) in p.iter() {
        if prefixes.iter().any(|pre| n.starts_with(pre)) {
            out.insert(n, t.clone());
        }
    }
    out
}

pub fn full_model_four_frames() -> Outcome {
    let mut out = Outcome::new("full_model_four_frames");
    each_seed(|seed| {
        let mut rng = seeded(seed);
        let model = AcousticModel::new(ModelConfig::default(), seed).unwrap();
        let l = 4;
        let inputs = FrameInputs {
            phoneme_ids: (0..l).map(|_| rng.gen_range(0..20)).collect(),
            midi_pitch: (0..l).map(|_| rng.gen_range(50..80)).collect(),
            singer_id: rng.gen_range(0..4),
        };
        let f0 = F0Contour::new((0..l).map(|_| rng.gen_range(150.0..500.0)).collect()).unwrap();
        let mel = MelSpectrogram::new(Tensor::from_fn(&[l, 128], |_| rng.gen_range(-8.0f32..0.0))).unwrap();
        let path = if seed % 2 == 0 { PitchPath::Midi } else { PitchPath::F0 };
        let p64: ParamStore<f64> = model.params.cast();
        let skip = match path {
            PitchPath::Midi => "pitch.f0.",
            PitchPath::F0 => "pitch.midi.",
        };
        let names: Vec<String> = p64
            .names()
            .filter(|n| !n.starts_with(skip))
            .map(str::to_string)
            .collect();
        let inputs_t: Vec<Tensor<f64>> =
            names.iter().map(|n| p64.get(n).unwrap().as_ref().clone()).collect();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            for (n, &var) in names.iter().zip(v) {
                g.bind_param(n, var);
            }
            let b = model.forward_teacher(g, &p64, &inputs, path, Some(&f0), &mel, &Conditioning::default())?;
            project(g, b.total, seed)
        };
        // Two coordinates from every parameter tensor.
        let coords: Vec<(usize, usize)> = inputs_t
            .iter()
            .enumerate()
            .flat_map(|(i, t)| {
                let n = t.len();
                [(i, rng.gen_range(0..n)), (i, rng.gen_range(0..n))]
            })
            .collect();
        let r = grad_check_at("model", &f, &inputs_t, MODEL_EPS, &coords);
        let label = match &r {
            Ok(GradCheckReport { worst: Some((i, j)), .. }) => format!("model seed {seed}, worst {}[{j}]", names[*i]),
            _ => format!("model seed {seed}"),
        };
        out.record(&label, r);
    });
    out
}

pub fn all() -> Vec<Outcome> {
    vec![
        conv1d_same_and_causal(),
        elementwise_and_structural_ops(),
        reductions_and_losses(),
        embedding_lookup(),
        attention_all_inputs(),
        layers(),
        style_tokens_end_to_end(),
        pitch_encoders(),
        full_model_four_frames(),
    ]
}
