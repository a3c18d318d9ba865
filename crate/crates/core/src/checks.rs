//! Self-contained verification suites behind the `gradcheck` and `mmdcheck`
//! commands: the gradient oracle for the full joint objective, and the MMD
//! property battery.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::losses::{mmd_vstat, rbf_kernel, total_loss, Ablation, BatchTriple};
use crate::networks::{ModelParams, Net, NetSpec, Nets, ALL_NETS};
use crate::pipeline::ExperimentConfig;

/// One named check with its outcome.
#[derive(Debug, Clone)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.items.push(CheckItem {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            s.push_str(&format!(
                "[{}] {}: {}\n",
                if i.passed { "PASS" } else { "FAIL" },
                i.name,
                i.detail
            ));
        }
        s
    }
}

fn randv(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, spec: &NetSpec, n_synth: usize, n_pairs: usize) -> BatchTriple {
    let out = spec.head_output_dim();
    BatchTriple {
        synth: (0..n_synth)
            .map(|_| {
                (
                    randv(rng, spec.input_dim, -1.0, 1.0),
                    randv(rng, out, -2.0, 2.0),
                )
            })
            .collect(),
        pairs: (0..n_pairs)
            .map(|_| {
                (
                    randv(rng, spec.color_input_dim(), -1.0, 1.0),
                    randv(rng, spec.input_dim, -1.0, 1.0),
                )
            })
            .collect(),
    }
}

fn flatten_params(params: &ModelParams) -> Vec<Vec<f64>> {
    ALL_NETS
        .iter()
        .flat_map(|net| params.collection(*net).params.iter().map(|p| p.data.clone()))
        .collect()
}

fn unflatten_params(template: &ModelParams, flat: &[Vec<f64>]) -> ModelParams {
    let mut out = template.clone();
    let mut i = 0;
    for net in ALL_NETS {
        for p in out.collection_mut(net).params.iter_mut() {
            p.data = flat[i].clone();
            i += 1;
        }
    }
    out
}

/// Max relative error between reverse-mode and central-difference gradients
/// of the full joint objective, on randomly sampled coordinates from every
/// parameter collection.
pub fn gradient_check(cfg: &ExperimentConfig, seeds: u64, coords_per_tensor: usize) -> CheckReport {
    let mut report = CheckReport::default();
    let spec = cfg.net_spec();
    let weights = cfg.loss_weights();
    let ablation = Ablation {
        fm_on: true,
        mmd_on: true,
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();

    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let nets = Nets::init(spec.clone(), rng.random()).expect("spec validated");
        let batch = random_batch(&mut rng, &spec, 3, 3);

        let bound = nets.bind();
        let terms = total_loss(&nets, &bound, &batch, &weights, ablation).expect("loss evaluates");
        let grads = bound.gradients(&terms.total).expect("backward succeeds");

        let mut flat = flatten_params(&nets.params);
        let eval = |p: &[Vec<f64>]| {
            let alt = Nets::new(spec.clone(), unflatten_params(&nets.params, p));
            let b = alt.bind();
            total_loss(&alt, &b, &batch, &weights, ablation)
                .expect("loss evaluates")
                .total
                .value()
        };

        let mut tensor_index = 0;
        for net in ALL_NETS {
            for (pi, _) in nets.params.collection(net).params.iter().enumerate() {
                let leaf = &bound.leaves(net)[pi];
                let ad = grads.get(leaf);
                let n = ad.len();
                for k in 0..coords_per_tensor.min(n) {
                    let ci = (rng.random_range(0..n as u64) as usize + k * 7919) % n;
                    let fd = crate::autodiff::finite_difference_coord(
                        eval,
                        &mut flat,
                        (tensor_index, ci),
                        eps,
                    )
                    .expect("eps positive");
                    let denom = fd.abs().max(ad[ci].abs()).max(1e-8);
                    let rel = (ad[ci] - fd).abs() / denom;
                    if rel > worst {
                        worst = rel;
                        worst_at = format!(
                            "seed {seed}, {} tensor {pi} coord {ci} (ad {:.6e}, fd {:.6e})",
                            net.tag(),
                            ad[ci],
                            fd
                        );
                    }
                }
                tensor_index += 1;
            }
        }
    }

    report.push(
        "gradient oracle (all loss terms active)",
        worst <= 1e-4,
        format!("max relative error {worst:.3e} (worst at {worst_at})"),
    );
    report
}

/// Zero gradients of the MMD term for every collection but the depth
/// extractor, by construction of the term's inputs.
pub fn mmd_routing_check(cfg: &ExperimentConfig, seeds: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let spec = cfg.net_spec();
    let mut all_zero = true;
    let mut depth_signal = false;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let nets = Nets::init(spec.clone(), rng.random()).expect("spec validated");
        let bound = nets.bind();
        let real: Vec<Vec<f64>> = (0..4).map(|_| randv(&mut rng, spec.input_dim, -1.0, 1.0)).collect();
        let synth: Vec<Vec<f64>> = (0..5).map(|_| randv(&mut rng, spec.input_dim, -1.0, 1.0)).collect();
        let loss = crate::losses::mmd_loss(&nets, &bound, &real, &synth, cfg.sigma)
            .expect("mmd evaluates");
        let grads = bound.gradients(&loss).expect("backward succeeds");
        for net in [Net::FColor, Net::MapG, Net::Head] {
            for leaf in bound.leaves(net) {
                if grads.get(leaf).iter().any(|g| *g != 0.0) {
                    all_zero = false;
                }
            }
        }
        if bound
            .leaves(Net::FDepth)
            .iter()
            .any(|leaf| grads.get(leaf).iter().any(|g| *g != 0.0))
        {
            depth_signal = true;
        }
    }
    report.push(
        "MMD gradient routing",
        all_zero && depth_signal,
        if all_zero {
            "gradients w.r.t. color extractor, mapping network and head are identically zero"
                .to_string()
        } else {
            "nonzero gradient leaked outside the depth extractor".to_string()
        },
    );
    report
}

/// The MMD property battery: exact zero on identical sets, nonnegativity,
/// the closed-form single-pair value, agreement with a double-loop oracle,
/// and monotonicity in mean shift for Gaussian clouds at several bandwidths.
pub fn mmd_check() -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Exactly zero on identical sets.
    let set: Vec<Vec<f64>> = (0..16).map(|_| randv(&mut rng, 8, -1.0, 1.0)).collect();
    let v = mmd_vstat(&set, &set, 1.0).expect("non-empty");
    report.push(
        "identical sets give exactly zero",
        v == 0.0,
        format!("value {v:e}"),
    );

    // Nonnegative on random sets.
    let mut min_seen = f64::MAX;
    for _ in 0..200 {
        let a: Vec<Vec<f64>> = (0..rng.random_range(1..10))
            .map(|_| randv(&mut rng, 5, -2.0, 2.0))
            .collect();
        let b: Vec<Vec<f64>> = (0..rng.random_range(1..10))
            .map(|_| randv(&mut rng, 5, -2.0, 2.0))
            .collect();
        min_seen = min_seen.min(mmd_vstat(&a, &b, rng.random_range(0.5..2.0)).expect("non-empty"));
    }
    report.push(
        "V-statistic is nonnegative",
        min_seen >= -1e-12,
        format!("min over 200 random pairs {min_seen:e}"),
    );

    // Single-pair closed form: 2 - 2 exp(-1).
    let v = mmd_vstat(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 1.0).expect("non-empty");
    let want = 2.0 - 2.0 * (-1.0f64).exp();
    report.push(
        "n = m = 1 closed form",
        (v - want).abs() <= 1e-12,
        format!("got {v}, want {want}"),
    );

    // Double-loop oracle agreement.
    let mut max_diff: f64 = 0.0;
    for _ in 0..20 {
        let a: Vec<Vec<f64>> = (0..rng.random_range(2..12))
            .map(|_| randv(&mut rng, 6, -2.0, 2.0))
            .collect();
        let b: Vec<Vec<f64>> = (0..rng.random_range(2..12))
            .map(|_| randv(&mut rng, 6, -2.0, 2.0))
            .collect();
        let sigma = rng.random_range(0.5..2.0);
        let got = mmd_vstat(&a, &b, sigma).expect("non-empty");
        let (n, m) = (a.len() as f64, b.len() as f64);
        let mut aa = 0.0;
        for x in &a {
            for y in &a {
                aa += rbf_kernel(x, y, sigma).expect("widths match");
            }
        }
        let mut ab = 0.0;
        for x in &a {
            for y in &b {
                ab += rbf_kernel(x, y, sigma).expect("widths match");
            }
        }
        let mut bb = 0.0;
        for x in &b {
            for y in &b {
                bb += rbf_kernel(x, y, sigma).expect("widths match");
            }
        }
        let want = aa / (n * n) - 2.0 * ab / (n * m) + bb / (m * m);
        max_diff = max_diff.max((got - want).abs());
    }
    report.push(
        "double-loop oracle agreement",
        max_diff <= 1e-10,
        format!("max |difference| {max_diff:e}"),
    );

    // Monotone in mean separation for 8-d unit Gaussians, 5-seed mean,
    // at each bandwidth.
    for sigma in [0.5, 1.0, 2.0] {
        let shifts = [0.0, 0.5, 1.0, 2.0];
        let mut means = [0.0f64; 4];
        for seed in 0..5 {
            let mut g = ChaCha8Rng::seed_from_u64(100 + seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for (si, shift) in shifts.iter().enumerate() {
                let a: Vec<Vec<f64>> = (0..256)
                    .map(|_| (0..8).map(|_| normal.sample(&mut g)).collect())
                    .collect();
                let b: Vec<Vec<f64>> = (0..256)
                    .map(|_| {
                        (0..8)
                            .map(|k| normal.sample(&mut g) + if k == 0 { *shift } else { 0.0 })
                            .collect()
                    })
                    .collect();
                means[si] += mmd_vstat(&a, &b, sigma).expect("non-empty") / 5.0;
            }
        }
        let monotone = means.windows(2).all(|w| w[0] < w[1]);
        report.push(
            format!("monotone in mean shift (sigma {sigma})"),
            monotone,
            format!(
                "means over shifts 0/0.5/1/2: {:.4e} {:.4e} {:.4e} {:.4e}",
                means[0], means[1], means[2], means[3]
            ),
        );
    }
    report
}
