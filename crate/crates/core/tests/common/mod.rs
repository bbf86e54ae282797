//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use decolite::lite::{LiteConfig, LiteModel};
use decolite::tensor::{Graph, Mode, Tensor, Var};
use decolite::train::{orthogonality_loss, OrthOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so coordinates whose true
/// gradient is numerically zero are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(w * v)` for fixed pseudo-random weights `w`, turning any node into
/// a scalar whose gradient exercises every output entry differently.
pub fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random_tensor(&mut rng, &shape)).unwrap();
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates skipped because the loss has a kink within one step.
    pub kinks: usize,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn merge(&mut self, o: GradReport) {
        self.checked += o.checked;
        self.kinks += o.kinks;
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
    }

    pub fn passes(&self) -> bool {
        self.max_rel_err <= FD_TOL && self.kinks * 20 <= self.checked.max(1)
    }
}

/// Compares one analytic gradient coordinate against central differences of
/// `f`, which returns the loss and the graph's relu/abs branch pattern. A
/// mismatch is excused only when the probe provably crossed a kink, i.e. the
/// branch pattern at `x0 +- h` differs from the one at `x0`.
fn compare(analytic: f64, f: &mut dyn FnMut(f64) -> (f64, Vec<bool>), x0: f64, report: &mut GradReport) {
    let h = FD_STEP;
    let (fp, pp) = f(x0 + h);
    let (fm, pm) = f(x0 - h);
    let err = rel_err(analytic, (fp - fm) / (2.0 * h));
    if err > FD_TOL {
        let (_, p0) = f(x0);
        if pp != p0 || pm != p0 {
            report.kinks += 1;
            return;
        }
    }
    report.checked += 1;
    report.max_rel_err = report.max_rel_err.max(err);
}

/// Gradient check of a graph-built scalar function of several inputs.
pub fn check_graph<F>(inputs: &[Tensor], build: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor]| -> (f64, Vec<bool>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars);
        (g.value(out).item().unwrap(), g.branch_pattern())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let mut report = GradReport::default();
    for (k, t) in inputs.iter().enumerate() {
        for (i, (&x0, &analytic)) in t.data().iter().zip(&grads[k]).enumerate() {
            let mut f = |x: f64| {
                let mut ins = inputs.to_vec();
                ins[k].data_mut()[i] = x;
                eval(&ins)
            };
            compare(analytic, &mut f, x0, &mut report);
        }
    }
    report
}

/// Small LITE variant used where the default width would be slow to probe
/// exhaustively.
pub fn small_lite() -> LiteConfig {
    LiteConfig {
        n_filters: 6,
        first_layer_kernel_sizes: vec![7, 4],
        first_layer_filters_per_kernel: 3,
        dwsc_kernel_sizes: [5, 3],
        dwsc_dilations: [2, 4],
        increasing_lengths: vec![2, 4],
        decreasing_lengths: vec![2],
        peak_lengths: vec![4],
        ..LiteConfig::default()
    }
}

/// Full-model gradient check of `CE + orth(features, reference)` in train
/// mode, probing up to `per_tensor` coordinates of every trainable tensor.
pub fn check_lite(cfg: &LiteConfig, batch: usize, len: usize, per_tensor: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = LiteModel::init(cfg, 3, seed).unwrap();
    let x = random_tensor(&mut rng, &[batch, 1, len]);
    let mut y = vec![0.0; batch * 3];
    for b in 0..batch {
        y[b * 3 + b % 3] = 1.0;
    }
    let y = Tensor::new(&[batch, 3], y).unwrap();
    let reference = random_tensor(&mut rng, &[batch, cfg.n_filters, len]);

    let loss_of = |m: &LiteModel, track: bool| -> (f64, Vec<bool>, Vec<Option<Vec<f64>>>) {
        let mut m = m.clone();
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let out = m.forward(&mut g, xv, Mode::Train, track).unwrap();
        let ce = g.softmax_cross_entropy(out.logits, &y).unwrap();
        let r = g.constant(reference.clone()).unwrap();
        let orth = orthogonality_loss(&mut g, out.features, r, &OrthOptions::default()).unwrap();
        let total = g.add(ce, orth).unwrap();
        let value = g.value(total).item().unwrap();
        if !track {
            return (value, g.branch_pattern(), Vec::new());
        }
        g.backward(total).unwrap();
        let grads = out.params.iter().map(|&p| g.grad(p).map(<[f64]>::to_vec)).collect();
        (value, Vec::new(), grads)
    };

    let (_, _, grads) = loss_of(&model, true);
    let mut report = GradReport::default();
    for (k, grad_k) in grads.iter().enumerate() {
        let len_k = model.params()[k].len();
        let mut picks: Vec<usize> = (0..len_k).collect();
        if len_k > per_tensor {
            for i in 0..per_tensor {
                let j = rng.gen_range(i..len_k);
                picks.swap(i, j);
            }
            picks.truncate(per_tensor);
        }
        for i in picks {
            let x0 = model.params()[k].data()[i];
            let mut f = |v: f64| {
                let mut m = model.clone();
                m.params_mut()[k].data_mut()[i] = v;
                let (v, pattern, _) = loss_of(&m, false);
                (v, pattern)
            };
            let a = grad_k.as_ref().map_or(0.0, |g| g[i]);
            compare(a, &mut f, x0, &mut report);
        }
    }
    report
}

/// DTW by enumerating every monotone warping path.
pub fn dtw_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]) * (a[i] - b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Two-sided signed-rank p-value by enumerating all 2^n sign assignments of
/// the nonzero differences.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // average ranks of |d| by pairwise counting
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&x| {
            let less = abs.iter().filter(|&&y| y < x).count() as f64;
            let equal = abs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// Planted 2-D points and their Euclidean distance matrix.
pub fn planted_points(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
    let d = pts
        .iter()
        .flat_map(|p| pts.iter().map(move |q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()))
        .collect();
    (pts, d)
}

/// Finite-difference checks of every graph primitive, by name.
pub fn primitive_suite() -> Vec<(String, GradReport)> {
    use decolite::tensor::RunningStats;
    use decolite::train::OrthNormalization;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out: Vec<(String, GradReport)> = Vec::new();

    for dilation in [1, 2, 4] {
        for (groups, cout) in [(1, 3), (4, 4)] {
            let x = random_tensor(&mut rng, &[2, 4, 9]);
            let k = random_tensor(&mut rng, &[cout, 4 / groups, 3]);
            let b = random_tensor(&mut rng, &[cout]);
            let r = check_graph(&[x, k, b], |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), dilation, groups).unwrap();
                weighted_sum(g, y, 1)
            });
            out.push((format!("conv1d d={dilation} groups={groups}"), r));
        }
    }
    let x = random_tensor(&mut rng, &[2, 1, 5]);
    let k = random_tensor(&mut rng, &[2, 1, 7]);
    out.push((
        "conv1d kernel longer than series".into(),
        check_graph(&[x, k], |g, v| {
            let y = g.conv1d(v[0], v[1], None, 1, 1).unwrap();
            weighted_sum(g, y, 2)
        }),
    ));

    let x = random_tensor(&mut rng, &[3, 2, 5]);
    let gamma = random_tensor(&mut rng, &[2]);
    let beta = random_tensor(&mut rng, &[2]);
    let running = RunningStats {
        mean: vec![0.1, -0.2],
        var: vec![0.7, 1.3],
    };
    for mode in [Mode::Train, Mode::Eval] {
        let r = check_graph(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            let (y, _) = g.batch_norm_1d(v[0], v[1], v[2], &running, mode, 1e-5).unwrap();
            weighted_sum(g, y, 3)
        });
        out.push((format!("batch_norm_1d {mode:?}"), r));
    }

    let x = random_tensor(&mut rng, &[2, 3, 4]);
    out.push((
        "relu".into(),
        check_graph(std::slice::from_ref(&x), |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 4)
        }),
    ));
    out.push((
        "abs".into(),
        check_graph(std::slice::from_ref(&x), |g, v| {
            let y = g.abs(v[0]);
            weighted_sum(g, y, 5)
        }),
    ));
    out.push((
        "global_avg_pool".into(),
        check_graph(std::slice::from_ref(&x), |g, v| {
            let y = g.global_avg_pool(v[0]).unwrap();
            weighted_sum(g, y, 6)
        }),
    ));

    let xin = random_tensor(&mut rng, &[3, 4]);
    let w = random_tensor(&mut rng, &[2, 4]);
    let b = random_tensor(&mut rng, &[2]);
    out.push((
        "dense".into(),
        check_graph(&[xin, w, b], |g, v| {
            let y = g.dense(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, 7)
        }),
    ));

    let logits = random_tensor(&mut rng, &[3, 4]);
    let targets = Tensor::new(&[3, 4], vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0.]).unwrap();
    out.push((
        "softmax_cross_entropy".into(),
        check_graph(&[logits], |g, v| g.softmax_cross_entropy(v[0], &targets).unwrap()),
    ));

    let a = random_tensor(&mut rng, &[2, 3, 4]);
    let b = random_tensor(&mut rng, &[2, 3, 4]);
    out.push((
        "cosine_similarity_matrix batched".into(),
        check_graph(&[a.clone(), b.clone()], |g, v| {
            let y = g.cosine_similarity_matrix(v[0], v[1], 1e-8).unwrap();
            weighted_sum(g, y, 8)
        }),
    ));
    let a2 = random_tensor(&mut rng, &[3, 5]);
    let b2 = random_tensor(&mut rng, &[3, 5]);
    out.push((
        "cosine_similarity_matrix single".into(),
        check_graph(&[a2, b2], |g, v| {
            let y = g.cosine_similarity_matrix(v[0], v[1], 1e-8).unwrap();
            weighted_sum(g, y, 9)
        }),
    ));

    let m = random_tensor(&mut rng, &[2, 3, 3]);
    for diag in [false, true] {
        out.push((
            format!("offdiag_abs_sum diag={diag}"),
            check_graph(std::slice::from_ref(&m), |g, v| {
                let y = g.offdiag_abs_sum(v[0], diag).unwrap();
                weighted_sum(g, y, 10)
            }),
        ));
    }

    let c1 = random_tensor(&mut rng, &[2, 1, 4]);
    let c2 = random_tensor(&mut rng, &[2, 3, 4]);
    out.push((
        "concat_channels".into(),
        check_graph(&[c1, c2], |g, v| {
            let y = g.concat_channels(&[v[0], v[1]]).unwrap();
            weighted_sum(g, y, 11)
        }),
    ));

    let p = random_tensor(&mut rng, &[2, 3]);
    let q = random_tensor(&mut rng, &[2, 3]);
    out.push(("sum".into(), check_graph(std::slice::from_ref(&p), |g, v| g.sum(v[0]))));
    out.push((
        "mean".into(),
        check_graph(std::slice::from_ref(&p), |g, v| {
            let s = g.scale(v[0], 2.5);
            let y = g.mul(s, v[0]).unwrap();
            g.mean(y)
        }),
    ));
    out.push((
        "scale".into(),
        check_graph(std::slice::from_ref(&p), |g, v| {
            let y = g.scale(v[0], -1.75);
            weighted_sum(g, y, 12)
        }),
    ));
    out.push((
        "add".into(),
        check_graph(&[p.clone(), q.clone()], |g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            weighted_sum(g, y, 13)
        }),
    ));
    out.push((
        "mul".into(),
        check_graph(&[p, q], |g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            weighted_sum(g, y, 14)
        }),
    ));

    for normalization in [OrthNormalization::MeanOffDiag, OrthNormalization::RawSum] {
        let opts = OrthOptions {
            normalization,
            ..OrthOptions::default()
        };
        out.push((
            format!("orthogonality_loss {normalization:?}"),
            check_graph(&[a.clone(), b.clone()], |g, v| orthogonality_loss(g, v[0], v[1], &opts).unwrap()),
        ));
    }
    out
}

/// Everything measured for one (reference, second-seed) pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub fid_base: f64,
    pub fid_deco: f64,
    pub orth_base: f64,
    pub orth_deco: f64,
    /// Reference checksum before and after decorrelated training.
    pub frozen: (u64, u64),
    /// Starting checksums of the base and decorrelated second models.
    pub starts: (u64, u64),
    pub all_losses_finite: bool,
}

/// Trains a reference, an independent base model and a decorrelated model
/// (both from `seed`), then compares each against the reference: FID of
/// pooled test-split features and the orthogonality loss of train-split
/// features in eval mode.
pub fn decorrelation_pair(
    train: &decolite::data::TimeSeriesDataset,
    test: &decolite::data::TimeSeriesDataset,
    arch: &LiteConfig,
    cfg: &decolite::train::TrainConfig,
    reference_seed: u64,
    seed: u64,
) -> PairOutcome {
    use decolite::diversity::{feature_statistics, fid, FeaturePooling};
    use decolite::train::{orthogonality_loss_value, train_base, train_decorrelated};

    let reference = train_base(train, arch, &cfg.with_seed(reference_seed)).unwrap();
    let before = reference.model.checksum();
    let base = train_base(train, arch, &cfg.with_seed(seed)).unwrap();
    let deco = train_decorrelated(train, arch, &cfg.with_seed(seed), &[&reference.model]).unwrap();
    let after = reference.model.checksum();

    let stats = |m: &LiteModel, id: &str| feature_statistics(m, &test.x, id, FeaturePooling::GlobalAverage).unwrap();
    let ref_stats = stats(&reference.model, "reference");
    let ref_feats = reference.model.infer(&train.x).unwrap().1;
    let orth = |m: &LiteModel| {
        let f = m.infer(&train.x).unwrap().1;
        orthogonality_loss_value(&f, &ref_feats, &cfg.orth_options()).unwrap()
    };
    let finite = [&reference, &base, &deco]
        .iter()
        .all(|o| o.log.records().iter().all(|r| r.total_loss.is_finite()));
    PairOutcome {
        fid_base: fid(&ref_stats, &stats(&base.model, "base")).unwrap(),
        fid_deco: fid(&ref_stats, &stats(&deco.model, "deco")).unwrap(),
        orth_base: orth(&base.model),
        orth_deco: orth(&deco.model),
        frozen: (before, after),
        starts: (base.init_checksum, deco.init_checksum),
        all_losses_finite: finite,
    }
}
