//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! A criterion that misses its target prints FAIL but does not fail the test
//! binary; only a broken harness does. Seed counts and epochs can be lowered
//! for a quick run with `L2G2G_ACCEPTANCE_SEEDS`, `L2G2G_ABLATION_SEEDS` and
//! `L2G2G_ACCEPTANCE_EPOCHS`; `L2G2G_ACCEPTANCE_ONLY=1,2,3` picks criteria.

use std::fs::{self, File};
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use l2g2g::bench::{
    aggregate, dataset_report, preset, run_ablation, run_benchmark, run_once, write_aggregate_csv, write_runs_csv,
    Aggregate, BenchConfig, EvalMode, Reading, RunRecord, PRESETS,
};
use l2g2g::eval::{auc, average_precision};
use l2g2g::gcn::{forward, loss_and_grad, EncoderInput, GcnModel, EMBEDDING_DIM, HIDDEN_DIM};
use l2g2g::graph::count_sbm_edges;
use l2g2g::partition::patches_from_nodes;
use l2g2g::sync::{
    align_and_average, polar_factor, rotation_from_cross_covariance, solve_translations, synchronize, IncidenceSystem,
    SyncPolicy, Transform,
};
use l2g2g::train::{make_patches, train, train_fastgae, train_gae, Regime, TrainConfig};
use l2g2g::{generate_sbm, Graph, Matrix, SbmConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn env_count(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn nal(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn from_nal(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `U Vᵀ` from a fresh SVD: the orthogonal Procrustes solution.
fn procrustes_svd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= &mean;
    }
    out
}

// Criterion 1 ------------------------------------------------------------

/// Ring of patches over consecutive node blocks; neighbours share
/// `overlap` nodes.
fn ring_patches(k: usize, overlap: usize, block: usize) -> Vec<Vec<usize>> {
    let n = k * block;
    (0..k)
        .map(|j| {
            let mut nodes: Vec<usize> = (j * block..(j + 1) * block).collect();
            if k > 1 && (k > 2 || j == 0) {
                nodes.extend((0..overlap).map(|o| ((j + 1) * block + o) % n));
            }
            nodes.sort_unstable();
            nodes.dedup();
            nodes
        })
        .collect()
}

fn sync_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in [2, 5, 10] {
        for e in [2, 16] {
            for _ in 0..5 {
                let overlap = e + 1 + rng.gen_range(0..4);
                let block = overlap + e + rng.gen_range(1..10);
                let nodes = ring_patches(k, overlap, block);
                let n = k * block;
                let g = Graph::without_features(n, (0..n - 1).map(|u| (u, u + 1))).unwrap();
                let (patches, pg) = patches_from_nodes(&g, nodes, overlap).unwrap();
                let truth = DMatrix::from_fn(n, e, |_, _| rng.gen_range(-1.0..1.0));
                // Patch frames: z_j = (Z - T_j) S_jᵀ, so z_j S_j + T_j = Z.
                let embeddings: Vec<Matrix> = patches
                    .patches
                    .iter()
                    .map(|p| {
                        let s = random_orthogonal(e, &mut rng);
                        let t: Vec<f64> = (0..e).map(|_| rng.gen_range(-5.0..5.0)).collect();
                        let mut local = DMatrix::from_fn(p.nodes.len(), e, |r, d| truth[(p.nodes[r], d)] - t[d]);
                        local *= s.transpose();
                        from_nal(&local)
                    })
                    .collect();
                let transforms = match synchronize(&patches, &pg, &embeddings) {
                    Ok(t) => t,
                    Err(err) => return outcome(false, format!("k={k} e={e}: {err}")),
                };
                let z = nal(&align_and_average(&patches, &embeddings, &transforms).unwrap());
                let (zc, tc) = (center(&z), center(&truth));
                let q = procrustes_svd(&(zc.transpose() * &tc));
                let residual = (zc * q - tc).amax();
                worst = worst.max(residual);
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("{cases} instances, worst residual {worst:.2e} (<= 1e-6), {secs:.2}s (< 10s)"),
    )
}

// Criterion 2 ------------------------------------------------------------

fn rotation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let e = rng.gen_range(2..=16);
        let m = DMatrix::from_fn(e, e, |_, _| rng.gen_range(-1.0..1.0));
        let (r, _) = polar_factor(&from_nal(&m));
        worst = worst.max((nal(&r) - procrustes_svd(&m)).amax());
    }
    let skew = Matrix::from_rows(&[vec![0.0, -2.0], vec![2.0, 0.0]]).unwrap();
    let expect = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
    let got = rotation_from_cross_covariance(&skew).unwrap();
    let exact = got == expect;
    outcome(
        worst <= 1e-8 && exact,
        format!("100 instances, worst deviation {worst:.2e} (<= 1e-8); skew case exact: {exact}"),
    )
}

// Criterion 3 ------------------------------------------------------------

fn random_connected_edges(k: usize, extra: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..k).map(|v| (rng.gen_range(0..v), v)).collect();
    for i in 0..k {
        for j in i + 1..k {
            if rng.gen::<f64>() < extra && !edges.contains(&(i, j)) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// `B⁺ = (BᵀB)⁺ Bᵀ`, with `(BᵀB)⁺` from a symmetric eigendecomposition.
/// nalgebra's SVD-based `pseudo_inverse` is off by up to 1e-1 on some of
/// these rank-deficient incidence matrices, so it cannot serve as the oracle.
fn pseudo_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (b.transpose() * b).symmetric_eigen();
    let cutoff = 1e-9 * eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&inv) * q.transpose() * b.transpose()
}

fn translation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let instances = 200;
    for trial in 0..instances {
        let k = rng.gen_range(2..=20);
        let e = rng.gen_range(1..=16);
        // Every fourth instance is a tree.
        let extra = if trial % 4 == 0 { 0.0 } else { rng.gen_range(0.0..0.5) };
        let edges = random_connected_edges(k, extra, &mut rng);
        let c = Matrix::from_fn(edges.len(), e, |_, _| rng.gen_range(-3.0..3.0));
        let sys = IncidenceSystem { k, edges, c };
        let t = match solve_translations(&sys) {
            Ok(t) => t,
            Err(err) => return outcome(false, format!("k={k}: {err}")),
        };
        let oracle = pseudo_inverse(&nal(&sys.dense_b())) * nal(&sys.c);
        worst = worst.max((nal(&t) - oracle).amax());
    }
    outcome(
        worst <= 1e-8,
        format!("{instances} patch graphs with k <= 20, worst deviation {worst:.2e} (<= 1e-8)"),
    )
}

// Criterion 4 ------------------------------------------------------------

/// Loss straight from the definition: weighted BCE over all ordered pairs.
fn brute_force_loss(z: &Matrix, g: &Graph) -> f64 {
    let n = z.rows();
    let n2 = (n * n) as f64;
    let pos = (2 * g.n_edges() + n) as f64;
    let pw = if n2 > pos { (n2 - pos) / pos } else { 1.0 };
    let mut sum = 0.0;
    for u in 0..n {
        for v in 0..n {
            let x: f64 = (0..z.cols()).map(|d| z[(u, d)] * z[(v, d)]).sum();
            let positive = u == v || g.has_edge(u, v);
            // ln σ(x) and ln(1 - σ(x)), both stable.
            let log_p = -(x.max(0.0) - x + (-x.abs()).exp().ln_1p());
            let log_q = -(x.max(0.0) + (-x.abs()).exp().ln_1p());
            sum += if positive { -pw * log_p } else { -log_q };
        }
    }
    sum / n2
}

fn random_graph(n: usize, p: f64, f: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let x = Matrix::from_fn(n, f, |_, _| rng.gen_range(-1.0..1.0));
    Graph::new(n, edges, x).unwrap()
}

fn finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..6 {
        let g = random_graph(20, 0.2, 8, &mut rng);
        let input = EncoderInput::new(&g).unwrap();
        let model = GcnModel::glorot(8, HIDDEN_DIM, EMBEDDING_DIM, &mut rng);
        let transform = (trial % 2 == 1).then(|| Transform {
            rotation: from_nal(&random_orthogonal(EMBEDDING_DIM, &mut rng)),
            translation: (0..EMBEDDING_DIM).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        });
        let loss_of = |m: &GcnModel| {
            let z = forward(m, &input).unwrap().z;
            let z = match &transform {
                Some(t) => t.apply(&z).unwrap(),
                None => z,
            };
            brute_force_loss(&z, &g)
        };
        let (_, grads) = loss_and_grad(&model, &input, &g, transform.as_ref()).unwrap();
        for layer in 0..2 {
            let (rows, cols) = if layer == 0 { grads.w1.shape() } else { grads.w2.shape() };
            for i in 0..rows {
                for j in 0..cols {
                    let bump = |delta: f64| {
                        let mut m = model.clone();
                        let w = if layer == 0 { &mut m.w1 } else { &mut m.w2 };
                        w[(i, j)] += delta;
                        loss_of(&m)
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = if layer == 0 { grads.w1[(i, j)] } else { grads.w2[(i, j)] };
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{checked} weights over 6 graphs (3 with a rigid transform), worst relative error {worst:.2e} (<= 1e-4)"),
    )
}

// Criterion 5 ------------------------------------------------------------

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / 2.0 / (pos as f64 * neg as f64)
}

fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    // Rank of i under a stable descending sort, and positives ranked at or above it.
    let before = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut pos = 0;
    for i in 0..n {
        if !labels[i] {
            continue;
        }
        pos += 1;
        let rank = (0..n).filter(|&j| before(j, i)).count();
        let hits = (0..n).filter(|&j| labels[j] && before(j, i)).count();
        total += hits as f64 / rank as f64;
    }
    total / pos as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=200);
        // Coarse levels force ties.
        let levels = rng.gen_range(1..=n as u32 + 1);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auc(&scores, &labels).unwrap();
        let p = average_precision(&scores, &labels).unwrap();
        if a != brute_auc(&scores, &labels) || p != brute_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 instances with n <= 200, {mismatches} inexact"))
}

// Criterion 6 ------------------------------------------------------------

fn fastgae_sample(g: &Graph) -> Outcome {
    let cfg = TrainConfig::default();
    let n_s = cfg.sample_size_for(10_000).unwrap();
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let gae = train_gae(g, &cfg).unwrap();
    let full = TrainConfig { sample_size: Some(g.n_nodes()), ..cfg };
    let fast = train_fastgae(g, &full).unwrap();
    let bitwise = gae.losses.iter().zip(&fast.losses).all(|(a, b)| a.to_bits() == b.to_bits())
        && gae.losses.len() == fast.losses.len();
    outcome(
        n_s == 100 && bitwise,
        format!(
            "n_s(10000) = {n_s}; n_s = N losses bitwise equal to GAE over {} epochs: {bitwise}",
            gae.losses.len()
        ),
    )
}

// Criteria 7-9 -----------------------------------------------------------

fn find<'a>(agg: &'a [Aggregate], regime: Regime, k: usize) -> Option<&'a Aggregate> {
    agg.iter().find(|a| a.regime == regime && a.k == k)
}

fn save_runs(name: &str, runs: &[RunRecord]) {
    let dir = out_dir();
    write_runs_csv(runs, File::create(dir.join(format!("{name}_runs.csv"))).unwrap()).unwrap();
    write_aggregate_csv(&aggregate(runs), File::create(dir.join(format!("{name}_aggregate.csv"))).unwrap()).unwrap();
}

fn accuracy(g: &Graph, runs: &[RunRecord], secs: f64, epochs: usize) -> Outcome {
    let agg = aggregate(runs);
    for a in &agg {
        say(&format!(
            "    {:<8} auc {:6.2} ± {:.2}  ap {:6.2} ± {:.2}  {:.4} s/epoch  ({} runs, {} failed)",
            a.regime.name(),
            a.auc_mean,
            a.auc_std,
            a.ap_mean,
            a.ap_std,
            a.epoch_time_mean,
            a.runs,
            a.failed
        ));
    }
    let get = |r: Regime| {
        let k = if r.uses_patches() { 10 } else { 1 };
        find(&agg, r, k).filter(|a| a.complete()).map(|a| a.auc_mean)
    };
    let (Some(l2), Some(gl), Some(fg), Some(gae)) =
        (get(Regime::L2g2g), get(Regime::GaeL2g), get(Regime::FastGae), get(Regime::Gae))
    else {
        return outcome(false, "a regime has failed runs");
    };
    let bands = [
        (l2 >= 92.0, format!("l2g2g {l2:.2} >= 92")),
        (l2 >= gl - 0.5, format!("l2g2g {l2:.2} >= gae-l2g {gl:.2} - 0.5")),
        (l2 >= fg + 5.0, format!("l2g2g {l2:.2} >= fastgae {fg:.2} + 5")),
        ((gae - l2).abs() <= 3.0, format!("|gae {gae:.2} - l2g2g {l2:.2}| <= 3")),
    ];
    for (ok, text) in &bands {
        say(&format!("    band {}: {text}", if *ok { "PASS" } else { "FAIL" }));
    }
    // The lenient policy, for the record.
    let lenient = TrainConfig { epochs, sync_policy: SyncPolicy::Lenient, ..TrainConfig::default() };
    let note = match run_once(g, Regime::L2g2g, &lenient, EvalMode::HeldOut) {
        Ok((s, _)) => format!("lenient policy, seed 0: auc {:.2}", 100.0 * s.auc),
        Err(e) => format!("lenient policy stops: {e}"),
    };
    say(&format!("    note: {note}"));
    let passed = bands.iter().filter(|b| b.0).count();
    outcome(
        passed == bands.len(),
        format!("{passed}/4 bands, strict sync policy, {secs:.0}s total"),
    )
}

fn timing(agg: &[Aggregate]) -> Outcome {
    let time = |r: Regime, k: usize| find(agg, r, k).map(|a| a.epoch_time_mean).unwrap_or(f64::NAN);
    let (gae, fg, l2) = (time(Regime::Gae, 1), time(Regime::FastGae, 1), time(Regime::L2g2g, 10));
    let order = fg < gae && l2 < gae;
    say(&format!("    sbm-small s/epoch: fastgae {fg:.4}, l2g2g {l2:.4}, gae {gae:.4}"));

    // Same degree profile as SBM-Small at five times the size.
    let cfg = SbmConfig { n_blocks: 100, block_size: 500, p_in: 0.04, p_out: 2e-5, seed: 0 };
    let big = generate_sbm(&cfg).unwrap();
    let base = TrainConfig::default();
    let (patches, _) = make_patches(&big, &base).unwrap();
    let n = big.n_nodes() as f64;
    let ideal = n * n / patches.patches.iter().map(|p| (p.len() as f64).powi(2)).sum::<f64>();
    let gae_big = train(Regime::Gae, &big, &TrainConfig { epochs: 1, ..base.clone() }).unwrap();
    let l2_big = train(Regime::L2g2g, &big, &TrainConfig { epochs: 2, ..base }).unwrap();
    let ratio = gae_big.mean_epoch_time() / l2_big.mean_epoch_time();
    say(&format!(
        "    N={} M={}: gae {:.2} s/epoch, l2g2g {:.2} s/epoch, ratio {ratio:.2}; N²/Σ N_j² = {ideal:.2}",
        big.n_nodes(),
        big.n_edges(),
        gae_big.mean_epoch_time(),
        l2_big.mean_epoch_time()
    ));
    outcome(
        order && ratio >= 3.0,
        format!("small ordering holds: {order}; N=50000 speedup {ratio:.2} (>= 3)"),
    )
}

fn ablation(g: &Graph, main_runs: &[RunRecord], seeds: usize, epochs: usize) -> Outcome {
    let ks = vec![2, 4, 6, 8];
    let cfg = BenchConfig {
        dataset: "sbm-small".into(),
        regimes: vec![Regime::GaeL2g, Regime::L2g2g],
        seeds: (0..seeds as u64).collect(),
        train: TrainConfig { epochs, ..TrainConfig::default() },
        mode: EvalMode::HeldOut,
        ks,
    };
    let mut runs = run_ablation(g, &cfg).unwrap();
    runs.extend(
        main_runs
            .iter()
            .filter(|r| r.regime.uses_patches() && r.seed < seeds as u64)
            .cloned(),
    );
    save_runs("ablation", &runs);
    let agg = aggregate(&runs);
    let drop = |r: Regime| {
        let means: Vec<f64> = [2, 4, 6, 8, 10].iter().filter_map(|&k| find(&agg, r, k)).map(|a| a.auc_mean).collect();
        for (k, m) in [2, 4, 6, 8, 10].iter().zip(&means) {
            say(&format!("    {:<8} k={k:<2} auc {m:.2}", r.name()));
        }
        means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (l2, gl) = (drop(Regime::L2g2g), drop(Regime::GaeL2g));
    outcome(
        l2 <= gl + 1.0,
        format!("k in 2,4,6,8,10 over {seeds} seeds: l2g2g drop {l2:.2} <= gae-l2g drop {gl:.2} + 1"),
    )
}

// Criterion 10 -----------------------------------------------------------

/// Closed-form mean and standard deviation of the SBM edge count.
fn edge_moments(cfg: &SbmConfig) -> (f64, f64) {
    let (b, s) = (cfg.n_blocks as f64, cfg.block_size as f64);
    let inside = b * s * (s - 1.0) / 2.0;
    let across = b * (b - 1.0) / 2.0 * s * s;
    let mean = inside * cfg.p_in + across * cfg.p_out;
    let var = inside * cfg.p_in * (1.0 - cfg.p_in) + across * cfg.p_out * (1.0 - cfg.p_out);
    (mean, var.sqrt())
}

fn generator_statistics() -> Outcome {
    let mut ok = true;
    for p in &PRESETS {
        for reading in [Reading::Table, Reading::Stated] {
            if reading == Reading::Stated && p.stated == p.table {
                continue;
            }
            let cfg = p.config(reading, 0);
            let (mean, std) = edge_moments(&cfg);
            let count = count_sbm_edges(&cfg).unwrap() as f64;
            let z = (count - mean) / std;
            ok &= z.abs() <= 3.0;
            say(&format!(
                "    {:<16} {:<6} p=({}, {}): {count} edges, expected {mean:.0} ± {std:.0} ({z:+.2}σ)",
                p.name, reading, cfg.p_in, cfg.p_out
            ));
        }
    }
    // The report must single out exactly the two stated readings that
    // cannot produce the tabulated counts.
    let mut flagged = Vec::new();
    for row in dataset_report() {
        let cfg = preset(&row.dataset).unwrap().config(row.reading, 0);
        let (mean, std) = edge_moments(&cfg);
        let delta = row.reported_edges as f64 - mean;
        ok &= (row.delta - delta).abs() <= 1e-6 * mean.max(1.0);
        if (delta / std).abs() > 3.0 {
            flagged.push(format!("{} ({}): {:+.0} = {:+.1}σ", row.dataset, row.reading, delta, delta / std));
        }
    }
    let expected_flags = flagged.len() == 2
        && flagged[0].starts_with("sbm-small (stated)")
        && flagged[1].starts_with("sbm-large-sparse (stated)");
    for f in &flagged {
        say(&format!("    reported vs expected: {f}"));
    }
    outcome(
        ok && expected_flags,
        "all generated counts within 3σ; report reproduces the two discrepancies: ".to_string()
            + if expected_flags { "yes" } else { "no" },
    )
}

// ------------------------------------------------------------------------

fn run(n: usize, name: &str, f: &dyn Fn() -> Outcome, results: &mut Vec<(usize, String, Outcome)>) {
    say(&format!("criterion {n} ({name}): running"));
    let start = Instant::now();
    let out = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    say(&format!(
        "criterion {n} ({name}): {} {} [{:.1}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        start.elapsed().as_secs_f64()
    ));
    results.push((n, name.to_string(), out));
}

fn main() {
    // `cargo test -- --list` and filters other than ours should not start a two-hour run.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().skip(1).find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let seeds = env_count("L2G2G_ACCEPTANCE_SEEDS", 10);
    let ablation_seeds = env_count("L2G2G_ABLATION_SEEDS", 3);
    let epochs = env_count("L2G2G_ACCEPTANCE_EPOCHS", 200);
    // Comma list of criteria to run; all when unset.
    let only: Option<Vec<usize>> = std::env::var("L2G2G_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results = Vec::new();
    let mut check = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if wanted(n) {
            run(n, name, f, &mut results);
        }
    };

    check(1, "synchronization recovery", &sync_recovery);
    check(2, "pairwise rotation oracle", &rotation_oracle);
    check(3, "translation solver oracle", &translation_oracle);
    check(4, "gradient finite differences", &finite_differences);
    check(5, "metric oracles", &metric_oracles);
    check(10, "generator statistics", &generator_statistics);

    if [6, 7, 8, 9].iter().any(|&n| wanted(n)) {
        let small = generate_sbm(&preset("sbm-small").unwrap().config(Reading::Table, 0)).unwrap();
        say(&format!("sbm-small: {} nodes, {} edges", small.n_nodes(), small.n_edges()));
        check(6, "fastgae sample size", &|| fastgae_sample(&small));

        if [7, 8, 9].iter().any(|&n| wanted(n)) {
            let bench = BenchConfig {
                dataset: "sbm-small".into(),
                regimes: Regime::ALL.to_vec(),
                seeds: (0..seeds as u64).collect(),
                train: TrainConfig { epochs, ..TrainConfig::default() },
                mode: EvalMode::HeldOut,
                ks: vec![10],
            };
            let start = Instant::now();
            say(&format!("training {} regimes x {seeds} seeds x {epochs} epochs on sbm-small", Regime::ALL.len()));
            let main_runs = run_benchmark(&small, &bench).unwrap();
            let secs = start.elapsed().as_secs_f64();
            save_runs("sbm_small", &main_runs);
            let agg = aggregate(&main_runs);
            check(7, "sbm-small accuracy", &|| accuracy(&small, &main_runs, secs, epochs));
            check(8, "timing", &|| timing(&agg));
            check(9, "ablation stability", &|| ablation(&small, &main_runs, ablation_seeds, epochs));
        }
    }

    results.sort_by_key(|r| r.0);
    say("");
    say("acceptance summary");
    for (n, name, out) in &results {
        say(&format!("  {n:>2}. {:<28} {}", name, if out.pass { "PASS" } else { "FAIL" }));
    }
    say(&format!("run tables in {}", out_dir().display()));
}
