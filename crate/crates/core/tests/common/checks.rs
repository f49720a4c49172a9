//! Measured checks shared by the module suites and the acceptance report.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use reco_core::losses::{
    combined, info_nce, paco, reco_with, supcon, BaseObjective, ClassCenters, CombinedConfig, EmbeddingBatch,
    NegativeMask, RecoOptions,
};
use reco_core::probe::{evaluate, fit_linear_probe, relative_report, ProbeConfig, ProbeResult};
use reco_core::sampler::{acceptance_matrix, draw_mask, SamplerConfig};
use reco_core::taxonomy::{
    filter_concepts, raw_similarity, select_realms, SimilarityConfig, SimilarityTable, TaxonomyDag,
};
use reco_core::trainer::{batch_gradients, Encoder, Objective, TrainConfig};

use super::*;

pub const FD_STEP: f64 = 1e-5;

/// A random batch of `2N` unit rows with a few classes.
pub struct RandomBatch {
    pub z: Array2<f64>,
    pub sample_labels: Vec<usize>,
    pub classes: usize,
    pub temperature: f64,
}

pub fn random_batch(rng: &mut ChaCha8Rng) -> RandomBatch {
    let samples = rng.random_range(2..=4);
    let dim = rng.random_range(3..=5);
    let classes = rng.random_range(1..=3);
    RandomBatch {
        z: unit_rows(rng, 2 * samples, dim),
        sample_labels: (0..samples).map(|_| rng.random_range(0..classes)).collect(),
        classes,
        temperature: rng.random_range(0.1..1.0),
    }
}

/// Bernoulli(0.6) off-diagonal mask; rows left empty get one random candidate so the
/// loss stays defined when positives are not unioned into the denominator.
pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> NegativeMask {
    let mut m = Array2::from_shape_fn((n, n), |(i, k)| i != k && rng.random_bool(0.6));
    for i in 0..n {
        if (0..n).all(|k| !m[[i, k]]) {
            let mut k = rng.random_range(0..n - 1);
            if k >= i {
                k += 1;
            }
            m[[i, k]] = true;
        }
    }
    NegativeMask::new(m, 0, 0).unwrap()
}

fn batch_of(z: &Array2<f64>, labels: &[usize]) -> EmbeddingBatch<f64> {
    EmbeddingBatch::from_view_pairs(z.clone(), labels).unwrap()
}

/// Worst relative error between analytic and finite-difference gradients per loss over
/// `trials` random batches.
pub fn loss_gradient_errors(seed: u64, trials: usize) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    let mut worst: Vec<(&'static str, f64)> = ["info_nce", "supcon", "paco", "paco_centers", "reco", "combined", "combined_centers"]
        .into_iter()
        .map(|n| (n, 0.0))
        .collect();
    let mut record = |name: &str, err: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(err);
    };
    for _ in 0..trials {
        let b = random_batch(&mut rng);
        let (labels, tau) = (b.sample_labels.clone(), b.temperature);
        let n = b.z.nrows();

        // info_nce needs no labels; give every sample its own class.
        let distinct: Vec<usize> = (0..labels.len()).collect();
        let a = info_nce(&batch_of(&b.z, &distinct), tau).unwrap().grad_z;
        let fd = fd_gradient(&b.z, FD_STEP, |z| info_nce(&batch_of(z, &distinct), tau).unwrap().value);
        record("info_nce", relative_error(&a, &fd));

        let mean = rng.random_bool(0.5);
        let a = supcon(&batch_of(&b.z, &labels), tau, mean).unwrap().grad_z;
        let fd = fd_gradient(&b.z, FD_STEP, |z| supcon(&batch_of(z, &labels), tau, mean).unwrap().value);
        record("supcon", relative_error(&a, &fd));

        let centers = ClassCenters(unit_rows(&mut rng, b.classes, b.z.ncols()));
        let res = paco(&batch_of(&b.z, &labels), &centers, tau).unwrap();
        let fd = fd_gradient(&b.z, FD_STEP, |z| paco(&batch_of(z, &labels), &centers, tau).unwrap().value);
        record("paco", relative_error(&res.grad_z, &fd));
        let batch = batch_of(&b.z, &labels);
        let fd_c = fd_gradient(&centers.0, FD_STEP, |c| paco(&batch, &ClassCenters(c.clone()), tau).unwrap().value);
        record("paco_centers", relative_error(res.grad_centers.as_ref().unwrap(), &fd_c));

        let mask = random_mask(&mut rng, n);
        let opts = RecoOptions {
            include_positive_in_denominator: rng.random_bool(0.5),
            mean_over_positives: rng.random_bool(0.5),
        };
        let a = reco_with(&batch_of(&b.z, &labels), &mask, tau, opts).unwrap().grad_z;
        let fd = fd_gradient(&b.z, FD_STEP, |z| reco_with(&batch_of(z, &labels), &mask, tau, opts).unwrap().value);
        record("reco", relative_error(&a, &fd));

        let base = if rng.random_bool(0.5) { BaseObjective::Supcon } else { BaseObjective::Paco };
        let cfg = CombinedConfig { base, alpha: rng.random_range(0.0..2.0), temperature: tau, reco: opts };
        let res = combined(&batch_of(&b.z, &labels), Some(&centers), &mask, &cfg).unwrap();
        let fd = fd_gradient(&b.z, FD_STEP, |z| combined(&batch_of(z, &labels), Some(&centers), &mask, &cfg).unwrap().value);
        record("combined", relative_error(&res.grad_z, &fd));
        if let Some(gc) = &res.grad_centers {
            let fd_c = fd_gradient(&centers.0, FD_STEP, |c| {
                combined(&batch, Some(&ClassCenters(c.clone())), &mask, &cfg).unwrap().value
            });
            record("combined_centers", relative_error(gc, &fd_c));
        }
    }
    worst
}

fn encoder_from_flat(shape: &Encoder<f64>, flat: &[f64]) -> Encoder<f64> {
    let mut e = shape.clone();
    let mut it = flat.iter().copied();
    for v in e.w1.iter_mut().chain(e.b1.iter_mut()).chain(e.w2.iter_mut()).chain(e.b2.iter_mut()) {
        *v = it.next().unwrap();
    }
    e
}

/// Worst relative error of full encoder backprop against finite differences of the
/// per-view batch loss, over the trainable objectives on a 2-sample batch of 4 views.
pub fn encoder_gradient_error(seed: u64) -> Vec<(Objective, f64)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for objective in [Objective::InfoNce, Objective::Supcon, Objective::Paco, Objective::RecoSupcon, Objective::RecoPaco] {
        let mut enc = Encoder::<f64>::new(5, 6, 4, &mut rng);
        for v in enc.b1.iter_mut().chain(enc.b2.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        let views = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let labels = [0usize, 1];
        let centers = ClassCenters(unit_rows(&mut rng, 2, 4));
        let mask = random_mask(&mut rng, 4);
        let cfg = TrainConfig { objective, temperature: 0.5, ..Default::default() };
        let centers = objective.uses_centers().then_some(&centers);
        let mask = objective.uses_mask().then_some(&mask);
        let (_, grads, _) = batch_gradients(&enc, centers, &views, &labels, mask, &cfg).unwrap();
        let analytic: Vec<f64> = grads.w1.iter().chain(&grads.b1).chain(&grads.w2).chain(&grads.b2).copied().collect();
        let flat = Array2::from_shape_vec((1, analytic.len()), enc.flat_params()).unwrap();
        let fd = fd_gradient(&flat, FD_STEP, |p| {
            let e = encoder_from_flat(&enc, p.as_slice().unwrap());
            batch_gradients(&e, centers, &views, &labels, mask, &cfg).unwrap().0
        });
        let analytic = Array2::from_shape_vec((1, analytic.len()), analytic).unwrap();
        out.push((objective, relative_error(&analytic, &fd)));
    }
    out
}

/// Each reduction identity checked for bitwise equality of value, per-anchor terms and
/// gradients over `trials` random batches. Returns the failing identities.
pub fn reduction_identities(seed: u64, trials: usize) -> Vec<String> {
    let mut rng = rng(seed);
    let mut failures = BTreeSet::new();
    let same = |a: &reco_core::losses::LossResult<f64>, b: &reco_core::losses::LossResult<f64>| {
        a.value.to_bits() == b.value.to_bits()
            && a.per_anchor.iter().zip(&b.per_anchor).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.grad_z.iter().zip(b.grad_z.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    for _ in 0..trials {
        let b = random_batch(&mut rng);
        let batch = batch_of(&b.z, &b.sample_labels);
        let tau = b.temperature;
        let n = batch.len();
        for mean in [false, true] {
            let sc = supcon(&batch, tau, mean).unwrap();
            let opts = RecoOptions { include_positive_in_denominator: true, mean_over_positives: mean };
            if !same(&reco_with(&batch, &NegativeMask::all(n), tau, opts).unwrap(), &sc) {
                failures.insert("reco(all-true mask) == supcon".to_string());
            }
        }
        let sc = supcon(&batch, tau, false).unwrap();
        if !same(&paco(&batch, &ClassCenters::empty(batch.dim()), tau).unwrap(), &sc) {
            failures.insert("paco(no centers) == supcon".to_string());
        }
        let distinct: Vec<usize> = (0..n / 2).collect();
        let db = batch_of(&b.z, &distinct);
        if !same(&supcon(&db, tau, false).unwrap(), &info_nce(&db, tau).unwrap()) {
            failures.insert("supcon(distinct classes) == info_nce".to_string());
        }
        let mask = random_mask(&mut rng, n);
        let centers = ClassCenters(unit_rows(&mut rng, b.classes, batch.dim()));
        for base in [BaseObjective::Supcon, BaseObjective::Paco] {
            let cfg = CombinedConfig { alpha: 0.0, ..CombinedConfig::new(base, tau) };
            let expect = match base {
                BaseObjective::Supcon => supcon(&batch, tau, false).unwrap(),
                BaseObjective::Paco => paco(&batch, &centers, tau).unwrap(),
            };
            let got = combined(&batch, Some(&centers), &mask, &cfg).unwrap();
            let centers_same = match (&got.grad_centers, &expect.grad_centers) {
                (Some(a), Some(b)) => a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
                (None, None) => true,
                _ => false,
            };
            if !same(&got, &expect) || !centers_same {
                failures.insert(format!("combined(alpha=0) == {base:?}"));
            }
        }
    }
    failures.into_iter().collect()
}

/// Directed hop count from the root, by repeated relaxation over the edge list.
fn oracle_depths(n: usize, index: impl Fn(&str) -> usize, edges: &[(String, String)]) -> Vec<usize> {
    let mut d = vec![usize::MAX; n];
    d[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for (p, c) in edges {
            if index(p) == u && d[index(c)] == usize::MAX {
                d[index(c)] = d[u] + 1;
                queue.push_back(index(c));
            }
        }
    }
    d
}

/// Similarity properties on `trials` random single-rooted taxonomies of at most 50
/// nodes. Returns the first violation found.
pub fn similarity_oracle(seed: u64, trials: usize) -> Result<usize, String> {
    let mut rng = rng(seed);
    let mut pairs = 0;
    for t in 0..trials {
        let n = rng.random_range(2..=50);
        let tax = random_taxonomy(&mut rng, n, 0.3);
        let dag = TaxonomyDag::new(tax.nodes.clone(), &tax.edges).map_err(|e| format!("trial {t}: {e}"))?;
        let ids: Vec<String> = tax.nodes.iter().map(|x| x.id.clone()).collect();
        let index = |s: &str| ids.iter().position(|x| x == s).unwrap();
        let fw = floyd_warshall(n, index, &tax.edges);
        let depth = oracle_depths(n, index, &tax.edges);
        let mut raw = vec![vec![0.0f64; n]; n];
        for a in 0..n {
            for b in 0..n {
                let bfs = dag.shortest_path(&ids[a], &ids[b]).unwrap();
                if bfs != fw[a][b] {
                    return Err(format!("trial {t}: BFS d({},{}) = {bfs}, Floyd–Warshall {}", ids[a], ids[b], fw[a][b]));
                }
                raw[a][b] = raw_similarity::<f64>(&dag, &ids[a], &ids[b]).unwrap();
                let expect = ((2 * depth[a].max(depth[b]) + 1) as f64 / (fw[a][b] + 1) as f64).ln();
                if (raw[a][b] - expect).abs() > 1e-12 {
                    return Err(format!("trial {t}: s({},{}) = {}, expected {expect}", ids[a], ids[b], raw[a][b]));
                }
                if raw[a][b] < 0.0 {
                    return Err(format!("trial {t}: s({},{}) negative", ids[a], ids[b]));
                }
                pairs += 1;
            }
        }
        for a in 0..n {
            for b in 0..n {
                if raw[a][b].to_bits() != raw[b][a].to_bits() {
                    return Err(format!("trial {t}: asymmetric at ({},{})", ids[a], ids[b]));
                }
                for q in 0..n {
                    let deeper = depth[a].max(depth[q]) > depth[a].max(depth[b]);
                    if fw[a][b] == fw[a][q] && deeper && raw[a][q] <= raw[a][b] {
                        return Err(format!("trial {t}: depth monotonicity fails for anchor {}", ids[a]));
                    }
                }
            }
        }
    }
    Ok(pairs)
}

/// A small taxonomy whose leaves sit at several depths and distances.
pub fn mixed_depth_taxonomy() -> TaxonomyDag {
    let e = |p: &str, c: &str| (p.to_string(), c.to_string());
    TaxonomyDag::from_edges(&[
        e("root", "animal"),
        e("root", "device"),
        e("animal", "mammal"),
        e("animal", "bird"),
        e("mammal", "dog"),
        e("mammal", "cat"),
        e("dog", "husky"),
        e("dog", "labrador"),
        e("bird", "owl"),
        e("device", "phone"),
    ])
    .unwrap()
}

pub struct MarginalReport {
    pub worst_sigma: f64,
    pub same_class_accepted: u64,
    pub entries: usize,
}

/// Empirical acceptance rate of every mask entry over `draws` steps against its
/// Bernoulli probability, in binomial standard deviations.
pub fn mask_marginals(seed: u64, draws: u64) -> MarginalReport {
    let dag = mixed_depth_taxonomy();
    let table = SimilarityTable::<f64>::for_leaf_classes(&dag, &SimilarityConfig::default()).unwrap();
    // Two views per sample: husky, husky, labrador, cat, owl, phone.
    let pos = |id: &str| table.position(id).unwrap();
    let samples = [pos("husky"), pos("husky"), pos("labrador"), pos("cat"), pos("owl"), pos("phone")];
    let labels: Vec<usize> = samples.iter().flat_map(|&y| [y, y]).collect();
    let probs = acceptance_matrix(&table, &labels).unwrap();
    let n = labels.len();
    let mut counts = Array2::<u64>::zeros((n, n));
    let cfg = SamplerConfig { seed, resample_every_step: true };
    for step in 0..draws {
        let mask = draw_mask(&probs, &cfg, step).unwrap();
        for i in 0..n {
            for k in mask.selected(i) {
                counts[[i, k]] += 1;
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut same_class = 0;
    for i in 0..n {
        for k in 0..n {
            let p = probs[[i, k]];
            let c = counts[[i, k]];
            if i != k && labels[i] == labels[k] {
                same_class += c;
            }
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            let rate = c as f64 / draws as f64;
            let z = if sd == 0.0 {
                if rate == p { 0.0 } else { f64::INFINITY }
            } else {
                (rate - p).abs() / sd
            };
            worst = worst.max(z);
        }
    }
    MarginalReport { worst_sigma: worst, same_class_accepted: same_class, entries: n * n }
}

/// `filter_concepts` and `select_realms` against the brute-force oracles, and realm
/// selection against shuffled candidate order, on `trials` random taxonomies.
pub fn curation_oracle(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = rng(seed);
    for t in 0..trials {
        let n = rng.random_range(20..=60);
        let tax = random_taxonomy(&mut rng, n, 0.15);
        let dag = TaxonomyDag::new(tax.nodes.clone(), &tax.edges).map_err(|e| format!("trial {t}: {e}"))?;
        let min_images = 200;
        let got = filter_concepts(&dag, min_images);
        let (valid, rejected) = brute_filter(&tax, min_images);
        if got.valid != valid || got.rejected != rejected {
            return Err(format!("trial {t}: filter_concepts disagrees with oracle"));
        }
        let internal: Vec<String> = tax.edges.iter().map(|(p, _)| p.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let k = rng.random_range(1..=internal.len().min(8));
        let mut candidates: Vec<String> = internal.choose_multiple(&mut rng, k).cloned().collect();
        if rng.random_bool(0.3) {
            candidates.push(tax.nodes[rng.random_range(0..n)].id.clone());
        }
        let excluded: Vec<String> = candidates.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
        let min_classes = rng.random_range(1..=5);
        let realms = select_realms(&dag, &got.valid, &candidates, &excluded, min_classes).map_err(|e| e.to_string())?;
        let got_triples: Vec<_> = realms
            .iter()
            .map(|r| (r.root_concept.clone(), r.valid_classes.clone(), r.status))
            .collect();
        if got_triples != brute_realms(&tax, &got.valid, &candidates, &excluded, min_classes) {
            return Err(format!("trial {t}: select_realms disagrees with oracle"));
        }
        candidates.shuffle(&mut rng);
        if select_realms(&dag, &got.valid, &candidates, &excluded, min_classes).map_err(|e| e.to_string())? != realms {
            return Err(format!("trial {t}: select_realms depends on candidate order"));
        }
    }
    Ok(())
}

pub struct DedupCheck {
    pub planted: usize,
    pub planted_removed: usize,
    pub false_removals: usize,
    pub warnings: usize,
}

/// Planted-duplicate corpus: 100 candidates, 7 byte-identical copies of references.
pub fn planted_dedup(seed: u64) -> DedupCheck {
    use reco_core::dedup::{dedup, read_manifest_file, DedupConfig};
    let dir = tempfile::tempdir().unwrap();
    let (cm, rm, planted) = planted_corpus(dir.path(), seed, 100, 20, 7);
    let cands = read_manifest_file(&cm).unwrap();
    let refs = read_manifest_file(&rm).unwrap();
    let out = dedup(&cands, &[refs], &DedupConfig::default());
    let removed: BTreeSet<String> = out.removed.iter().map(|r| r.id.clone()).collect();
    DedupCheck {
        planted: planted.len(),
        planted_removed: removed.intersection(&planted).count(),
        false_removals: removed.difference(&planted).count(),
        warnings: out.warnings.len(),
    }
}

/// Gaussian blobs with well separated means.
pub fn separable_blobs(rng: &mut ChaCha8Rng, classes: usize, per_class: usize, dim: usize) -> (Array2<f64>, Vec<usize>) {
    let means: Vec<Array1<f64>> = (0..classes)
        .map(|c| Array1::from_shape_fn(dim, |d| if d == c % dim { 12.0 * (1 + c / dim) as f64 } else { 0.0 }))
        .collect();
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i / per_class).collect();
    let x = Array2::from_shape_fn((labels.len(), dim), |(r, d)| {
        means[labels[r]][d] + rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    (x, labels)
}

/// Test top-1 of a probe on separable blobs.
pub fn separable_probe_accuracy(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (xtr, ytr) = separable_blobs(&mut rng, 3, 100, 4);
    let (xte, yte) = separable_blobs(&mut rng, 3, 100, 4);
    let fit = fit_linear_probe(&xtr, &ytr, &ProbeConfig::default()).unwrap();
    evaluate(&fit.probe, &xte, &yte).unwrap().top1
}

pub fn read_fixture_results(name: &str) -> Vec<ProbeResult> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    reco_core::probe::read_results_csv(std::fs::File::open(path).unwrap()).unwrap()
}

pub fn read_fixture_deltas(name: &str) -> Vec<(String, String)> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| { let r = r.unwrap(); (r[0].to_string(), r[1].to_string()) }).collect()
}

/// Deltas recomputed from the stored accuracy pairs, formatted at the fixtures'
/// one-decimal precision, against the stored difference files. Returns mismatches.
pub fn fixture_arithmetic() -> Vec<String> {
    let base = read_fixture_results("rn50.csv");
    let mut bad = Vec::new();
    for cand in ["dino", "reco_rn50"] {
        let report = relative_report(&read_fixture_results(&format!("{cand}.csv")), &base).unwrap();
        let expect = read_fixture_deltas(&format!("{cand}_vs_rn50_deltas.csv"));
        let got: Vec<(String, String)> = report.deltas.iter().map(|(r, d)| (r.clone(), format!("{d:.1}"))).collect();
        if got != expect {
            bad.push(format!("{cand}: {got:?} vs {expect:?}"));
        }
    }
    bad
}
