//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reco_core::taxonomy::{ConceptFlags, ConceptNode, FilterRule, RealmStatus};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = x.clone();
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Rows drawn from a standard normal, then scaled to unit length.
pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut z = Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    z
}

/// A random single-rooted DAG: node `i > 0` gets a parent among `0..i` plus, with
/// probability `extra`, a second distinct parent.
pub struct RandomTaxonomy {
    pub nodes: Vec<ConceptNode>,
    pub edges: Vec<(String, String)>,
}

pub fn random_taxonomy(rng: &mut ChaCha8Rng, n: usize, extra: f64) -> RandomTaxonomy {
    let id = |i: usize| format!("n{i:02}");
    let mut edges = Vec::new();
    for i in 1..n {
        let p = rng.random_range(0..i);
        edges.push((id(p), id(i)));
        if i > 1 && rng.random_bool(extra) {
            let q = rng.random_range(0..i);
            if q != p {
                edges.push((id(q), id(i)));
            }
        }
    }
    let nodes = (0..n)
        .map(|i| ConceptNode {
            id: id(i),
            name: id(i),
            is_class: true,
            image_count: rng.random_range(0..400),
            flags: ConceptFlags {
                offensive: rng.random_bool(0.1),
                non_visual: rng.random_bool(0.1),
            },
        })
        .collect();
    RandomTaxonomy { nodes, edges }
}

/// All-pairs undirected hop counts by Floyd–Warshall over the raw edge list.
pub fn floyd_warshall(n: usize, index: impl Fn(&str) -> usize, edges: &[(String, String)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for (p, c) in edges {
        let (a, b) = (index(p), index(c));
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Reflexive transitive closure of the parent→child relation: `reach[a][b]` iff `b` is
/// in the sub-tree of `a`.
pub fn descendant_closure(n: usize, index: impl Fn(&str) -> usize, edges: &[(String, String)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for (p, c) in edges {
        reach[index(p)][index(c)] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Concept filtering applied rule by rule, straight from the rule list.
pub fn brute_filter(tax: &RandomTaxonomy, min_images: u64) -> (Vec<String>, Vec<(String, FilterRule)>) {
    let parents: BTreeSet<&str> = tax.edges.iter().map(|(p, _)| p.as_str()).collect();
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for node in &tax.nodes {
        let rule = if node.flags.offensive {
            Some(FilterRule::Offensive)
        } else if node.flags.non_visual {
            Some(FilterRule::NonVisual)
        } else if parents.contains(node.id.as_str()) {
            Some(FilterRule::NotLeaf)
        } else if node.image_count < min_images {
            Some(FilterRule::TooFewImages)
        } else {
            None
        };
        match rule {
            Some(r) => rejected.push((node.id.clone(), r)),
            None => valid.push(node.id.clone()),
        }
    }
    (valid, rejected)
}

/// Realm selection by exhaustive set comparisons over the candidate list.
pub fn brute_realms(
    tax: &RandomTaxonomy,
    valid: &[String],
    candidates: &[String],
    excluded: &[String],
    min_classes: usize,
) -> Vec<(String, Vec<String>, RealmStatus)> {
    let ids: Vec<&str> = tax.nodes.iter().map(|n| n.id.as_str()).collect();
    let index = |s: &str| ids.iter().position(|&x| x == s).unwrap();
    let reach = descendant_closure(ids.len(), index, &tax.edges);
    let subtree = |c: &str| -> BTreeSet<usize> { (0..ids.len()).filter(|&j| reach[index(c)][j]).collect() };
    let cands: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    let valid_in = |c: &str| -> Vec<String> {
        let s = subtree(c);
        let mut v: Vec<String> = valid.iter().filter(|id| s.contains(&index(id))).cloned().collect();
        v.sort();
        v
    };
    let survives_size = |c: &str| valid_in(c).len() >= min_classes;
    cands
        .iter()
        .map(|&c| {
            let status = if !survives_size(c) {
                RealmStatus::RejectedTooSmall
            } else if cands
                .iter()
                .any(|&o| o != c && survives_size(o) && subtree(c).is_subset(&subtree(o)))
            {
                RealmStatus::RejectedCovered
            } else if excluded.iter().any(|e| e == c) {
                RealmStatus::RejectedExcluded
            } else {
                RealmStatus::Selected
            };
            (c.to_string(), valid_in(c), status)
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < order.len() {
            let mut e = s;
            while e + 1 < order.len() && v[order[e + 1]] == v[order[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &k in &order[s..=e] {
                r[k] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// A smooth random 24×24 RGB picture: a few random gradients plus per-pixel texture.
pub fn random_picture(rng: &mut ChaCha8Rng) -> RgbImage {
    let coef: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    RgbImage::from_fn(24, 24, |x, y| {
        let (u, v) = (x as f64 / 23.0, y as f64 / 23.0);
        let ch = |c: usize| {
            let s = 0.5 + 0.25 * (coef[3 * c] * u + coef[3 * c + 1] * v + coef[3 * c + 2] * (6.0 * u * v).sin());
            (s.clamp(0.0, 1.0) * 255.0) as u8
        };
        let noise = rng.random_range(0..24u8);
        Rgb([ch(0).saturating_add(noise), ch(1).saturating_add(noise), ch(2).saturating_add(noise)])
    })
}

/// A corpus of `n_candidates` PNGs of which `planted` are byte-identical copies of
/// reference images. Returns `(candidate manifest, reference manifest, planted ids)` as
/// CSV paths plus the planted candidate ids.
pub fn planted_corpus(dir: &Path, seed: u64, n_candidates: usize, n_references: usize, planted: usize) -> (std::path::PathBuf, std::path::PathBuf, BTreeSet<String>) {
    let mut rng = rng(seed);
    let refs_dir = dir.join("refs");
    let cand_dir = dir.join("cands");
    std::fs::create_dir_all(&refs_dir).unwrap();
    std::fs::create_dir_all(&cand_dir).unwrap();
    let mut ref_manifest = String::from("id,path\n");
    for r in 0..n_references {
        let path = refs_dir.join(format!("r{r:03}.png"));
        random_picture(&mut rng).save(&path).unwrap();
        ref_manifest += &format!("r{r:03},refs/r{r:03}.png\n");
    }
    let mut slots: Vec<usize> = (0..n_candidates).collect();
    let mut chosen = BTreeSet::new();
    while chosen.len() < planted {
        let k = rng.random_range(0..slots.len());
        chosen.insert(slots.swap_remove(k));
    }
    let mut cand_manifest = String::from("id,path\n");
    let mut planted_ids = BTreeSet::new();
    for c in 0..n_candidates {
        let path = cand_dir.join(format!("c{c:03}.png"));
        if chosen.contains(&c) {
            let r = rng.random_range(0..n_references);
            std::fs::copy(refs_dir.join(format!("r{r:03}.png")), &path).unwrap();
            planted_ids.insert(format!("c{c:03}"));
        } else {
            random_picture(&mut rng).save(&path).unwrap();
        }
        cand_manifest += &format!("c{c:03},cands/c{c:03}.png\n");
    }
    let cm = dir.join("candidates.csv");
    let rm = dir.join("references.csv");
    std::fs::write(&cm, cand_manifest).unwrap();
    std::fs::write(&rm, ref_manifest).unwrap();
    (cm, rm, planted_ids)
}
