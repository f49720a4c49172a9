use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::Array2;
use reco_core::dedup::{dedup, read_manifest_file, write_hashes_csv, ManifestEntry};
use reco_core::probe::{
    evaluate, fit_linear_probe, read_results_csv, relative_report, report_svg, write_report_csv, write_results_csv,
    ProbeResult,
};
use reco_core::synth::{generate, Split, SynthDataset};
use reco_core::taxonomy::{filter_concepts, select_realms, SimilarityTable, TaxonomyDag};
use reco_core::trainer::{train as run_training, write_history_csv, Encoder, TrainConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::{CliError, TaxonomyInput};

fn load_taxonomy(input: &TaxonomyInput) -> Result<TaxonomyDag, CliError> {
    Ok(match &input.nodes {
        Some(nodes) => TaxonomyDag::load(&input.edges, nodes)?,
        None => TaxonomyDag::load_edges(&input.edges)?,
    })
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> reco_core::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| reco_core::Error::Csv(e.into_error().into()))
}

pub fn taxonomy_validate(input: &TaxonomyInput) -> Result<(), CliError> {
    let dag = load_taxonomy(input)?;
    let max_depth = (0..dag.len()).map(|i| dag.depth(i)).max().unwrap_or(0);
    println!(
        "ok: {} nodes, {} edges, {} leaf classes, max depth {max_depth}, root `{}`",
        dag.len(),
        dag.edges().count(),
        dag.leaf_classes().len(),
        dag.node(dag.root()).id
    );
    Ok(())
}

pub fn taxonomy_similarity(
    cfg: &RunConfig,
    input: &TaxonomyInput,
    classes: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let dag = load_taxonomy(input)?;
    let table = if classes.is_empty() {
        SimilarityTable::<f64>::for_leaf_classes(&dag, &cfg.similarity)?
    } else {
        SimilarityTable::<f64>::build(&dag, classes, &cfg.similarity)?
    };
    let out = OutDir::create(out, cfg)?;
    out.write_with("raw.csv", |b| table.write_raw_csv(b))?;
    out.write_with("normalized.csv", |b| table.write_normalized_csv(b))?;
    Ok(())
}

pub fn curate_filter(cfg: &RunConfig, edges: &Path, nodes: &Path, out: &Path) -> Result<(), CliError> {
    let dag = TaxonomyDag::load(edges, nodes)?;
    let outcome = filter_concepts(&dag, cfg.curate.min_images);
    let out = OutDir::create(out, cfg)?;
    let valid = std::iter::once(vec!["id".to_string()]).chain(outcome.valid.iter().map(|id| vec![id.clone()]));
    out.write("valid.csv", &csv_bytes(valid)?)?;
    let rejected = std::iter::once(vec!["id".into(), "rule".into(), "reason".into()]).chain(
        outcome
            .rejected
            .iter()
            .map(|(id, rule)| vec![id.clone(), rule.code().to_string(), rule.describe().to_string()]),
    );
    out.write("rejected.csv", &csv_bytes(rejected)?)?;
    println!("{} valid, {} rejected", outcome.valid.len(), outcome.rejected.len());
    Ok(())
}

pub fn curate_realms(
    cfg: &RunConfig,
    edges: &Path,
    nodes: &Path,
    candidates: &[String],
    excluded: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let dag = TaxonomyDag::load(edges, nodes)?;
    let valid = filter_concepts(&dag, cfg.curate.min_images).valid;
    let realms = select_realms(&dag, &valid, candidates, excluded, cfg.curate.min_classes)?;
    let out = OutDir::create(out, cfg)?;
    let header = ["root_concept", "status", "n_valid", "valid_classes"].map(String::from).to_vec();
    let rows = std::iter::once(header).chain(realms.iter().map(|r| {
        vec![
            r.root_concept.clone(),
            r.status.as_str().to_string(),
            r.valid_classes.len().to_string(),
            r.valid_classes.join(" "),
        ]
    }));
    out.write("realms.csv", &csv_bytes(rows)?)?;
    Ok(())
}

pub fn curate_dedup(cfg: &RunConfig, candidates: &Path, references: &[std::path::PathBuf], out: &Path) -> Result<(), CliError> {
    let cands = read_manifest_file(candidates)?;
    let refs: Vec<Vec<ManifestEntry>> = references.iter().map(read_manifest_file).collect::<Result<_, _>>()?;
    let outcome = dedup(&cands, &refs, &cfg.curate.dedup);
    let out = OutDir::create(out, cfg)?;
    let kept = std::iter::once(vec!["id".to_string()]).chain(outcome.kept.iter().map(|id| vec![id.clone()]));
    out.write("kept.csv", &csv_bytes(kept)?)?;
    let header = ["id", "matched_reference", "distance"].map(String::from).to_vec();
    let removed = std::iter::once(header).chain(
        outcome
            .removed
            .iter()
            .map(|r| vec![r.id.clone(), r.matched_reference.clone(), r.distance.to_string()]),
    );
    out.write("removed.csv", &csv_bytes(removed)?)?;
    out.write_with("hashes.csv", |b| write_hashes_csv(&outcome.candidate_hashes, b))?;
    let mut warnings = String::new();
    for w in &outcome.warnings {
        let _ = writeln!(warnings, "{w}");
        eprintln!("warning: {w}");
    }
    out.write("warnings.txt", warnings.as_bytes())?;
    println!(
        "{} kept, {} removed, {} unreadable",
        outcome.kept.len(),
        outcome.removed.len(),
        outcome.warnings.len()
    );
    Ok(())
}

pub fn synth_generate(cfg: &RunConfig, input: &TaxonomyInput, out: &Path) -> Result<(), CliError> {
    let dag = load_taxonomy(input)?;
    let ds = generate::<f64>(&dag, &cfg.synth)?;
    let out = OutDir::create(out, cfg)?;
    out.write_with("dataset.csv", |b| ds.write_csv(b))?;
    Ok(())
}

fn read_dataset(cfg: &RunConfig, path: &Path) -> Result<SynthDataset<f64>, CliError> {
    Ok(SynthDataset::<f64>::read_csv_file(path, cfg.synth.noise_scale)?)
}

/// Sidecar describing `checkpoint.bin`.
#[derive(Serialize)]
struct CheckpointManifest<'a> {
    format: &'static str,
    scalar: &'static str,
    input_dim: usize,
    hidden_dim: usize,
    embedding_dim: usize,
    layout: &'static str,
    final_epoch_loss: f64,
    train: &'a TrainConfig,
}

pub fn train(cfg: &RunConfig, input: &TaxonomyInput, dataset: &Path, out: &Path) -> Result<(), CliError> {
    let dag = load_taxonomy(input)?;
    let ds = read_dataset(cfg, dataset)?;
    let outcome = run_training(&ds, &dag, &cfg.train)?;
    let out = OutDir::create(out, cfg)?;
    out.write_with("checkpoint.bin", |b| outcome.encoder.write_checkpoint(b))?;
    let (input_dim, hidden_dim, embedding_dim) = outcome.encoder.dims();
    let manifest = CheckpointManifest {
        format: "RCL1",
        scalar: "f64",
        input_dim,
        hidden_dim,
        embedding_dim,
        layout: "magic, u32 layer-dim count, u32 dims (input, hidden, output), then little-endian f64 W1, b1, W2, b2 row-major",
        final_epoch_loss: outcome.history.last().copied().unwrap_or(f64::NAN),
        train: &cfg.train,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    out.write("checkpoint.toml", text.as_bytes())?;
    out.write_with("loss_history.csv", |b| write_history_csv(&outcome.history, b))?;
    println!(
        "trained {} epochs: first {:.6}, last {:.6}",
        outcome.history.len(),
        outcome.history.first().copied().unwrap_or(f64::NAN),
        outcome.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn probe(cfg: &RunConfig, dataset: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let ds = read_dataset(cfg, dataset)?;
    let features: Array2<f64> = match checkpoint {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            Encoder::<f64>::read_checkpoint(BufReader::new(file))?.embed(&ds.features)?
        }
        None => ds.features.clone(),
    };
    let mut results = Vec::new();
    for realm in ds.realm_ids() {
        let in_realm = |split: Split| -> Vec<usize> {
            ds.indices(split).into_iter().filter(|&i| ds.realms[i] == realm).collect()
        };
        let (train_idx, test_idx) = (in_realm(Split::Train), in_realm(Split::Test));
        let classes: Vec<usize> = train_idx.iter().map(|&i| ds.labels[i]).collect::<BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            eprintln!("warning: realm `{realm}` has {} class(es); a probe needs two, skipped", classes.len());
            continue;
        }
        let local = |i: &usize| classes.binary_search(&ds.labels[*i]).map_err(|_| {
            reco_core::Error::UnknownLabel(ds.labels[*i])
        });
        let ytr: Vec<usize> = train_idx.iter().map(local).collect::<Result<_, _>>()?;
        let yte: Vec<usize> = test_idx.iter().map(local).collect::<Result<_, _>>()?;
        let xtr = features.select(ndarray::Axis(0), &train_idx);
        let xte = features.select(ndarray::Axis(0), &test_idx);
        let fit = fit_linear_probe(&xtr, &ytr, &cfg.probe)?;
        if fit.degenerate {
            eprintln!("warning: realm `{realm}`: features are identical across classes; probe is uninformative");
        }
        if !fit.converged {
            eprintln!(
                "warning: realm `{realm}`: probe stopped after {} iterations with gradient norm {:e}",
                fit.iterations, fit.grad_norm
            );
        }
        let mut r: ProbeResult = evaluate(&fit.probe, &xte, &yte)?;
        r.realm = realm.clone();
        println!("{realm}: top-1 {:.4} ({}/{})", r.top1, r.correct, r.n_test);
        results.push(r);
    }
    let out = OutDir::create(out, cfg)?;
    out.write_with("results.csv", |b| write_results_csv(&results, b))?;
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<ProbeResult>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_results_csv(BufReader::new(file)).map_err(|e| match e {
        reco_core::Error::Parse { line, message, .. } => {
            reco_core::Error::Parse { path: path.to_path_buf(), line, message }.into()
        }
        other => other.into(),
    })
}

pub fn report(cfg: &RunConfig, candidate: &Path, baseline: &Path, out: &Path) -> Result<(), CliError> {
    let rep = relative_report(&read_results(candidate)?, &read_results(baseline)?)?;
    let out = OutDir::create(out, cfg)?;
    out.write_with("deltas.csv", |b| write_report_csv(&rep, b))?;
    out.write("deltas.svg", report_svg(&rep).as_bytes())?;
    println!("average delta {:+.2} pp over {} realms", rep.average, rep.deltas.len());
    Ok(())
}
