use std::collections::BTreeMap;

use serde_json::{json, Value};
use sorl_core::clustering::{self, Partition};
use sorl_core::export::{fmt_f64, matrix_csv, table_csv, vector_csv};
use sorl_core::linalg::Spectrum;
use sorl_core::perturbation::{self as pert, PerturbationSetup};
use sorl_core::sorl::{self, FeatureMap};
use sorl_core::spectral::{self, Fit, SpectralDecomposition};
use sorl_core::toy::{self, ToyRegime};
use sorl_core::{AdjacencyBundle, AugmentationWorld, DMatrix, RowPolicy, SpectralEmbedding};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, CliResult};
use crate::output::Output;

fn spectrum_json(values: &[f64], dec: Option<&SpectralDecomposition>) -> Value {
    json!({
        "values": values,
        "k": dec.map(|d| d.k),
        "gap_ratio": dec.map(|d| d.gap.ratio),
        "gap_absolute": dec.map(|d| d.gap.absolute),
    })
}

/// L_mf(diag(√w) f) − L_SORL(f) against ‖Ã‖_F², or the reason it was skipped.
fn offset_check(factor: &DMatrix<f64>, world: &AugmentationWorld, bundle: &AdjacencyBundle) -> CliResult<Value> {
    if world.row_policy() == RowPolicy::Relaxed {
        return Ok(json!({ "skipped": "augmentation rows are not distributions" }));
    }
    let f = FeatureMap::from_factor(factor, bundle)?;
    let offset = sorl::offset(&f, world, bundle)?;
    let constant = sorl::offset_constant(bundle);
    Ok(json!({
        "offset": offset,
        "constant": constant.normalized_frobenius,
        "weighted_sum": constant.weighted_sum,
        "difference": offset - constant.normalized_frobenius,
    }))
}

fn trace_csv(fit: &Fit) -> String {
    let rows: Vec<Vec<String>> = fit
        .trace
        .iter()
        .map(|t| vec![t.iteration.to_string(), fmt_f64(t.loss), fmt_f64(t.grad_norm)])
        .collect();
    table_csv(&["iteration", "loss", "grad_norm"], &rows)
}

fn finish(out: &Output, mut summary: Value) -> Value {
    summary["files"] = json!(out.files());
    summary
}

pub fn graph(cfg: &ExperimentConfig) -> CliResult<Value> {
    let world = cfg.world()?;
    let bundle = cfg.bundle(&world)?;
    let spec = Spectrum::of(bundle.a_norm());
    let dec = match cfg.k {
        Some(k) => Some(spectral::topk_decompose(&bundle, k)?),
        None => None,
    };
    let mut out = Output::new(cfg.out.clone())?;
    out.text("adjacency_unlabeled.csv", &matrix_csv(bundle.a_u()))?;
    out.text("adjacency.csv", &matrix_csv(bundle.a()))?;
    out.text("adjacency_normalized.csv", &matrix_csv(bundle.a_norm()))?;
    out.text("degrees.csv", &vector_csv(bundle.degrees()))?;
    if !bundle.label_vectors().is_empty() {
        let l = DMatrix::from_columns(bundle.label_vectors());
        out.text("label_vectors.csv", &matrix_csv(&l))?;
    }
    let values: Vec<f64> = spec.values.iter().copied().collect();
    out.json("spectrum.json", &spectrum_json(&values, dec.as_ref()))?;
    Ok(finish(
        &out,
        json!({
            "command": "graph",
            "n": bundle.n(),
            "eta_u": bundle.eta_u(),
            "eta_l": bundle.eta_l(),
            "labeled_classes": world.labeled_classes(),
            "leading_eigenvalues": &values[..values.len().min(6)],
        }),
    ))
}

pub fn embed(cfg: &ExperimentConfig) -> CliResult<Value> {
    let world = cfg.world()?;
    let bundle = cfg.bundle(&world)?;
    let emb = SpectralEmbedding::compute(&bundle, cfg.k()?)?;
    let check = offset_check(&emb.factor(bundle.degrees()), &world, &bundle)?;
    let mut out = Output::new(cfg.out.clone())?;
    out.text("embedding.csv", &matrix_csv(&emb.z))?;
    let values: Vec<f64> = emb.decomposition.all_values().iter().copied().collect();
    out.json("spectrum.json", &spectrum_json(&values, Some(&emb.decomposition)))?;
    Ok(finish(
        &out,
        json!({
            "command": "embed",
            "k": emb.k(),
            "retained": emb.decomposition.values.as_slice(),
            "gap_ratio": emb.decomposition.gap.ratio,
            "offset_check": check,
        }),
    ))
}

pub fn train(cfg: &ExperimentConfig) -> CliResult<Value> {
    let world = cfg.world()?;
    let bundle = cfg.bundle(&world)?;
    let k = cfg.k()?;
    let opt = cfg.optimizer();
    let mut out = Output::new(cfg.out.clone())?;
    let (factor, fit) = match cfg.method {
        Method::Lowrank => {
            let fit = spectral::minimize_lowrank(&bundle, k, &opt)?;
            (fit.matrix.clone(), fit)
        }
        Method::Sorl => {
            let (f, fit) = sorl::train_sorl(&world, &bundle, k, &opt)?;
            out.text("features_raw.csv", &matrix_csv(&f.values))?;
            (f.scaled(&bundle), fit)
        }
    };
    // the target is only well defined when the gap at k is not degenerate
    let recovery = spectral::topk_decompose(&bundle, k)
        .ok()
        .map(|d| (&factor * factor.transpose() - d.truncation()).norm());
    let check = offset_check(&factor, &world, &bundle)?;
    out.text("features.csv", &matrix_csv(&factor))?;
    out.text("trace.csv", &trace_csv(&fit))?;
    Ok(finish(
        &out,
        json!({
            "command": "train",
            "method": cfg.method,
            "k": k,
            "seed": opt.seed,
            "iterations": fit.iterations,
            "loss": fit.loss,
            "grad_norm": fit.grad_norm,
            "recovery_error": recovery,
            "offset_check": check,
        }),
    ))
}

fn truth(world: &AugmentationWorld) -> CliResult<Vec<usize>> {
    world
        .vertex_classes()
        .ok_or_else(|| CliError::Config("ground-truth vertex classes need M = N".into()))
}

/// Vertices carrying labeled mass, grouped by class. Vertices are natural samples here.
fn labeled_vertices(world: &AugmentationWorld) -> BTreeMap<usize, Vec<usize>> {
    world
        .labeled_classes()
        .into_iter()
        .filter_map(|c| {
            let pl = world.labeled_distribution(c)?;
            let idx: Vec<usize> = (0..pl.len()).filter(|&i| pl[i] > 0.0).collect();
            Some((c, idx))
        })
        .collect()
}

pub fn eval(cfg: &ExperimentConfig) -> CliResult<Value> {
    let world = cfg.world()?;
    let truth = truth(&world)?;
    let bundle = cfg.bundle(&world)?;
    let emb = SpectralEmbedding::compute(&bundle, cfg.k()?)?;
    let partition = Partition::from_labels(&truth)?;
    let kms = clustering::kmeans_measure(&partition, &emb.z)?;
    let scores = clustering::cluster_scores(&partition, &emb.z)?;
    let c_total = cfg.clusters.unwrap_or(partition.class_count());
    let res = clustering::seeded_kmeans(&emb.z, &labeled_vertices(&world), c_total, &cfg.kmeans(), cfg.execution())?;
    let acc = clustering::accuracy_report(&res.assignment, &truth, &res.known_classes, None)?;
    let report = json!({
        "intra": scores.intra,
        "inter": scores.inter,
        "kms": kms,
        "error_ratio": scores.error_ratio,
        "accuracy_all": acc.accuracy_all,
        "accuracy_known": acc.accuracy_known,
        "accuracy_novel": acc.accuracy_novel,
        "accuracy_known_pinned": acc.accuracy_known_pinned,
        "accuracy_novel_separate": acc.accuracy_novel_separate,
        "clusters": c_total,
        "known_classes": res.known_classes,
        "inertia": res.inertia,
        "seed": res.seed,
    });
    let mut out = Output::new(cfg.out.clone())?;
    let rows: Vec<Vec<String>> = (0..truth.len())
        .map(|i| vec![i.to_string(), res.assignment[i].to_string(), truth[i].to_string()])
        .collect();
    out.text("assignments.csv", &table_csv(&["index", "predicted", "truth"], &rows))?;
    out.json("scores.json", &report)?;
    let mut summary = report;
    summary["command"] = json!("eval");
    Ok(finish(&out, summary))
}

pub fn perturb(cfg: &ExperimentConfig) -> CliResult<Value> {
    let world = cfg.world()?;
    let truth = truth(&world)?;
    let bundle = cfg.bundle(&world)?;
    let partition = Partition::from_labels(&truth)?;
    let setup = PerturbationSetup::from_bundle(&bundle, cfg.k()?, partition)?;
    let exec = cfg.execution();
    let rows = pert::sweep(&setup, &cfg.deltas, exec)?;
    let derivative = pert::projector_derivative(&setup)?;
    let h = cfg.fd_step;
    let fd = (setup.kms_at(h)? - setup.kms_at(-h)?) / (2.0 * h);
    let literal = match pert::analytic_derivative(&setup) {
        Ok(parts) => json!(parts),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let classes = pert::class_terms(&setup);
    let class_ids = setup.partition().class_ids().to_vec();
    let assumptions = pert::check_assumptions(&setup, &cfg.assumptions);
    let bounds: Vec<Value> = if assumptions.all_ok() {
        let positive: Vec<f64> = cfg.deltas.iter().copied().filter(|&d| d > 0.0).collect();
        exec.map(&positive, |&d| pert::classwise_bound(&setup, d, &cfg.assumptions))
            .into_iter()
            .map(|r| r.map(|r| json!(r)))
            .collect::<sorl_core::Result<_>>()?
    } else {
        Vec::new()
    };
    let leading = pert::leading_term(&setup, 1.0)?;

    let mut out = Output::new(cfg.out.clone())?;
    let mut header: Vec<String> =
        ["delta", "m_kms", "delta_kms", "leading_term", "analytic_derivative"].map(String::from).to_vec();
    header.extend(class_ids.iter().map(|c| format!("delta_class_{c}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                fmt_f64(r.delta),
                fmt_f64(r.m_kms),
                fmt_f64(r.delta_kms),
                fmt_f64(r.leading_term),
                fmt_f64(r.analytic_derivative),
            ];
            v.extend(r.class_deltas.iter().map(|&x| fmt_f64(x)));
            v
        })
        .collect();
    out.text("sweep.csv", &table_csv(&header_refs, &table))?;
    let class_rows: Vec<Vec<String>> = classes
        .iter()
        .map(|c| {
            vec![
                class_ids[c.class_index].to_string(),
                c.size.to_string(),
                fmt_f64(c.connection),
                fmt_f64(c.intra_similarity),
                fmt_f64(c.inter_similarity),
                fmt_f64(c.delta_c),
            ]
        })
        .collect();
    out.text(
        "classwise.csv",
        &table_csv(&["class", "size", "connection", "intra_similarity", "inter_similarity", "delta_c"], &class_rows),
    )?;
    let meta = json!({
        "n": setup.n(),
        "k": setup.k(),
        "scale": setup.scale(),
        "eta1": setup.eta1(),
        "eta2": setup.eta2(),
        "base_kms": setup.base_kms(),
        "gap_ratio": setup.gap_ratio(),
        "upsilon_sign_pattern": setup.upsilon_sign_pattern(),
        "derivative": {
            "projector": derivative,
            "literal": literal,
            "finite_difference": fd,
            "fd_step": h,
            "relative_error": (derivative - fd).abs() / fd.abs().max(f64::MIN_POSITIVE),
        },
        "eigenvalue_derivatives": pert::eigenvalue_derivatives(&setup).as_slice(),
        "leading_term_per_delta": leading.value,
        "leading_discrepancy": leading.discrepancy,
        "assumptions": assumptions,
        "classwise_bounds": bounds,
    });
    out.json("perturb.json", &meta)?;
    Ok(finish(
        &out,
        json!({
            "command": "perturb",
            "k": setup.k(),
            "derivative": derivative,
            "finite_difference": fd,
            "leading_discrepancy": leading.discrepancy,
            "assumptions_ok": assumptions.all_ok(),
            "delta_kms": rows.iter().map(|r| [r.delta, r.delta_kms]).collect::<Vec<_>>(),
        }),
    ))
}

pub fn toy_verify(cfg: &ExperimentConfig) -> CliResult<Value> {
    let c = cfg.bound_constant;
    let mut rows = Vec::new();
    let mut regimes = serde_json::Map::new();
    let mut all_hold = true;
    for (name, regime) in [("labeled", ToyRegime::Labeled), ("unlabeled", ToyRegime::Unlabeled)] {
        let samples = toy::regime_samples(regime, cfg.samples, cfg.seed);
        let checks = cfg
            .execution()
            .map(&samples, |p| toy::check_bounds(p, regime, c))
            .into_iter()
            .collect::<sorl_core::Result<Vec<_>>>()?;
        let count = |f: &dyn Fn(&toy::BoundCheck) -> bool| checks.iter().filter(|b| f(b)).count();
        let (mut eig_c, mut sin_c) = (0.0_f64, 0.0_f64);
        for b in &checks {
            let (e, s) = b.observed_constants(c);
            eig_c = eig_c.max(e);
            sin_c = sin_c.max(s);
            let flag = |v: bool| v.to_string();
            rows.push(vec![
                name.to_string(),
                fmt_f64(b.tau1),
                fmt_f64(b.tau_c),
                fmt_f64(b.tau_s),
                fmt_f64(b.numeric[2]),
                fmt_f64(b.closed_form[2]),
                fmt_f64(b.eigen_deviation.iter().copied().fold(0.0, f64::max)),
                fmt_f64(b.eigen_bound),
                fmt_f64(b.sin_distance),
                fmt_f64(b.sin_bound),
                flag(b.eigen_ok),
                flag(b.sin_ok),
                b.ordering_ok.map_or("".into(), flag),
            ]);
        }
        let holds = count(&|b| b.holds());
        all_hold &= holds == checks.len();
        regimes.insert(
            name.into(),
            json!({
                "count": checks.len(),
                "eigen_ok": count(&|b| b.eigen_ok),
                "sin_ok": count(&|b| b.sin_ok),
                "ordering_ok": count(&|b| b.ordering_ok.unwrap_or(true)),
                "holds": holds,
                "max_eigen_constant": eig_c,
                "max_sin_constant": sin_c,
            }),
        );
    }
    let mut out = Output::new(cfg.out.clone())?;
    out.text(
        "toy_bounds.csv",
        &table_csv(
            &[
                "regime", "tau1", "tau_c", "tau_s", "lambda3", "lambda3_closed", "max_deviation", "eigen_bound",
                "sin_distance", "sin_bound", "eigen_ok", "sin_ok", "ordering_ok",
            ],
            &rows,
        ),
    )?;
    let report = json!({ "constant": c, "seed": cfg.seed, "regimes": regimes, "all_hold": all_hold });
    out.json("toy_verify.json", &report)?;
    let mut summary = report;
    summary["command"] = json!("toy-verify");
    Ok(finish(&out, summary))
}
