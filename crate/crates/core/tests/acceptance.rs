//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion, then fails if any did.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use metaproj::backend::{fit_lda, fit_plda, PldaModel, PldaScorer};
use metaproj::evalkit::{compute_eer, format_report, ScoreSet};
use metaproj::experiment::{run_comparison, Comparison, ExperimentConfig};
use metaproj::losses::aam_loss;
use metaproj::meta::{meta_gradient, Episode, NetObjective};
use metaproj::{AamConfig, HeadKind, MetaMode};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

/// Writes straight to stdout so the lines survive the test harness capture.
fn emit(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for seed in 0..20 {
        for head in [HeadKind::SoftmaxLinear, HeadKind::Aam] {
            let (net, batch, loss) = random_problem(seed, head);
            worst = worst.max(gradient_check(&net, &batch, &loss));
            n += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("{n} nets, max rel err {worst:.2e} (< 1e-4), {secs:.2}s (< 30s)"),
    )
}

fn meta_gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for seed in 0..20 {
        for head in [HeadKind::SoftmaxLinear, HeadKind::Aam] {
            worst = worst.max(meta_gradient_check(seed, head, 0.3));
            n += 1;
        }
    }
    let mut bit_exact = true;
    for seed in 0..20 {
        let (net, local_batch, loss) = random_problem(seed, HeadKind::SoftmaxLinear);
        let mut r = rng(seed + 7);
        let ep = Episode {
            local_domain: "a".into(),
            meta_domain: "b".into(),
            local_batch,
            meta_batch: random_batch(&net, 4, &mut r),
        };
        let obj = NetObjective { loss };
        let fo = meta_gradient(&obj, &net, &ep, 0.0, MetaMode::FirstOrder).unwrap();
        let so = meta_gradient(&obj, &net, &ep, 0.0, MetaMode::SecondOrder).unwrap();
        bit_exact &= fo.grad.to_flat().iter().map(|x| x.to_bits()).eq(so
            .grad
            .to_flat()
            .iter()
            .map(|x| x.to_bits()));
    }
    check(
        worst < 1e-3 && bit_exact,
        format!("{n} instances, max rel err {worst:.2e} (< 1e-3); alpha=0 modes bit-identical: {bit_exact}"),
    )
}

/// The desk-scale configuration: synthetic defaults, 4 seen + 1 held-out
/// domain, 2000 iterations, probes every 200.
fn comparison_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    cfg.net.hidden_dims = vec![128, 128, 128];
    cfg.train.iterations = 2000;
    cfg.train.eval_every = 200;
    cfg
}

fn mean_eer(m: &std::collections::BTreeMap<String, f64>) -> f64 {
    m.values().sum::<f64>() / m.len() as f64
}

fn ordinal_reproduction(runs: &[Comparison], elapsed: Duration) -> Outcome {
    let n = runs.len() as f64;
    let raw = 100.0 * runs.iter().map(|c| mean_eer(&c.raw)).sum::<f64>() / n;
    let mct = 100.0 * runs.iter().map(|c| mean_eer(&c.mct)).sum::<f64>() / n;
    let maml = 100.0 * runs.iter().map(|c| mean_eer(&c.maml)).sum::<f64>() / n;
    let secs = elapsed.as_secs_f64();
    check(
        maml <= mct - 0.5 && mct < raw && secs < 600.0,
        format!(
            "mean EER over {} seeds: raw {raw:.2}%, mct {mct:.2}%, maml {maml:.2}% \
             (need maml <= mct - 0.5 and mct < raw); {secs:.0}s (< 600s)",
            runs.len()
        ),
    )
}

fn final_probe_check(runs: &[Comparison]) -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for c in runs {
        let mct = mean_eer(&c.mct_log.final_probe());
        let maml = mean_eer(&c.maml_log.final_probe());
        if maml <= mct {
            wins += 1;
        }
        detail.push(format!("{:.2}/{:.2}", 100.0 * maml, 100.0 * mct));
    }
    check(
        wins >= 4,
        format!(
            "maml <= mct at final probe in {wins}/{} seeds (need >= 4); maml/mct: {}",
            runs.len(),
            detail.join(" ")
        ),
    )
}

fn plda_suite() -> Outcome {
    let mut worst_drop: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let d = 2 + seed as usize % 3;
        let truth = PldaModel {
            mu: DVector::from_fn(d, |_, _| normal(&mut r)),
            b: random_spd(d, 0.3, 2.0, &mut r),
            w: random_spd(d, 0.3, 1.0, &mut r),
        };
        let ds = sample_plda(&truth, 10 + seed as usize, 2 + seed as usize % 4, &mut r);
        let (_, lls) = fit_plda(&ds, 20).map_err(|e| e.to_string())?;
        for w in lls.windows(2) {
            worst_drop = worst_drop.min(w[1] - w[0]);
        }
    }

    let mut err_1d: f64 = 0.0;
    for (mu, b, w) in [(0.0, 1.0, 1.0), (0.3, 2.0, 0.5)] {
        let m = PldaModel {
            mu: DVector::from_element(1, mu),
            b: DMatrix::from_element(1, 1, b),
            w: DMatrix::from_element(1, 1, w),
        };
        let s = PldaScorer::new(&m).map_err(|e| e.to_string())?;
        for (e, t) in [(0.0, 0.0), (1.0, -1.0), (2.0, 1.5), (-0.7, 3.0)] {
            err_1d = err_1d.max((s.score(&[e], &[t]).unwrap() - llr_1d(mu, b, w, e, t)).abs());
        }
    }

    let mut r = rng(31);
    let m2 = PldaModel {
        mu: DVector::from_fn(2, |_, _| normal(&mut r)),
        b: random_spd(2, 0.5, 2.0, &mut r),
        w: random_spd(2, 0.4, 1.5, &mut r),
    };
    let s2 = PldaScorer::new(&m2).map_err(|e| e.to_string())?;
    let mut err_2d: f64 = 0.0;
    for _ in 0..3 {
        let e: Vec<f64> = (0..2).map(|i| m2.mu[i] + normal(&mut r)).collect();
        let t: Vec<f64> = (0..2).map(|i| m2.mu[i] + normal(&mut r)).collect();
        err_2d = err_2d.max((s2.score(&e, &t).unwrap() - llr_2d_quadrature(&m2, &e, &t)).abs());
    }

    let mut r = rng(0);
    let truth = PldaModel {
        mu: DVector::from_fn(4, |_, _| normal(&mut r)),
        b: random_spd(4, 0.5, 4.0, &mut r),
        w: random_spd(4, 0.2, 1.0, &mut r),
    };
    let ds = sample_plda(&truth, 200, 10, &mut r);
    let (fit, _) = fit_plda(&ds, 50).map_err(|e| e.to_string())?;
    let (eb, ew) = (
        rel_frobenius(&fit.b, &truth.b),
        rel_frobenius(&fit.w, &truth.w),
    );

    check(
        worst_drop >= -1e-8 && err_1d < 1e-6 && err_2d < 1e-6 && eb < 0.15 && ew < 0.15,
        format!(
            "EM worst step {worst_drop:.1e} (>= -1e-8); 1-D LLR err {err_1d:.1e}, 2-D quadrature err {err_2d:.1e} (< 1e-6); \
             recovery B {:.1}%, W {:.1}% (< 15%)",
            100.0 * eb,
            100.0 * ew
        ),
    )
}

fn lda_suite() -> Outcome {
    let mut resid: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng(500 + seed);
        let d = 3 + seed as usize % 4;
        let k = 6;
        let mut vecs = Vec::new();
        let mut spk = Vec::new();
        for s in 0..k {
            let c: Vec<f64> = (0..d).map(|_| 2.0 * normal(&mut r)).collect();
            for _ in 0..5 {
                vecs.push(c.iter().map(|x| x + normal(&mut r)).collect::<Vec<f64>>());
                spk.push(s);
            }
        }
        let ds = dataset(&vecs, &spk, "d");
        let out = d.min(k - 1);
        let m = fit_lda(&ds, out).map_err(|e| e.to_string())?;
        let (sw, sb) = scatter_oracle(&vecs, &spk);
        let sw = &sw + DMatrix::identity(d, d) * (1e-6 * sw.trace() / d as f64);
        for i in 0..out {
            let vi = m.projection.row(i).transpose();
            resid = resid.max((&sb * &vi - (&sw * &vi) * m.eigenvalues[i]).norm());
            for j in 0..out {
                let g = vi.dot(&(&sw * m.projection.row(j).transpose()));
                ortho = ortho.max((g - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let mut r = rng(3);
    let mut vecs = Vec::new();
    let mut spk = Vec::new();
    for (c, x) in [(0, -1.0), (1, 1.0)] {
        for _ in 0..200 {
            vecs.push(vec![x + 0.3 * normal(&mut r), 0.3 * normal(&mut r)]);
            spk.push(c);
        }
    }
    let m = fit_lda(&dataset(&vecs, &spk, "d"), 1).map_err(|e| e.to_string())?;
    let v = m.projection.row(0);
    let cos = v[0].abs() / v.norm();
    check(
        resid < 1e-8 && ortho < 1e-8 && cos > 0.99,
        format!("eigen residual {resid:.1e}, S_w-orthonormality err {ortho:.1e} (< 1e-8); 2-class axis cosine {cos:.4} (> 0.99)"),
    )
}

fn eer_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let s = random_scores(seed, 500);
        worst =
            worst.max((compute_eer(&s).unwrap().0 - brute_force_eer(&s.scores, &s.targets)).abs());
    }
    let sep = compute_eer(
        &ScoreSet::new(vec![2.0, 3.0, 0.0, 1.0], vec![true, true, false, false]).unwrap(),
    )
    .unwrap()
    .0;
    let equal = compute_eer(
        &ScoreSet::new(vec![0.5; 6], vec![true, false, true, false, false, true]).unwrap(),
    )
    .unwrap()
    .0;
    check(
        worst <= 1e-12 && sep == 0.0 && equal == 0.5,
        format!("100 sets, max |eer - oracle| {worst:.1e} (<= 1e-12); separable {sep}; all-equal {equal}"),
    )
}

fn aam_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut r = rng(seed);
        let emb = gaussian(6, 5, &mut r);
        let w = gaussian(4, 5, &mut r);
        let labels: Vec<usize> = (0..6).map(|i| i % 4).collect();
        let (l, de, dw) = aam_loss(
            &emb,
            &w,
            &labels,
            &AamConfig {
                scale: 32.0,
                margin: 0.0,
            },
        )
        .unwrap();
        let (lo, deo, dwo) = cosine_softmax_oracle(&emb, &w, &labels, 32.0);
        worst = worst
            .max((l - lo).abs())
            .max((de - deo).amax())
            .max((dw - dwo).amax());
    }
    check(
        worst < 1e-12,
        format!("max deviation from cosine softmax {worst:.1e} (< 1e-12)"),
    )
}

fn determinism() -> Outcome {
    let run = || {
        let mut cfg = comparison_config(3);
        cfg.train.iterations = 150;
        cfg.train.eval_every = 50;
        cfg.net.hidden_dims = vec![32, 32];
        let c = run_comparison(&cfg).unwrap();
        (
            serde_json::to_string(&c.mct_net.to_checkpoint()).unwrap()
                + &serde_json::to_string(&c.maml_net.to_checkpoint()).unwrap(),
            c.mct_log.to_csv() + &c.maml_log.to_csv(),
            format_report(&c.rows()),
        )
    };
    let (a, b) = (run(), run());
    check(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
        format!(
            "nets identical: {}, logs identical: {}, reports identical: {}",
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "gradient suite", guarded(gradient_suite)));
    results.push((2, "meta-gradient suite", guarded(meta_gradient_suite)));

    let start = Instant::now();
    let runs: Result<Vec<Comparison>, String> = catch_unwind(|| {
        (0..5)
            .map(|seed| run_comparison(&comparison_config(seed)).map_err(|e| e.to_string()))
            .collect()
    })
    .unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = start.elapsed();
    if let Ok(runs) = &runs {
        for (seed, c) in runs.iter().enumerate() {
            emit(format!(
                "  seed {seed}: raw {:.2}% mct {:.2}% maml {:.2}%",
                100.0 * mean_eer(&c.raw),
                100.0 * mean_eer(&c.mct),
                100.0 * mean_eer(&c.maml)
            ));
        }
    }
    match &runs {
        Ok(runs) => {
            results.push((
                3,
                "unseen-domain EER ordering",
                ordinal_reproduction(runs, elapsed),
            ));
            results.push((4, "final probe MAML <= MCT", final_probe_check(runs)));
        }
        Err(e) => {
            results.push((3, "unseen-domain EER ordering", Err(e.clone())));
            results.push((4, "final probe MAML <= MCT", Err(e.clone())));
        }
    }

    results.push((5, "PLDA", guarded(plda_suite)));
    results.push((6, "LDA", guarded(lda_suite)));
    results.push((7, "EER", guarded(eer_suite)));
    results.push((8, "AAM margin-zero reduction", guarded(aam_reduction)));
    results.push((9, "determinism", guarded(determinism)));

    let mut failed = Vec::new();
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => emit(format!("criterion {id} PASS  {name}: {detail}")),
            Err(detail) => {
                emit(format!("criterion {id} FAIL  {name}: {detail}"));
                failed.push(*id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
