use std::path::Path;

use metaproj::backend::{
    fit_lda, fit_plda, fit_preproc, read_json, write_json, LdaFile, LdaModel, PldaFile, PldaScorer,
};
use metaproj::evalkit::{
    all_pairs_trials, compute_eer, group_by_domain, load_scores, load_trials, make_trials,
    score_trials, write_report, write_scores, write_trials, Projector, ProjectorStep, ReportRow,
    Scorer,
};
use metaproj::experiment::{run_comparison, HeldOut};
use metaproj::meta::train as train_net;
use metaproj::nn::init_net;
use metaproj::synth::generate_ssmc;
use metaproj::vecio::{partition_by_domain, read_dataset, split_train_eval, write_dataset};
use metaproj::{Error, ProjectionNet, Result, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load, write_resolved};
use crate::{ConfigArgs, ScorerArg};

pub fn synth(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = load(args, "synth")?;
    let ds = generate_ssmc(&cfg.synth)?;
    write_dataset(&ds, out)?;
    write_resolved(&cfg, out)
}

pub fn split(
    args: &ConfigArgs,
    input: &Path,
    held_out: Option<Vec<String>>,
    out_train: &Path,
    out_eval: &Path,
) -> Result<()> {
    let mut cfg = load(args, "split")?;
    if let Some(list) = held_out {
        cfg.split.held_out_domains = list.into_iter().filter(|d| !d.is_empty()).collect();
    }
    let ds = read_dataset(input)?;
    let parts = split_train_eval(&ds, &cfg.split.held_out())?;
    write_dataset(&parts.train, out_train)?;
    write_dataset(&parts.eval, out_eval)?;
    write_resolved(&cfg, out_train)
}

pub fn train(
    args: &ConfigArgs,
    train_csv: &Path,
    scheme: Option<Scheme>,
    probe: Option<&Path>,
    out_net: &Path,
    out_log: &Path,
) -> Result<()> {
    let mut cfg = load(args, "train")?;
    if let Some(s) = scheme {
        cfg.train.scheme = s;
    }
    let ds = read_dataset(train_csv)?;
    let loss = cfg.loss.spec()?;
    let init = init_net(cfg.net_config(ds.dim(), ds.n_speakers()), cfg.train.seed)?;
    let (net, log) = match probe {
        Some(path) => {
            let held_out = HeldOut::new(&read_dataset(path)?, &cfg.eval)?;
            let mut f = |net: &ProjectionNet| held_out.net_eers(net);
            train_net(&ds, &init, loss, &cfg.train, Some(&mut f))?
        }
        None => train_net(&ds, &init, loss, &cfg.train, None)?,
    };
    net.save(out_net)?;
    log.write(out_log)?;
    write_resolved(&cfg, out_net)
}

pub fn transform(net: &Path, input: &Path, output: &Path) -> Result<()> {
    let net = ProjectionNet::load(net)?;
    let ds = read_dataset(input)?;
    let out = Projector::identity()
        .then(ProjectorStep::Net(net))
        .transform_dataset(&ds)?;
    write_dataset(&out, output)
}

pub fn fit_backend(args: &ConfigArgs, input: &Path, out_lda: &Path, out_plda: &Path) -> Result<()> {
    let cfg = load(args, "backend")?;
    let ds = read_dataset(input)?;
    let (dim, clamped) = cfg.backend.effective_lda_dim(ds.dim(), ds.n_speakers());
    if clamped {
        eprintln!(
            "warning: lda_dim {} reduced to {dim} ({} dims, {} speakers)",
            cfg.backend.lda_dim,
            ds.dim(),
            ds.n_speakers()
        );
    }
    let lda = fit_lda(&ds, dim)?;
    let projected = Projector::identity()
        .then(ProjectorStep::Lda(lda.clone()))
        .transform_dataset(&ds)?;
    let preproc = fit_preproc(&projected, cfg.backend.length_norm)?;
    let normed = Projector::identity()
        .then(ProjectorStep::Preproc(preproc.clone()))
        .transform_dataset(&projected)?;
    let (plda, _) = fit_plda(&normed, cfg.backend.plda_iters)?;
    write_json(&LdaFile::from(&lda), out_lda)?;
    write_json(&PldaFile::new(preproc, &plda), out_plda)?;
    write_resolved(&cfg, out_plda)
}

pub fn trials(args: &ConfigArgs, input: &Path, all_pairs: bool, output: &Path) -> Result<()> {
    let cfg = load(args, "eval")?;
    let ds = read_dataset(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let mut out = Vec::new();
    for part in partition_by_domain(&ds).values() {
        if all_pairs {
            out.extend(all_pairs_trials(part));
        } else {
            out.extend(make_trials(
                part,
                &mut rng,
                cfg.eval.n_target,
                cfg.eval.n_nontarget,
            )?);
        }
    }
    write_trials(&out, output)?;
    write_resolved(&cfg, output)
}

pub fn score(
    eval_csv: &Path,
    trials: &Path,
    scorer: ScorerArg,
    net: Option<&Path>,
    lda: Option<&Path>,
    plda: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let mut projector = Projector::identity();
    if let Some(p) = net {
        projector = projector.then(ProjectorStep::Net(ProjectionNet::load(p)?));
    }
    if let Some(p) = lda {
        let model = LdaModel::try_from(read_json::<LdaFile>(p)?)?;
        projector = projector.then(ProjectorStep::Lda(model));
    }
    let scorer = match (scorer, plda) {
        (ScorerArg::Cosine, None) => Scorer::Cosine,
        (ScorerArg::Cosine, Some(_)) => {
            return Err(Error::Config(
                "--plda is only used with --scorer plda".into(),
            ));
        }
        (ScorerArg::Plda, None) => {
            return Err(Error::Config("--scorer plda requires --plda".into()))
        }
        (ScorerArg::Plda, Some(p)) => {
            let (preproc, model) = read_json::<PldaFile>(p)?.into_parts()?;
            projector = projector.then(ProjectorStep::Preproc(preproc));
            Scorer::Plda(PldaScorer::new(&model)?)
        }
    };
    let ds = read_dataset(eval_csv)?;
    let trials = load_trials(trials)?;
    let scores = score_trials(&scorer, &projector, &ds, &trials)?;
    write_scores(&trials, &scores, output)
}

pub fn eval(
    scores: &Path,
    dataset: Option<&Path>,
    scoring: &str,
    projector: &str,
    append: bool,
    output: &Path,
) -> Result<()> {
    let (trials, set) = load_scores(scores)?;
    let groups: Vec<(String, Vec<usize>)> = match dataset {
        Some(p) => group_by_domain(&trials, &read_dataset(p)?)?
            .into_iter()
            .collect(),
        None => vec![("all".into(), (0..set.len()).collect())],
    };
    let mut rows = Vec::new();
    for (domain, idx) in groups {
        let (eer, _) = compute_eer(&set.subset(&idx))?;
        rows.push(ReportRow {
            domain,
            scoring: scoring.into(),
            projector: projector.into(),
            eer_percent: 100.0 * eer,
        });
    }
    write_report(&rows, output, append)
}

pub fn experiment(args: &ConfigArgs, out_dir: &Path) -> Result<()> {
    let cfg = load(args, "train")?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cmp = run_comparison(&cfg)?;
    cmp.mct_net.save(out_dir.join("mct_net.json"))?;
    cmp.maml_net.save(out_dir.join("maml_net.json"))?;
    cmp.mct_log.write(out_dir.join("mct_log.csv"))?;
    cmp.maml_log.write(out_dir.join("maml_log.csv"))?;
    let config = out_dir.join("config.json");
    std::fs::write(&config, cfg.to_json() + "\n").map_err(|e| Error::io(&config, e))?;
    let rows = cmp.rows();
    write_report(&rows, out_dir.join("report.csv"), false)?;
    for r in &rows {
        println!("{} {} {:.2}", r.domain, r.projector, r.eer_percent);
    }
    Ok(())
}
