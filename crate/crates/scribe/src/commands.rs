//! The four pipeline stages behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use scribe_core::cebra::{encode_dataset, train_cebra, AuxiliaryVariables, Embedding};
use scribe_core::dsp::{preprocess, EpochSet, FoldAssignment, PreprocessConfig};
use scribe_core::evaluation::{
    aggregate_csv, cv_rounds, pca_project, per_fold_csv, projection_csv, run_cv, tsne_project, CvRound, ModelResult,
    TSNE_MAX_POINTS,
};
use scribe_core::models::{train_classifier, ClassifierData};
use scribe_core::session::{EPOCH_LEN, N_CLASSES, N_KINEMATICS};
use scribe_core::synthgen::gen_session;
use scribe_core::{Error, Tensor};

use crate::checkpoint::{cebra_config_json, load_encoder, save_classifier, save_encoder};
use crate::config::{DataSource, ExperimentConfig, ModelEntry};
use crate::failure::StageExt;
use crate::manifest::{self, field, file_entries, usize_list, MANIFEST_FILE};
use crate::session_io::{read_session, write_session, SessionPaths};
use crate::Failure;

/// Directory layout under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn session(&self) -> PathBuf {
        self.root.join("session")
    }

    pub fn truth(&self) -> PathBuf {
        self.session().join("truth")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("folds")
    }

    pub fn fold_file(&self, k: usize, what: &str) -> PathBuf {
        self.folds().join(format!("fold{}_{}.stk", k, what))
    }

    pub fn encoder(&self, d: usize, k: usize) -> PathBuf {
        self.root.join("encoders").join(format!("d{}", d)).join(format!("fold{}", k))
    }

    pub fn model(&self, label: &str, k: usize) -> PathBuf {
        self.root.join("models").join(label).join(format!("fold{}", k))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn per_fold_csv(&self) -> PathBuf {
        self.results().join("per_fold.csv")
    }

    pub fn aggregate_csv(&self) -> PathBuf {
        self.results().join("aggregate.csv")
    }

    pub fn projections(&self) -> PathBuf {
        self.results().join("projections")
    }
}

fn session_paths(cfg: &ExperimentConfig, layout: &Layout) -> SessionPaths {
    match &cfg.data {
        DataSource::Synthetic => SessionPaths::in_dir(&layout.session()),
        DataSource::Files { eeg, events, kinematics } => SessionPaths {
            eeg: eeg.clone(),
            events: events.clone(),
            kinematics: kinematics.clone(),
        },
    }
}

fn require(path: &Path, hint: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::io(path, format!("missing; {}", hint)))
    }
}

/// Writes a synthetic session and its ground truth.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<SessionPaths, Failure> {
    if cfg.data != DataSource::Synthetic {
        return Err(Failure::config("generate needs data.source = \"synthetic\""));
    }
    let layout = Layout::new(out);
    let synth_cfg = cfg.synth_config();
    log::info!("generating {} phrase repetitions", synth_cfg.n_repetitions);
    let synth = gen_session(&synth_cfg).stage("synthgen")?;
    let paths = SessionPaths::in_dir(&layout.session());
    write_session(&paths, &synth.session)?;
    let truth = layout.truth();
    manifest::create_dir(&truth)?;
    let t = &synth.truth;
    let mixing = truth.join("mixing.stk");
    let sources = truth.join("sources.stk");
    let offsets = truth.join("offsets.stk");
    manifest::write_stk(&mixing, &t.mixing)?;
    manifest::write_stk(&sources, &t.sources)?;
    manifest::write_stk(&offsets, &Tensor::vector(&t.offsets))?;
    let m = json!({
        "stage": "generate",
        "seed": synth_cfg.seed,
        "synth": {
            "n_repetitions": synth_cfg.n_repetitions,
            "snr_db": if synth_cfg.snr_db.is_finite() { json!(synth_cfg.snr_db) } else { json!("inf") },
            "class_band": [synth_cfg.class_band.0, synth_cfg.class_band.1],
            "jitter": synth_cfg.jitter,
            "blink_amplitude": synth_cfg.blink_amplitude,
            "amplitude_jitter": synth_cfg.amplitude_jitter,
        },
        "class_frequencies_hz": t.class_frequencies,
        "eeg_shape": synth.session.eeg().shape(),
        "n_events": synth.session.events().len(),
        "outputs": file_entries(out, &[&paths.eeg, &paths.events, &paths.kinematics, &mixing, &sources, &offsets])?,
    });
    manifest::write_json(&layout.session().join(MANIFEST_FILE), &m)?;
    Ok(paths)
}

fn preprocess_params_json(p: &PreprocessConfig) -> Value {
    json!({
        "stages": p.stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "broad_band_hz": [p.broad_band.0, p.broad_band.1],
        "narrow_band_hz": [p.narrow_band.0, p.narrow_band.1],
        "filter_order": p.filter_order,
        "ica_components": p.ica_components,
        "ica_fit_decimation": p.ica_fit_decimation,
        "eog_threshold": p.eog_threshold,
        "frontal_channel": p.frontal_channel,
        "ica_seed": p.ica_seed,
        "n_folds": p.n_folds,
        "fold_seed": p.fold_seed,
    })
}

/// Runs the preprocessing chain and writes one set of files per fold.
pub fn cmd_preprocess(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let layout = Layout::new(out);
    let paths = session_paths(cfg, &layout);
    for p in paths.all() {
        require(p, "run `generate` first or point data.* at existing files")?;
    }
    let session = read_session(&paths)?;
    let pcfg = cfg.preprocess_config()?;
    log::info!("preprocessing {} x {} recording", session.n_channels(), session.n_samples());
    let pre = preprocess(&session, &pcfg).stage("preprocess")?;
    for w in &pre.warnings {
        log::warn!("{}: {}", w.stage, w.message);
    }
    let dir = layout.folds();
    manifest::create_dir(&dir)?;
    let set = &pre.epochs;
    let mut folds = Vec::with_capacity(pre.folds.n_folds);
    let mut outputs: Vec<PathBuf> = Vec::new();
    for k in 0..pre.folds.n_folds {
        let idx = pre.folds.test_indices(k);
        let part = set.select(&idx).stage("preprocess")?;
        let labels = Tensor::new(&[idx.len()], part.labels.iter().map(|&l| l as f64).collect()).stage("preprocess")?;
        for (what, t) in [("epochs", &part.epochs), ("traj", &part.trajectories), ("labels", &labels)] {
            let f = layout.fold_file(k, what);
            manifest::write_stk(&f, t)?;
            outputs.push(f);
        }
        let mut counts = [0usize; N_CLASSES];
        part.labels.iter().for_each(|&l| counts[l] += 1);
        folds.push(json!({
            "fold": k,
            "trials": idx,
            "onsets": part.onsets,
            "class_counts": counts,
        }));
    }
    let ica = pre.ica.as_ref().map(|r| {
        json!({
            "n_components": r.n_components,
            "rejected": r.rejected,
            "correlations": r.correlations,
            "converged": r.converged,
        })
    });
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let m = json!({
        "stage": "preprocess",
        "seed": cfg.seed,
        "parameters": preprocess_params_json(&pcfg),
        "n_trials": set.len(),
        "epoch_shape": [set.n_channels(), EPOCH_LEN],
        "trajectory_shape": [N_KINEMATICS, EPOCH_LEN],
        "folds": folds,
        "ica": ica,
        "warnings": pre.warnings.iter().map(|w| format!("{}: {}", w.stage, w.message)).collect::<Vec<_>>(),
        "inputs": file_entries(out, &paths.all())?,
        "outputs": file_entries(out, &out_refs)?,
    });
    manifest::write_json(&dir.join(MANIFEST_FILE), &m)
}

/// Reassembles the full epoch set, in trial order, from the fold files.
pub fn load_folds(out: &Path) -> Result<(EpochSet, FoldAssignment), Failure> {
    let layout = Layout::new(out);
    let mpath = layout.folds().join(MANIFEST_FILE);
    require(&mpath, "run `preprocess` first")?;
    let m = manifest::read_json(&mpath)?;
    let n = field(&mpath, &m, "n_trials")?
        .as_u64()
        .ok_or_else(|| Failure::format(&mpath, "n_trials must be an integer"))? as usize;
    let folds = field(&mpath, &m, "folds")?
        .as_array()
        .ok_or_else(|| Failure::format(&mpath, "folds must be a list"))?;
    let mut fold_of = vec![usize::MAX; n];
    let mut onsets = vec![0; n];
    let mut labels = vec![0; n];
    let mut epochs: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut trajs: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut c = 0;
    for (k, f) in folds.iter().enumerate() {
        let trials = usize_list(&mpath, field(&mpath, f, "trials")?)?;
        let fo = usize_list(&mpath, field(&mpath, f, "onsets")?)?;
        let e = manifest::read_stk(&layout.fold_file(k, "epochs"))?;
        let t = manifest::read_stk(&layout.fold_file(k, "traj"))?;
        let l = manifest::read_stk(&layout.fold_file(k, "labels"))?;
        if e.ndim() != 3 || e.shape()[0] != trials.len() || t.shape()[0] != trials.len() || l.len() != trials.len() || fo.len() != trials.len() {
            return Err(Failure::format(&layout.fold_file(k, "epochs"), "fold files disagree with the manifest"));
        }
        c = e.shape()[1];
        for (j, &i) in trials.iter().enumerate() {
            if i >= n || fold_of[i] != usize::MAX {
                return Err(Failure::format(&mpath, format!("trial {} listed twice or out of range", i)));
            }
            fold_of[i] = k;
            onsets[i] = fo[j];
            labels[i] = l.data()[j] as usize;
            epochs[i] = Some(e.row(j).to_vec());
            trajs[i] = Some(t.row(j).to_vec());
        }
    }
    if fold_of.contains(&usize::MAX) {
        return Err(Failure::format(&mpath, "some trials belong to no fold"));
    }
    let flat = |v: Vec<Option<Vec<f64>>>| v.into_iter().flatten().flatten().collect::<Vec<f64>>();
    let set = EpochSet {
        epochs: Tensor::new(&[n, c, EPOCH_LEN], flat(epochs)).stage("load")?,
        trajectories: Tensor::new(&[n, N_KINEMATICS, EPOCH_LEN], flat(trajs)).stage("load")?,
        labels,
        onsets,
    };
    let assignment = FoldAssignment::new(fold_of, folds.len()).stage("load")?;
    Ok((set, assignment))
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    w.write_record(["step", "loss"]).map_err(|e| Failure::io(path, e))?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), format!("{:?}", l)]).map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// Trains one encoder per embedding width and fold round, on training folds only.
pub fn cmd_train_embed(cfg: &ExperimentConfig, out: &Path) -> Result<usize, Failure> {
    let layout = Layout::new(out);
    let (set, folds) = load_folds(out)?;
    let fold_manifest = layout.folds().join(MANIFEST_FILE);
    let inputs = file_entries(out, &[&fold_manifest])?;
    let mut written = 0;
    for d in cfg.embed_dims() {
        for round in cv_rounds(&folds) {
            let k = round.fold;
            let ccfg = cfg.cebra_config(d, k);
            log::info!("training encoder d={} fold={} ({} steps)", d, k, ccfg.steps);
            let train = set.select(&round.train).stage("train-embed")?;
            let aux = AuxiliaryVariables::from_epoch_set(&train).stage("train-embed")?;
            let trained = train_cebra(&train.epochs, &aux, &ccfg).stage("train-embed")?;
            let dir = layout.encoder(d, k);
            save_encoder(
                &dir,
                &trained.encoder,
                &ccfg,
                json!({ "fold": k, "train_trials": round.train, "inputs": inputs }),
            )?;
            write_losses(&dir.join("losses.csv"), &trained.losses)?;
            let test = set.select(&round.test).stage("train-embed")?;
            let emb = encode_dataset(&trained.encoder, &test.epochs).stage("train-embed")?;
            let emb_path = dir.join("test_embedding.stk");
            manifest::write_stk(&emb_path, &emb.matrix)?;
            manifest::write_json(
                &dir.join("test_embedding.json"),
                &json!({
                    "source_fold": k,
                    "trials": round.test,
                    "shape": emb.matrix.shape(),
                    "config": cebra_config_json(&ccfg),
                    "sha256": manifest::sha256_file(&emb_path)?,
                }),
            )?;
            written += 1;
        }
    }
    Ok(written)
}

/// Loads the fold-`k` encoder and checks it was trained on exactly the
/// round's training trials.
fn fold_embeddings(layout: &Layout, d: usize, round: &CvRound, set: &EpochSet) -> Result<(Embedding, Embedding), Failure> {
    let dir = layout.encoder(d, round.fold);
    let mpath = dir.join(MANIFEST_FILE);
    require(&mpath, "run `train-embed` first")?;
    let m = manifest::read_json(&mpath)?;
    let prov = field(&mpath, &m, "provenance")?;
    let trained_on = usize_list(&mpath, field(&mpath, prov, "train_trials")?)?;
    if let Some(&i) = trained_on.iter().find(|i| round.test.contains(i)) {
        return Err(Failure::core(
            "run",
            Error::Leakage(format!("encoder d={} fold={} was trained on test trial {}", d, round.fold, i)),
        ));
    }
    let enc = load_encoder(&dir)?;
    let train = set.select(&round.train).stage("run")?;
    let test = set.select(&round.test).stage("run")?;
    Ok((
        encode_dataset(&enc, &train.epochs).stage("run")?,
        encode_dataset(&enc, &test.epochs).stage("run")?,
    ))
}

fn evaluate_model(
    cfg: &ExperimentConfig,
    layout: &Layout,
    entry: &ModelEntry,
    set: &EpochSet,
    folds: &FoldAssignment,
) -> Result<ModelResult, Failure> {
    let arch = entry.architecture()?;
    let rounds = cv_rounds(folds);
    let mut failure: Option<Failure> = None;
    let report = run_cv(&rounds, &set.epochs, &set.labels, N_CLASSES, |round| {
        let attempt = || -> Result<Vec<usize>, Failure> {
            let train = set.select(&round.train).stage("run")?;
            let test = set.select(&round.test).stage("run")?;
            let emb = match arch.d_embed() {
                Some(d) => Some(fold_embeddings(layout, d, round, set)?),
                None => None,
            };
            let seed = cfg.model_seed(entry, round.fold);
            let mut model = arch.build(seed).stage("run")?;
            log::info!("training {} fold={}", entry.label(), round.fold);
            let data = ClassifierData {
                eeg: &train.epochs,
                embed: emb.as_ref().map(|e| &e.0.trial_major),
                labels: &train.labels,
            };
            let history = train_classifier(&mut model, &data, &cfg.train_config(seed)).stage("train")?;
            save_classifier(
                &layout.model(&entry.label(), round.fold),
                &model,
                seed,
                json!({ "fold": round.fold, "epochs_run": history.train_loss.len(), "best_epoch": history.best_epoch }),
            )?;
            let pred = model.predict(&test.epochs, emb.as_ref().map(|e| &e.1.trial_major)).stage("predict")?;
            Ok(pred.classes)
        };
        attempt().map_err(|f| {
            let e = match &f {
                Failure::Core { source, .. } => source.clone(),
                other => Error::Contract(other.to_string()),
            };
            failure = Some(f);
            e
        })
    });
    match report {
        Ok(report) => Ok(ModelResult {
            model: arch.name().to_string(),
            d_embed: arch.d_embed(),
            report,
        }),
        Err(e) => Err(failure.unwrap_or(Failure::core("evaluate", e))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn flatten_trials(t: &Tensor) -> Result<Tensor, Failure> {
    let n = t.shape()[0];
    t.clone().reshape(&[n, t.len() / n]).stage("projection")
}

fn write_projections(
    cfg: &ExperimentConfig,
    layout: &Layout,
    set: &EpochSet,
    folds: &FoldAssignment,
) -> Result<Vec<PathBuf>, Failure> {
    let dir = layout.projections();
    manifest::create_dir(&dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, coords: &Tensor, labels: &[usize]| -> Result<(), Failure> {
        let p = dir.join(format!("{}.csv", name));
        write_text(&p, &projection_csv(coords, labels).stage("projection")?)?;
        written.push(p);
        Ok(())
    };
    let flat = flatten_trials(&set.epochs)?;
    log::info!("projecting preprocessed EEG");
    let pca = pca_project(&flat, 2).stage("projection")?;
    emit("pca_eeg".into(), &pca.projection().coords, &set.labels)?;
    let tsne_cfg = cfg.tsne_config();
    let tsne_ok = set.len() <= TSNE_MAX_POINTS && cfg.projections.tsne_perplexity <= (set.len() - 1) as f64 / 3.0;
    if tsne_ok {
        let ts = tsne_project(&flat, &tsne_cfg).stage("projection")?;
        emit("tsne_eeg".into(), &ts.projection.coords, &set.labels)?;
    }
    let round0 = &cv_rounds(folds)[0];
    for d in cfg.embed_dims() {
        let enc = load_encoder(&layout.encoder(d, round0.fold))?;
        let emb = encode_dataset(&enc, &set.epochs).stage("projection")?;
        let stride = cfg.projections.embedding_stride.max(1);
        let rows: Vec<usize> = (0..emb.matrix.shape()[0]).step_by(stride).collect();
        let sub = emb.matrix.select_rows(&rows).stage("projection")?;
        let sub_labels: Vec<usize> = rows.iter().map(|&r| set.labels[r / EPOCH_LEN]).collect();
        let p = pca_project(&sub, 2.min(d)).stage("projection")?;
        emit(format!("pca_embedding_d{}", d), &p.projection().coords, &sub_labels)?;
        if tsne_ok {
            let ts = tsne_project(&flatten_trials(&emb.trial_major)?, &tsne_cfg).stage("projection")?;
            emit(format!("tsne_embedding_d{}", d), &ts.projection.coords, &set.labels)?;
        }
    }
    Ok(written)
}

/// Cross-validates every configured model and writes the results tables.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, all: bool) -> Result<Vec<ModelResult>, Failure> {
    if all {
        if cfg.data == DataSource::Synthetic {
            cmd_generate(cfg, out)?;
        }
        cmd_preprocess(cfg, out)?;
        cmd_train_embed(cfg, out)?;
    }
    let layout = Layout::new(out);
    let (set, folds) = load_folds(out)?;
    let mut results = Vec::with_capacity(cfg.models.len());
    for entry in &cfg.models {
        results.push(evaluate_model(cfg, &layout, entry, &set, &folds)?);
    }
    manifest::create_dir(&layout.results())?;
    write_text(&layout.per_fold_csv(), &per_fold_csv(&results))?;
    write_text(&layout.aggregate_csv(), &aggregate_csv(&results))?;
    let projections = if cfg.projections.enabled {
        write_projections(cfg, &layout, &set, &folds)?
    } else {
        Vec::new()
    };
    let mut inputs: Vec<PathBuf> = vec![layout.folds().join(MANIFEST_FILE)];
    for d in cfg.embed_dims() {
        for k in 0..folds.n_folds {
            inputs.push(layout.encoder(d, k).join(MANIFEST_FILE));
        }
    }
    let mut outputs = vec![layout.per_fold_csv(), layout.aggregate_csv()];
    outputs.extend(projections);
    let in_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let m = json!({
        "stage": "run",
        "seed": cfg.seed,
        "models": cfg.models.iter().map(|m| m.label()).collect::<Vec<_>>(),
        "train": {
            "lr": cfg.train.lr,
            "batch_size": cfg.train.batch_size,
            "max_epochs": cfg.train.max_epochs,
            "val_fraction": cfg.train.val_fraction,
            "patience": cfg.train.patience,
        },
        "inputs": file_entries(out, &in_refs)?,
        "outputs": file_entries(out, &out_refs)?,
    });
    manifest::write_json(&layout.results().join(MANIFEST_FILE), &m)?;
    Ok(results)
}
