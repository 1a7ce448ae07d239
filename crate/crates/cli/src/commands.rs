use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use segaw_core::checks::{gradient_checks, GRADCHECK_TOLERANCE};
use segaw_core::eval::{rank_by_score, segmentation_prf, Report, SegmentationScore};
use segaw_core::experiment::StdTask;
use segaw_core::features::{apply_cmvn, compute_mfcc, read_wav, FeatureMatrix, MfccConfig};
use segaw_core::gas::{train_gas_autoencoder, GasModel, GasSequence};
use segaw_core::io::{
    atomic_write, fingerprint, read_features, read_manifest, write_features, write_manifest, Checkpoint,
    EmbeddingIndex, IndexEntry, ManifestEntry,
};
use segaw_core::matching::subsequence_score;
use segaw_core::ssae::{BoundarySet, ModelConfig, SsaeParams};
use segaw_core::synth::{generate_corpus, SynthUtterance};
use segaw_core::trainer::{train_iterative, Utterance};
use segaw_core::{Error, Result};

use crate::settings::Settings;
use crate::{Common, Inputs, Model};

/// Frame hop of the acoustic front end, for reporting boundary times.
const HOP_SECONDS: f64 = 0.01;

fn settings(common: &Common) -> Result<Settings> {
    let mut s = Settings::new(common.seed);
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    for kv in &common.overrides {
        s.apply_flag(kv)?;
    }
    Ok(s)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.sgaw"))
}

fn load_inputs(inputs: &Inputs) -> Result<Vec<FeatureMatrix>> {
    if let Some(m) = &inputs.manifest {
        return read_manifest(m)?
            .iter()
            .map(|e| read_features(&feature_path(&inputs.features, &e.id)))
            .collect();
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&inputs.features)
        .map_err(|e| Error::io(&inputs.features, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sgaw"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .sgaw files in {}", inputs.features.display())));
    }
    paths.iter().map(|p| read_features(p)).collect()
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((Checkpoint::from_bytes(&bytes)?, fingerprint(&bytes)))
}

/// A trained model plus the GAS extractor its gate expects, if any.
struct Loaded {
    params: SsaeParams,
    gas: Option<GasModel>,
    fingerprint: String,
}

impl Loaded {
    fn open(model: &Model) -> Result<Self> {
        let (ck, fp) = load_checkpoint(&model.checkpoint)?;
        let params = ck.to_ssae()?;
        let gas = if params.config.gas_dim > 0 {
            let path = model
                .gas
                .as_ref()
                .ok_or_else(|| Error::Input("model was trained with GAS input; pass --gas".into()))?;
            let (gck, gfp) = load_checkpoint(path)?;
            if let Some(expected) = ck.config_value("gas_checkpoint") {
                if expected != gfp {
                    return Err(Error::Compat(format!(
                        "model was trained with GAS checkpoint {expected}, got {gfp}"
                    )));
                }
            }
            let g = gck.to_gas()?;
            if g.hidden_dim() != params.config.gas_dim {
                return Err(Error::Compat(format!(
                    "GAS width {} does not match the model's {}",
                    g.hidden_dim(),
                    params.config.gas_dim
                )));
            }
            Some(g)
        } else {
            None
        };
        Ok(Self {
            params,
            gas,
            fingerprint: fp,
        })
    }

    fn gas_for(&self, f: &FeatureMatrix) -> Result<GasSequence> {
        match &self.gas {
            Some(g) => g.extract(f),
            None => Ok(GasSequence::empty(f.len())),
        }
    }

    fn embed(&self, f: &FeatureMatrix) -> Result<(BoundarySet, segaw_core::ssae::EmbeddingSequence)> {
        self.params.embed(f, &self.gas_for(f)?)
    }
}

pub fn synth(common: &Common, out: &Path) -> Result<ExitCode> {
    let s = settings(common)?;
    let corpus = generate_corpus(&s.desk.synth)?;
    let dir = out.join("features");
    create_dir(&dir)?;
    for u in &corpus.utterances {
        write_features(&feature_path(&dir, &u.features.id), &u.features)?;
    }
    let entries = |utts: &[SynthUtterance]| -> Vec<ManifestEntry> {
        utts.iter()
            .map(|u| ManifestEntry {
                id: u.features.id.clone(),
                boundaries: u.boundaries.clone(),
                words: u.words.clone(),
            })
            .collect()
    };
    write_manifest(&out.join("train.manifest"), &entries(corpus.train()))?;
    write_manifest(&out.join("test.manifest"), &entries(corpus.test()))?;
    eprintln!(
        "synth: {} train, {} test utterances in {}",
        corpus.train().len(),
        corpus.test().len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn featurize(common: &Common, wavs: &[PathBuf], out: &Path, cmvn: bool) -> Result<ExitCode> {
    settings(common)?;
    create_dir(out)?;
    let cfg = MfccConfig::default();
    for path in wavs {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Input(format!("{} has no file name", path.display())))?;
        let pcm = read_wav(path)?;
        let mut f = compute_mfcc(id.clone(), &pcm, cfg.sample_rate, &cfg)?;
        if cmvn {
            f = apply_cmvn(&f);
        }
        write_features(&feature_path(out, &id), &f)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train_gas(common: &Common, inputs: &Inputs, out: &Path, log: Option<&Path>) -> Result<ExitCode> {
    let s = settings(common)?;
    let feats = load_inputs(inputs)?;
    let cfg = &s.desk.gas;
    let (model, curve) = train_gas_autoencoder(&feats, cfg)?;
    let mut text = String::new();
    for (epoch, mse) in curve.iter().enumerate() {
        let _ = writeln!(text, "epoch={epoch} mse={mse:.6}");
    }
    eprint!("{text}");
    if let Some(p) = log {
        atomic_write(p, text.as_bytes())?;
    }
    let snapshot = [
        ("gas_window", cfg.window.to_string()),
        ("gas_epochs", cfg.epochs.to_string()),
        ("gas_batch", cfg.batch_size.to_string()),
        ("gas_lr", cfg.learning_rate.to_string()),
        ("gas_clip", cfg.grad_clip.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Checkpoint::from_gas(&model, common.seed, snapshot).save(out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn train(common: &Common, inputs: &Inputs, gas: Option<&Path>, out: &Path, log: Option<&Path>) -> Result<ExitCode> {
    let s = settings(common)?;
    let feats = load_inputs(inputs)?;
    let mut extra = s.training_snapshot();
    let gas_model = if s.desk.use_gas {
        let path = gas.ok_or_else(|| Error::Config("use_gas = true needs --gas (or set use_gas = false)".into()))?;
        let (ck, fp) = load_checkpoint(path)?;
        extra.push(("gas_checkpoint".into(), fp));
        Some(ck.to_gas()?)
    } else {
        None
    };
    let corpus: Vec<Utterance> = feats
        .into_iter()
        .map(|f| {
            let g = match &gas_model {
                Some(m) => m.extract(&f)?,
                None => GasSequence::empty(f.len()),
            };
            Utterance::new(f, g)
        })
        .collect::<Result<_>>()?;
    let model = ModelConfig {
        feature_dim: corpus.first().map_or(0, |u| u.features.dim()),
        gas_dim: gas_model.as_ref().map_or(0, |g| g.hidden_dim()),
        ..s.desk.model
    };
    let mut lines = String::new();
    let params = train_iterative(&corpus, &model, &s.desk.train, &mut |m, _| {
        for l in m.log_lines() {
            eprintln!("{l}");
            lines.push_str(&l);
            lines.push('\n');
        }
    })?;
    if let Some(p) = log {
        atomic_write(p, lines.as_bytes())?;
    }
    Checkpoint::from_ssae(&params, common.seed, extra).save(out)?;
    Ok(ExitCode::SUCCESS)
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn segment(common: &Common, inputs: &Inputs, model: &Model, out: &Path) -> Result<ExitCode> {
    settings(common)?;
    let m = Loaded::open(model)?;
    let mut text = String::new();
    for f in load_inputs(inputs)? {
        let b = m.params.segment(&f, &m.gas_for(&f)?)?;
        let secs = b.ends().iter().map(|&e| format!("{:.2}", e as f64 * HOP_SECONDS));
        let _ = writeln!(text, "{}\t{}\t{}", f.id, join(b.ends()), join(secs));
    }
    atomic_write(out, text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

pub fn embed(common: &Common, inputs: &Inputs, model: &Model, out: &Path) -> Result<ExitCode> {
    settings(common)?;
    let m = Loaded::open(model)?;
    let entries = load_inputs(inputs)?
        .into_iter()
        .map(|f| {
            let (boundaries, embeddings) = m.embed(&f)?;
            Ok(IndexEntry {
                id: f.id,
                boundaries,
                embeddings,
            })
        })
        .collect::<Result<_>>()?;
    EmbeddingIndex {
        checkpoint: m.fingerprint.clone(),
        entries,
    }
    .save(out)?;
    Ok(ExitCode::SUCCESS)
}

fn open_index(path: &Path, m: &Loaded) -> Result<EmbeddingIndex> {
    let index = EmbeddingIndex::load(path)?;
    index.check_checkpoint(&m.fingerprint)?;
    Ok(index)
}

pub fn search(common: &Common, model: &Model, index: &Path, query: &Path, out: Option<&Path>) -> Result<ExitCode> {
    settings(common)?;
    let m = Loaded::open(model)?;
    let index = open_index(index, &m)?;
    let (_, q) = m.embed(&read_features(query)?)?;
    let mut scored = Vec::with_capacity(index.entries.len());
    let mut offsets = BTreeMap::new();
    for e in &index.entries {
        let r = subsequence_score(&q, &e.embeddings)?;
        offsets.insert(e.id.clone(), r.best_offset);
        scored.push((e.id.clone(), r.score));
    }
    rank_by_score(&mut scored);
    let mut text = String::new();
    for (id, score) in &scored {
        let _ = writeln!(text, "{id}\t{score:.6}\t{}", offsets[id]);
    }
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

/// `id<TAB>ends...` lines: `segment` output and manifests both qualify.
fn read_boundaries(path: &Path) -> Result<BTreeMap<String, BoundarySet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Input(format!("{}:{}: {m}", path.display(), n + 1));
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default();
        let ends: Vec<usize> = cols
            .next()
            .ok_or_else(|| bad("missing boundary column".into()))?
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| bad(format!("`{x}` is not a frame index"))))
            .collect::<Result<_>>()?;
        let t = *ends.last().ok_or_else(|| bad("no boundaries".into()))?;
        let b = BoundarySet::from_ends(t, ends).map_err(|e| bad(e.to_string()))?;
        out.insert(id.to_string(), b);
    }
    Ok(out)
}

pub fn eval_seg(common: &Common, hyp: &Path, reference: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let s = settings(common)?;
    let hyp = read_boundaries(hyp)?;
    let mut scores = Vec::new();
    let (mut segs, mut frames) = (0usize, 0usize);
    for r in read_manifest(reference)? {
        let h = hyp
            .get(&r.id)
            .ok_or_else(|| Error::Input(format!("hypothesis lacks utterance `{}`", r.id)))?;
        scores.push(segmentation_prf(h, &r.boundaries, s.desk.tolerance)?);
        segs += h.num_segments();
        frames += h.num_frames();
    }
    let p = SegmentationScore::pooled(&scores);
    let mut report = Report::default();
    report.push_f("precision", p.precision);
    report.push_f("recall", p.recall);
    report.push_f("f1", p.f1);
    report.push("hypothesized", p.hypothesized);
    report.push("reference", p.reference);
    report.push("matched", p.matched);
    report.push_f("segments_per_frame", segs as f64 / frames.max(1) as f64);
    report.push("tolerance", s.desk.tolerance);
    report.push("utterances", scores.len());
    emit(out, &report.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn labelled(dir: &Path, manifest: &Path) -> Result<Vec<SynthUtterance>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let features = read_features(&feature_path(dir, &e.id))?;
            if features.len() != e.boundaries.num_frames() {
                return Err(Error::Input(format!(
                    "`{}` has {} frames, manifest says {}",
                    e.id,
                    features.len(),
                    e.boundaries.num_frames()
                )));
            }
            Ok(SynthUtterance {
                features,
                boundaries: e.boundaries,
                words: e.words,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn eval_std(
    common: &Common,
    model: &Model,
    index: &Path,
    features: &Path,
    train_manifest: &Path,
    test_manifest: &Path,
    dtw: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let s = settings(common)?;
    let m = Loaded::open(model)?;
    let index = open_index(index, &m)?;
    let train = labelled(features, train_manifest)?;
    let test = labelled(features, test_manifest)?;
    let task = StdTask::from_splits(&train, &test, &s.desk.std)?;
    let by_id: BTreeMap<&str, &IndexEntry> = index.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let docs: Vec<&IndexEntry> = task
        .documents
        .iter()
        .map(|d| {
            by_id
                .get(d.id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("index lacks document `{}`", d.id)))
        })
        .collect::<Result<_>>()?;
    let queries: BTreeMap<String, _> = task
        .queries
        .iter()
        .map(|q| Ok((q.id.clone(), m.embed(&q.features)?.1)))
        .collect::<Result<_>>()?;
    let ssae = task.evaluate(|q, i| Ok(subsequence_score(&queries[&q.id], &docs[i].embeddings)?.score))?;
    let random = task.evaluate_random(common.seed)?;

    let mut report = Report::default();
    report.push_f("map", ssae.map);
    report.push_f("map_random", random.map);
    if dtw {
        report.push_f("map_dtw", task.evaluate_dtw()?.map);
    }
    report.push("queries", task.queries.len());
    report.push("documents", task.documents.len());
    for (q, ap) in &ssae.average_precision {
        report.push_f(format!("ap.{q}"), *ap);
    }
    emit(out, &report.to_string())?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(common: &Common, out: Option<&Path>) -> Result<ExitCode> {
    settings(common)?;
    let checks = gradient_checks(common.seed)?;
    let mut report = Report::default();
    for c in &checks {
        let key: String = c
            .name
            .chars()
            .filter_map(|ch| match ch {
                'a'..='z' | '0'..='9' => Some(ch),
                ' ' => Some('_'),
                _ => None,
            })
            .collect();
        report.push(format!("{key}.max_rel_error"), format!("{:.3e}", c.report.max_rel_error));
        report.push(format!("{key}.worst_param"), &c.report.worst_param);
        report.push(format!("{key}.checked"), c.report.checked);
    }
    let passed = checks.iter().all(|c| c.passed());
    report.push("tolerance", format!("{GRADCHECK_TOLERANCE:e}"));
    report.push("passed", passed);
    emit(out, &report.to_string())?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
