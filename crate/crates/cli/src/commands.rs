use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use cpvae_core::diagnostics::{grid_coverage, mapper, simplex_coverage_export, LatentPart, MapperParams};
use cpvae_core::eval::{cluster_metrics, config_fingerprint, kmeans, train_classifier, ClassifierConfig, ClusterMapping};
use cpvae_core::generate::{
    decode_latent, identify_basis, topic_transition_generate, BasisAssignment, BeamConfig, Strategy, SAMPLES_PER_CLASS,
};
use cpvae_core::model::{CpVaeModel, Checkpoint};
use cpvae_core::pipeline::{
    dimension_manipulation, encode_lines, evaluate_transfer, latent_codes, shift_diagnosis, transfer_all, Manipulation,
    ToyData, TransferRun, TOY_MAX_LEN,
};
use cpvae_core::text::toy::EMBED_SEED;
use cpvae_core::text::toy::synthetic_embeddings;
use cpvae_core::text::{read_labels, read_lines, sentence_representation, Corpus, EmbeddingTable, Vocabulary};
use cpvae_core::train::{train, TrainConfig};

use crate::manifest::{file_hash, read_manifest, rerun_args, sha256_hex, Manifest, OutputDir};
use crate::{Cli, Command, Common, DiagnoseArgs, EvalArgs, EvalMode, StrategyArg, TransferArgs, TransitionArgs};

pub fn dispatch(command: Command, args: Vec<String>) -> Result<()> {
    let (name, common, extra): (&str, &Common, Vec<&Path>) = match &command {
        Command::Rerun(r) => {
            let m = read_manifest(&r.manifest)?;
            let args = rerun_args(&m, &r.output);
            let mut argv = vec!["cpvae".to_string()];
            argv.extend(args.iter().cloned());
            let cli = Cli::try_parse_from(argv).map_err(|e| anyhow!("manifest arguments rejected: {}", e.kind()))?;
            if matches!(cli.command, Command::Rerun(_)) {
                bail!("a manifest cannot record a rerun");
            }
            return dispatch(cli.command, args);
        }
        Command::Train(a) => ("train", &a.common, vec![]),
        Command::IdentifyBasis(a) => ("identify-basis", &a.common, vec![a.checkpoint.as_path()]),
        Command::Transfer(a) => ("transfer", &a.common, transfer_paths(a)),
        Command::Generate(a) => ("generate", &a.common, transfer_paths(a)),
        Command::Transition(a) => ("transition", &a.common, vec![a.checkpoint.as_path()]),
        Command::Diagnose(a) => {
            let mut p = vec![a.checkpoint.as_path()];
            p.extend(a.basis.as_deref());
            ("diagnose", &a.common, p)
        }
        Command::Eval(a) => ("eval", &a.common, a.checkpoint.as_deref().into_iter().collect()),
    };
    let mut manifest = Manifest {
        command: name.into(),
        args,
        ..Manifest::default()
    };
    let inputs = [
        &common.config,
        &common.input,
        &common.labels,
        &common.train_input,
        &common.train_labels,
        &common.embeddings,
    ];
    for p in inputs.into_iter().flatten().map(|p| p.as_path()).chain(extra) {
        if !p.is_file() {
            bail!("{} does not exist or is not a file", p.display());
        }
        manifest.inputs.insert(p.display().to_string(), file_hash(p)?);
    }
    let mut out = OutputDir::create(&common.output, manifest)?;
    let result = match &command {
        Command::Train(a) => cmd_train(&a.common, a.baseline, &mut out),
        Command::IdentifyBasis(a) => cmd_identify(&a.common, &a.checkpoint, &mut out),
        Command::Transfer(a) => cmd_transfer(a, &mut out),
        Command::Generate(a) => cmd_generate(a, &mut out),
        Command::Transition(a) => cmd_transition(a, &mut out),
        Command::Diagnose(a) => cmd_diagnose(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Rerun(_) => unreachable!("handled above"),
    };
    match result {
        Ok(()) => out.finish(),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn transfer_paths(a: &TransferArgs) -> Vec<&Path> {
    let mut p = vec![a.checkpoint.as_path()];
    p.extend(a.basis.as_deref());
    p
}

/// Profile, then an optional `profile = ...` line of the file, then `toy`.
fn resolve_config(common: &Common, baseline: bool) -> Result<TrainConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => String::new(),
    };
    let mut file_profile = None;
    let mut file_baseline = false;
    let mut rest = String::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if let Some((k, v)) = body.split_once('=') {
            match k.trim() {
                "profile" => {
                    file_profile = Some(v.trim().to_string());
                    // keep line numbers aligned for parse errors
                    rest.push('\n');
                    continue;
                }
                "mode" if v.trim() == "beta_vae_baseline" => file_baseline = true,
                _ => {}
            }
        }
        rest.push_str(line);
        rest.push('\n');
    }
    let profile = common.profile.clone().or(file_profile).unwrap_or_else(|| "toy".into());
    let mut cfg = TrainConfig::profile(&profile)?;
    if baseline || file_baseline {
        cfg = cfg.into_baseline();
    }
    let source = common.config.as_ref().map_or("<none>".to_string(), |p| p.display().to_string());
    cfg.apply_text(&rest, &source)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Loaded {
    ck: Checkpoint,
    cfg: TrainConfig,
    seed: u64,
}

fn load_checkpoint(path: &Path, common: &Common, out: &mut OutputDir) -> Result<Loaded> {
    let ck = Checkpoint::load(path)?;
    let text = ck
        .extra
        .get("config")
        .and_then(|v| v.as_str())
        .ok_or_else(|| anyhow!("{} carries no training configuration", path.display()))?;
    let mut cfg = TrainConfig::profile("toy")?;
    cfg.apply_text(text, &path.display().to_string())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    out.manifest.config = text.to_string();
    out.manifest.seed = seed;
    out.manifest.checkpoint_sha256 = Some(file_hash(path)?);
    Ok(Loaded { ck, cfg, seed })
}

struct Labeled {
    lines: Vec<String>,
    labels: Option<Vec<usize>>,
}

impl Labeled {
    fn read(input: &Path, labels: Option<&Path>) -> Result<Self> {
        let lines = read_lines(input)?;
        let labels = labels.map(read_labels).transpose()?;
        if let Some(l) = &labels {
            if l.len() != lines.len() {
                bail!("{} sentences but {} labels", lines.len(), l.len());
            }
        }
        Ok(Self { lines, labels })
    }

    fn labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| anyhow!("{what} needs class labels (--labels / --train-labels)"))
    }
}

/// `--input` or the toy held-out split.
fn eval_set(common: &Common, cfg: &TrainConfig) -> Result<Labeled> {
    match &common.input {
        Some(p) => Labeled::read(p, common.labels.as_deref()),
        None => {
            let t = ToyData::new(&cfg.dataset, cfg.embed_dim)?;
            Ok(Labeled {
                lines: t.heldout.lines,
                labels: Some(t.heldout.labels),
            })
        }
    }
}

/// `--train-input` or the toy training split.
fn train_set(common: &Common, cfg: &TrainConfig) -> Result<Labeled> {
    match &common.train_input {
        Some(p) => Labeled::read(p, common.train_labels.as_deref()),
        None => {
            let t = ToyData::new(&cfg.dataset, cfg.embed_dim)?;
            Ok(Labeled {
                lines: t.train.lines,
                labels: Some(t.train.labels),
            })
        }
    }
}

fn embeddings(common: &Common, vocab: &Vocabulary, cfg: &TrainConfig) -> Result<EmbeddingTable> {
    Ok(match &common.embeddings {
        Some(p) => EmbeddingTable::load(p, vocab, cfg.embed_dim, cfg.seed)?,
        None => synthetic_embeddings(vocab, cfg.embed_dim, EMBED_SEED)?,
    })
}

fn beam_for(sentences: &[Vec<usize>], beam_size: usize) -> BeamConfig {
    let longest = sentences.iter().map(Vec::len).max().unwrap_or(0);
    BeamConfig {
        beam_size,
        max_len: TOY_MAX_LEN.max(longest + 5),
        length_normalize: false,
    }
}

fn parse_target(t: &str, classes: usize) -> Result<usize> {
    let v = match t {
        "negative" => 0,
        "positive" => 1,
        other => other
            .parse()
            .map_err(|_| anyhow!("unknown target `{other}` (negative, positive or a class index)"))?,
    };
    if v >= classes {
        bail!("target {v} out of range for {classes} classes");
    }
    Ok(v)
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn manipulation(
    strategy: Option<StrategyArg>,
    basis: Option<&Path>,
    model: &CpVaeModel,
    train_s: &[Vec<usize>],
    train_l: &[usize],
    seed: u64,
) -> Result<Manipulation> {
    let dim = |s: Strategy| -> Result<Manipulation> {
        if model.is_structured() {
            bail!("strategy `{s}` applies to baseline checkpoints; use --strategy vertex");
        }
        Ok(dimension_manipulation(model, train_s, train_l, s)?)
    };
    match strategy {
        Some(StrategyArg::Sigma) => dim(Strategy::Sigma),
        Some(StrategyArg::TwoSigma) => dim(Strategy::TwoSigma),
        Some(StrategyArg::Extremum) => dim(Strategy::Extremum),
        Some(StrategyArg::Vertex) | None => {
            if !model.is_structured() {
                bail!("baseline checkpoints need --strategy sigma, two-sigma or extremum");
            }
            let b = match basis {
                Some(p) => serde_json::from_str::<BasisAssignment>(&fs::read_to_string(p)?)
                    .with_context(|| format!("{} is not a basis assignment", p.display()))?,
                None => identify_basis(model, train_s, train_l, SAMPLES_PER_CLASS, seed)?,
            };
            Ok(Manipulation::Vertex(b))
        }
    }
}

fn cmd_train(common: &Common, baseline: bool, out: &mut OutputDir) -> Result<()> {
    let cfg = resolve_config(common, baseline)?;
    let (lines, labels, vocab, table) = match &common.input {
        Some(p) => {
            let d = Labeled::read(p, common.labels.as_deref())?;
            let vocab = Vocabulary::build(&d.lines, None, 1)?;
            let table = embeddings(common, &vocab, &cfg)?;
            (d.lines, d.labels, vocab, table)
        }
        None => {
            let t = ToyData::new(&cfg.dataset, cfg.embed_dim)?;
            let table = match &common.embeddings {
                Some(_) => embeddings(common, &t.vocab, &cfg)?,
                None => t.table,
            };
            (t.train.lines, Some(t.train.labels), t.vocab, table)
        }
    };
    let corpus = Corpus::from_lines(&lines, &vocab, labels)?;
    let outcome = train(&cfg, &corpus, vocab.len(), Some(&table), |r| {
        eprintln!("epoch {:>3}  rec {:.4}  total {:.4}", r.epoch, r.rec, r.total);
    })?;
    let text = cfg.to_text();
    let ck = Checkpoint {
        model: outcome.model,
        vocab,
        extra: serde_json::json!({ "config": text, "best_epoch": outcome.best_epoch }),
    };
    let bytes = ck.to_bytes()?;
    out.manifest.config = text;
    out.manifest.seed = cfg.seed;
    out.manifest.checkpoint_sha256 = Some(sha256_hex(&bytes));
    out.write("model.ckpt", &bytes)?;
    out.write("train_log.csv", outcome.log.to_csv())?;
    out.write_sidecar("timing.csv", outcome.log.timing_csv())?;
    Ok(())
}

fn cmd_identify(common: &Common, checkpoint: &Path, out: &mut OutputDir) -> Result<()> {
    let l = load_checkpoint(checkpoint, common, out)?;
    let data = match &common.input {
        Some(p) => Labeled::read(p, common.labels.as_deref())?,
        None => train_set(common, &l.cfg)?,
    };
    let s = encode_lines(&l.ck.vocab, &data.lines);
    let b = identify_basis(&l.ck.model, &s, data.labels("identify-basis")?, SAMPLES_PER_CLASS, l.seed)?;
    out.write("basis.json", serde_json::to_string_pretty(&b)?)?;
    Ok(())
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

fn cmd_transfer(a: &TransferArgs, out: &mut OutputDir) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, &a.common, out)?;
    let (model, vocab) = (&l.ck.model, &l.ck.vocab);
    let eval = eval_set(&a.common, &l.cfg)?;
    let train = train_set(&a.common, &l.cfg)?;
    let train_l = train.labels("transfer")?;
    let train_s = encode_lines(vocab, &train.lines);
    let classes = num_classes(train_l);
    let m = manipulation(a.strategy, a.basis.as_deref(), model, &train_s, train_l, l.seed)?;
    let targets = match &a.target {
        Some(t) => vec![parse_target(t, classes)?],
        None => (0..classes).collect(),
    };
    let sentences = encode_lines(vocab, &eval.lines);
    let run = transfer_all(model, &sentences, &targets, &m, beam_for(&sentences, a.beam))?;
    let mut tsv = String::from("target\tsource\toutput\n");
    for i in 0..run.output.len() {
        tsv.push_str(&format!(
            "{}\t{}\t{}\n",
            run.target[i],
            tsv_field(&eval.lines[run.source[i]]),
            tsv_field(&vocab.decode(&run.output[i]))
        ));
    }
    out.write("transfer.tsv", tsv)?;
    let classifier = train_classifier(
        &train_s,
        train_l,
        vocab.len(),
        ClassifierConfig {
            seed: l.seed,
            ..ClassifierConfig::default()
        },
    )?;
    let report = evaluate_transfer(&run, &sentences, &classifier, config_fingerprint(&out.manifest.config))?;
    out.write("metrics.json", report.to_json()?)?;
    out.write("metrics.csv", report.to_csv())?;
    println!("AC {:.2} BL {:.2}", report.accuracy, report.bleu);
    Ok(())
}

fn cmd_generate(a: &TransferArgs, out: &mut OutputDir) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, &a.common, out)?;
    let (model, vocab) = (&l.ck.model, &l.ck.vocab);
    let eval = eval_set(&a.common, &l.cfg)?;
    let sentences = encode_lines(vocab, &eval.lines);
    let beam = beam_for(&sentences, a.beam);
    let outputs: Vec<Vec<usize>> = match (&a.strategy, &a.target) {
        (None, None) => sentences
            .iter()
            .map(|s| Ok(decode_latent(model, model.encode(s)?.z(), beam)?.tokens))
            .collect::<Result<_>>()?,
        (_, Some(t)) => {
            let train = train_set(&a.common, &l.cfg)?;
            let train_l = train.labels("manipulated generation")?;
            let train_s = encode_lines(vocab, &train.lines);
            let m = manipulation(a.strategy, a.basis.as_deref(), model, &train_s, train_l, l.seed)?;
            let target = parse_target(t, num_classes(train_l))?;
            transfer_all(model, &sentences, &[target], &m, beam)?.output
        }
        (Some(_), None) => bail!("--strategy needs a --target"),
    };
    let mut tsv = String::from("source\toutput\n");
    for (line, o) in eval.lines.iter().zip(&outputs) {
        tsv.push_str(&format!("{}\t{}\n", tsv_field(line), tsv_field(&vocab.decode(o))));
    }
    out.write("generations.tsv", tsv)?;
    Ok(())
}

fn cmd_transition(a: &TransitionArgs, out: &mut OutputDir) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, &a.common, out)?;
    let (model, vocab) = (&l.ck.model, &l.ck.vocab);
    let eval = eval_set(&a.common, &l.cfg)?;
    let sentences = encode_lines(vocab, &eval.lines);
    let max_len = beam_for(&sentences, 1).max_len;
    let mut tsv = String::from("source\toutput\n");
    for (line, s) in eval.lines.iter().zip(&sentences) {
        let (z2, _) = model.encode_unstructured(s)?;
        let d = topic_transition_generate(model, a.from, a.to, a.switch_step, &z2, max_len)?;
        tsv.push_str(&format!("{}\t{}\n", tsv_field(line), tsv_field(&vocab.decode(&d.tokens))));
    }
    out.write("transitions.tsv", tsv)?;
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs, out: &mut OutputDir) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, &a.common, out)?;
    let (model, vocab) = (&l.ck.model, &l.ck.vocab);
    let train = train_set(&a.common, &l.cfg)?;
    let train_l = train.labels("diagnose")?;
    let train_s = encode_lines(vocab, &train.lines);
    let eval = eval_set(&a.common, &l.cfg)?;
    let eval_l = eval.labels("diagnose")?;
    let eval_s = encode_lines(vocab, &eval.lines);
    let m = manipulation(a.strategy, a.basis.as_deref(), model, &train_s, train_l, l.seed)?;
    let corpus = Corpus::new(train_s.clone(), Some(train_l.to_vec()))?;
    let report = shift_diagnosis(model, &corpus, &eval_s, eval_l, num_classes(train_l), &m, a.mixture_size, l.seed)?;
    out.write("nll_shift.csv", report.histogram_csv())?;
    out.write("nll_summary.json", report.summary_json()?)?;
    let mut pairs = String::from("before,after\n");
    for (b, f) in report.before.iter().zip(&report.after) {
        pairs.push_str(&format!("{b:?},{f:?}\n"));
    }
    out.write("nll_samples.csv", pairs)?;

    let stride = train_s.len().div_ceil(a.mapper_points.max(1));
    let picked: Vec<Vec<usize>> = train_s.iter().step_by(stride).cloned().collect();
    let mut codes = latent_codes(model, &picked, LatentPart::Default)?;
    if !model.is_structured() {
        // the baseline is compared on its first z1-sized slice
        let d = model.config().z1_dim;
        codes.iter_mut().for_each(|c| c.truncate(d));
    }
    for &n in &a.intervals {
        let g = mapper(
            &codes,
            MapperParams {
                n_intervals: n,
                overlap: a.overlap,
                ..MapperParams::new(n)
            },
        )?;
        out.write(&format!("mapper_n{n}.json"), g.to_json()?)?;
    }
    if model.is_structured() {
        let k3 = model.config().k == 3;
        let export = simplex_coverage_export(model, &corpus, k3)?;
        out.write("simplex.csv", export.to_csv())?;
        if k3 {
            let cov = grid_coverage(&export.p)?;
            out.write("coverage.json", serde_json::to_string_pretty(&serde_json::json!({ "grid_coverage": cov }))?)?;
        }
    }
    println!("median NLL shift {:.4}", report.median_shift);
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut OutputDir) -> Result<()> {
    let cfg = match &a.checkpoint {
        Some(p) => load_checkpoint(p, &a.common, out)?.cfg,
        None => {
            let cfg = resolve_config(&a.common, false)?;
            out.manifest.config = cfg.to_text();
            out.manifest.seed = cfg.seed;
            cfg
        }
    };
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let ck = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    match a.mode {
        EvalMode::Transfer => {
            let input = a.common.input.as_deref().ok_or_else(|| anyhow!("eval --mode transfer needs --input transfer.tsv"))?;
            let train = train_set(&a.common, &cfg)?;
            let train_l = train.labels("eval")?;
            let vocab = match &ck {
                Some(c) => c.vocab.clone(),
                None => Vocabulary::build(&train.lines, None, 1)?,
            };
            let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
            let mut sources: Vec<Vec<usize>> = Vec::new();
            let mut run = TransferRun {
                source: vec![],
                target: vec![],
                output: vec![],
            };
            for (i, line) in text.lines().enumerate().skip(1) {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    bail!("{}:{}: expected target, source and output columns", input.display(), i + 1);
                }
                let t: usize = cols[0]
                    .parse()
                    .map_err(|_| anyhow!("{}:{}: bad target `{}`", input.display(), i + 1, cols[0]))?;
                run.target.push(t);
                run.source.push(sources.len());
                sources.push(vocab.encode(cols[1]));
                run.output.push(vocab.encode(cols[2]));
            }
            if run.output.is_empty() {
                bail!("{} has no rows", input.display());
            }
            let train_s = encode_lines(&vocab, &train.lines);
            let classifier = train_classifier(
                &train_s,
                train_l,
                vocab.len(),
                ClassifierConfig {
                    seed,
                    ..ClassifierConfig::default()
                },
            )?;
            let report = evaluate_transfer(&run, &sources, &classifier, config_fingerprint(&out.manifest.config))?;
            out.write("metrics.json", report.to_json()?)?;
            out.write("metrics.csv", report.to_csv())?;
            println!("AC {:.2} BL {:.2}", report.accuracy, report.bleu);
        }
        EvalMode::Cluster => {
            let data = match &a.common.input {
                Some(p) => Labeled::read(p, a.common.labels.as_deref())?,
                None => train_set(&a.common, &cfg)?,
            };
            let gold = data.labels("cluster evaluation")?;
            let assignments: Vec<usize> = match &ck {
                Some(c) if c.model.is_structured() => encode_lines(&c.vocab, &data.lines)
                    .iter()
                    .map(|s| {
                        let p = c.model.encode(s)?.p;
                        Ok((0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b }))
                    })
                    .collect::<Result<_>>()?,
                _ => {
                    let vocab = match &ck {
                        Some(c) => c.vocab.clone(),
                        None => Vocabulary::build(&data.lines, None, 1)?,
                    };
                    let table = embeddings(&a.common, &vocab, &cfg)?;
                    let reps = encode_lines(&vocab, &data.lines)
                        .iter()
                        .map(|s| sentence_representation(s, &table))
                        .collect::<cpvae_core::Result<Vec<_>>>()?;
                    kmeans(&reps, num_classes(gold), seed)?.assignments
                }
            };
            let mapping = if a.hungarian { ClusterMapping::Hungarian } else { ClusterMapping::Majority };
            let eval = cluster_metrics(&assignments, gold, mapping)?;
            out.write("cluster_eval.json", serde_json::to_string_pretty(&eval)?)?;
        }
    }
    Ok(())
}
