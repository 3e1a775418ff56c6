//! Desk-scale workflows shared by the command line and the acceptance suite.

use crate::diagnostics::{nll_shift_report, posterior, fit_aggregated_posterior, LatentPart, NllShiftReport};
use crate::error::{Error, Result};
use crate::eval::{bleu, ClassMetric, Classifier, MetricReport};
use crate::generate::{
    baseline_identify_dim, baseline_manipulate, decode_latent, direction_toward, transfer_latent, BasisAssignment,
    BeamConfig, DimChoice, DimStats, Strategy,
};
use crate::model::CpVaeModel;
use crate::text::toy::{self, synthetic_embeddings, LabeledLines};
use crate::text::{Corpus, EmbeddingTable, Vocabulary};

/// Generation length cap for the toy corpora.
pub const TOY_MAX_LEN: usize = 20;

/// Templated training and held-out corpora with their vocabulary and
/// synthetic word vectors. `agnews` selects the topic corpus.
pub struct ToyData {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub train: LabeledLines,
    pub heldout: LabeledLines,
}

impl ToyData {
    pub fn new(dataset: &str, embed_dim: usize) -> Result<Self> {
        let make = if dataset == "agnews" { toy::topic_corpus } else { toy::sentiment_corpus };
        let train = make(toy::TRAIN_SIZE, toy::TRAIN_SEED);
        let heldout = make(toy::HELDOUT_SIZE, toy::HELDOUT_SEED);
        let vocab = Vocabulary::build(&train.lines, None, 1)?;
        let table = synthetic_embeddings(&vocab, embed_dim, toy::EMBED_SEED)?;
        Ok(Self {
            vocab,
            table,
            train,
            heldout,
        })
    }

    pub fn train_corpus(&self) -> Result<Corpus> {
        Corpus::from_lines(&self.train.lines, &self.vocab, Some(self.train.labels.clone()))
    }

    pub fn train_sentences(&self) -> Vec<Vec<usize>> {
        encode_lines(&self.vocab, &self.train.lines)
    }

    pub fn heldout_sentences(&self) -> Vec<Vec<usize>> {
        encode_lines(&self.vocab, &self.heldout.lines)
    }
}

pub fn encode_lines<S: AsRef<str>>(vocab: &Vocabulary, lines: &[S]) -> Vec<Vec<usize>> {
    lines.iter().map(|l| vocab.encode(l.as_ref())).collect()
}

/// How a sentence's code is moved toward a target class.
#[derive(Clone, Debug, PartialEq)]
pub enum Manipulation {
    /// CP-VAE: `z1` replaced by the target's basis vector.
    Vertex(BasisAssignment),
    /// Baseline: one latent dimension moved by the strategy.
    Dimension {
        strategy: Strategy,
        choice: DimChoice,
        stats: DimStats,
    },
}

/// Posterior means of the chosen latent part.
pub fn latent_codes(model: &CpVaeModel, sentences: &[Vec<usize>], part: LatentPart) -> Result<Vec<Vec<f64>>> {
    sentences.iter().map(|s| posterior(model, s, part).map(|(mu, _)| mu)).collect()
}

/// Fits the baseline's sentiment dimension and per-dimension statistics on
/// labelled training sentences.
pub fn dimension_manipulation(
    model: &CpVaeModel,
    sentences: &[Vec<usize>],
    labels: &[usize],
    strategy: Strategy,
) -> Result<Manipulation> {
    if model.is_structured() {
        return Err(Error::usage("dimension strategies apply to the baseline model only"));
    }
    let codes = latent_codes(model, sentences, LatentPart::Z2)?;
    let stats = DimStats::from_codes(&codes)?;
    let choice = baseline_identify_dim(&codes, labels, &stats.mean)?;
    Ok(Manipulation::Dimension { strategy, choice, stats })
}

/// Full decoder input for `tokens` moved toward `target`.
pub fn manipulated_latent(model: &CpVaeModel, tokens: &[usize], target: usize, m: &Manipulation) -> Result<Vec<f64>> {
    match m {
        Manipulation::Vertex(basis) => transfer_latent(model, tokens, basis.basis_for(target)?),
        Manipulation::Dimension { strategy, choice, stats } => {
            if target > 1 {
                return Err(Error::usage("dimension strategies support two classes only"));
            }
            let (mu, _) = model.encode_unstructured(tokens)?;
            baseline_manipulate(&mu, choice.dim, *strategy, direction_toward(target, choice), stats)
        }
    }
}

/// The part of [`manipulated_latent`] the aggregated posterior is fitted
/// over: `z1` for CP-VAE, the whole code for the baseline.
pub fn manipulated_code(model: &CpVaeModel, tokens: &[usize], target: usize, m: &Manipulation) -> Result<Vec<f64>> {
    let z = manipulated_latent(model, tokens, target, m)?;
    Ok(match m {
        Manipulation::Vertex(_) => z[..model.config().z1_dim].to_vec(),
        Manipulation::Dimension { .. } => z,
    })
}

/// Every sentence transferred to each of `targets`, grouped by target.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferRun {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub output: Vec<Vec<usize>>,
}

pub fn transfer_all(
    model: &CpVaeModel,
    sentences: &[Vec<usize>],
    targets: &[usize],
    m: &Manipulation,
    beam: BeamConfig,
) -> Result<TransferRun> {
    let mut run = TransferRun {
        source: Vec::new(),
        target: Vec::new(),
        output: Vec::new(),
    };
    for &target in targets {
        for (i, s) in sentences.iter().enumerate() {
            let z = manipulated_latent(model, s, target, m)?;
            run.output.push(decode_latent(model, z, beam)?.tokens);
            run.source.push(i);
            run.target.push(target);
        }
    }
    Ok(run)
}

/// AC against the targets and BL against the sources, overall and per target.
pub fn evaluate_transfer(
    run: &TransferRun,
    sentences: &[Vec<usize>],
    classifier: &Classifier,
    fingerprint: String,
) -> Result<MetricReport> {
    let refs: Vec<Vec<usize>> = run.source.iter().map(|&i| sentences[i].clone()).collect();
    let accuracy = classifier.accuracy(&run.output, &run.target)?;
    let bl = bleu(&run.output, &refs)?;
    let classes = run.target.iter().max().map_or(0, |m| m + 1);
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let idx: Vec<usize> = (0..run.target.len()).filter(|&i| run.target[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let out: Vec<Vec<usize>> = idx.iter().map(|&i| run.output[i].clone()).collect();
        let r: Vec<Vec<usize>> = idx.iter().map(|&i| refs[i].clone()).collect();
        per_class.push(ClassMetric {
            class: c,
            count: idx.len(),
            accuracy: classifier.accuracy(&out, &vec![c; idx.len()])?,
            bleu: bleu(&out, &r)?,
        });
    }
    MetricReport::new(accuracy, bl, per_class, fingerprint)
}

/// NLL of held-out codes before and after moving each sentence to the next
/// class (`(label + 1) mod classes`), under the aggregated posterior of
/// `mixture_size` training sentences.
#[allow(clippy::too_many_arguments)]
pub fn shift_diagnosis(
    model: &CpVaeModel,
    train: &Corpus,
    sentences: &[Vec<usize>],
    labels: &[usize],
    num_classes: usize,
    m: &Manipulation,
    mixture_size: usize,
    seed: u64,
) -> Result<NllShiftReport> {
    if sentences.len() != labels.len() {
        return Err(Error::usage("sentences and labels differ in length"));
    }
    let mixture = fit_aggregated_posterior(model, train, mixture_size.min(train.len()), seed, LatentPart::Default)?;
    let before = latent_codes(model, sentences, LatentPart::Default)?;
    let after = sentences
        .iter()
        .zip(labels)
        .map(|(s, &l)| manipulated_code(model, s, (l + 1) % num_classes, m))
        .collect::<Result<Vec<_>>>()?;
    nll_shift_report(&mixture, &before, &after)
}
