//! Tokenized training examples, the response mask and the two objectives.

use serde::{Deserialize, Serialize};

use super::tasks::{PromptRecord, TaskKind};
use super::template::END_KEY;
use super::InstructError;
use crate::lmcore::vocab::NEWLINE;
use crate::lmcore::{LmError, TransformerLM, Vocab, EOS, UNK};
use crate::numcore::{Graph, Real, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub ids: Vec<usize>,
    pub loss_mask: Vec<u8>,
    /// Instruction + input tokens.
    pub x_len: usize,
    /// Response tokens, excluding EOS.
    pub y_len: usize,
    pub task: TaskKind,
    pub study_id: Option<String>,
}

impl TokenizedExample {
    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Index of the first response token (the position after the response key line).
    pub fn response_start(&self) -> usize {
        self.loss_mask.iter().position(|&m| m == 1).unwrap_or(self.ids.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// NLL of response tokens only.
    Instruct,
    /// NLL of every position after the first.
    Joint,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Instruct => "instruct",
            Objective::Joint => "joint",
        }
    }
}

fn encode_strict(vocab: &Vocab, text: &str, study: &Option<String>) -> Result<Vec<usize>, InstructError> {
    let ids = vocab.encode(text);
    if let Some(p) = ids.iter().position(|&i| i == UNK) {
        let word = crate::lmcore::split_words(text)[p].to_string();
        return Err(InstructError::UnknownWord { word, study_id: study.clone() });
    }
    Ok(ids)
}

/// Token ids of the inference prompt: the template through the response key, then a newline.
pub fn prompt_ids(record: &PromptRecord, vocab: &Vocab) -> Result<Vec<usize>, InstructError> {
    let mut ids = encode_strict(vocab, &record.render_prompt(), &record.source_study)?;
    ids.push(vocab.id(NEWLINE).ok_or_else(|| InstructError::Template("newline missing from vocabulary".into()))?);
    Ok(ids)
}

/// `prompt ids ++ response ++ EOS ++ "\n\n### End"`; mask covers response and EOS.
pub fn build_example(record: &PromptRecord, vocab: &Vocab, context: usize) -> Result<TokenizedExample, InstructError> {
    record.validate()?;
    let response = record.response.render();
    let y = encode_strict(vocab, &response, &record.source_study)?;
    if y.is_empty() {
        return Err(InstructError::EmptyResponse { study_id: record.source_study.clone() });
    }
    let mut ids = prompt_ids(record, vocab)?;
    let x_len = encode_strict(vocab, &record.instruction, &record.source_study)?.len()
        + encode_strict(vocab, &record.input.render(), &record.source_study)?.len();
    let start = ids.len();
    ids.extend_from_slice(&y);
    ids.push(EOS);
    ids.extend(encode_strict(vocab, &format!("\n\n{END_KEY}"), &record.source_study)?);
    if ids.len() > context {
        return Err(InstructError::TooLong { len: ids.len(), max: context, study_id: record.source_study.clone() });
    }
    let mut loss_mask = vec![0u8; ids.len()];
    loss_mask[start..start + y.len() + 1].iter_mut().for_each(|m| *m = 1);
    Ok(TokenizedExample { ids, loss_mask, x_len, y_len: y.len(), task: record.task, study_id: record.source_study.clone() })
}

/// Teacher-forcing inputs, targets and per-target weights for one example.
pub fn targets<T: Real>(ex: &TokenizedExample, objective: Objective) -> (&[usize], Vec<usize>, Vec<T>) {
    let n = ex.ids.len();
    let inputs = &ex.ids[..n - 1];
    let tg = ex.ids[1..].to_vec();
    let w = match objective {
        Objective::Instruct => ex.loss_mask[1..].iter().map(|&m| if m == 1 { T::one() } else { T::zero() }).collect(),
        Objective::Joint => vec![T::one(); n - 1],
    };
    (inputs, tg, w)
}

pub struct BatchLoss {
    /// Sum divided by the number of weighted targets.
    pub mean: Var,
    pub sum: f64,
    pub count: usize,
    /// Per-example (sum, count).
    pub per_example: Vec<(f64, usize)>,
}

/// Packs `examples` into one forward pass and builds the masked mean loss.
pub fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    model: &TransformerLM<T>,
    examples: &[&TokenizedExample],
    objective: Objective,
) -> Result<BatchLoss, LmError> {
    let mut seqs = Vec::with_capacity(examples.len());
    let mut all_t = Vec::new();
    let mut all_w = Vec::new();
    let mut bounds = Vec::with_capacity(examples.len());
    for ex in examples {
        let (inp, t, w) = targets::<T>(ex, objective);
        seqs.push(inp);
        bounds.push((all_t.len(), t.len()));
        all_t.extend(t);
        all_w.extend(w);
    }
    let logits = model.forward_packed(g, &seqs)?;
    let ce = g.cross_entropy(logits, &all_t, &all_w);
    let nll = g.row_nll(ce);
    let per_example: Vec<(f64, usize)> = bounds
        .iter()
        .map(|&(s, l)| {
            let sum = nll[s..s + l].iter().map(|v| v.as_f64()).sum();
            let count = all_w[s..s + l].iter().filter(|&&w| w != T::zero()).count();
            (sum, count)
        })
        .collect();
    let count: usize = per_example.iter().map(|p| p.1).sum();
    let sum = g.value(ce).item().as_f64();
    let mean = g.scale(ce, T::one() / T::f(count.max(1) as f64));
    Ok(BatchLoss { mean, sum, count, per_example })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub mean: f64,
    pub sum: f64,
    pub count: usize,
}

fn loss_value<T: Real>(model: &TransformerLM<T>, ex: &TokenizedExample, objective: Objective) -> Result<LossValue, LmError> {
    let mut g = Graph::with_params(&model.params);
    let b = batch_loss(&mut g, model, &[ex], objective)?;
    Ok(LossValue { mean: b.sum / b.count.max(1) as f64, sum: b.sum, count: b.count })
}

/// Response-only NLL under teacher forcing.
pub fn instruct_loss<T: Real>(model: &TransformerLM<T>, ex: &TokenizedExample) -> Result<LossValue, LmError> {
    loss_value(model, ex, Objective::Instruct)
}

/// Full-sequence NLL (every position after the first).
pub fn joint_loss<T: Real>(model: &TransformerLM<T>, ex: &TokenizedExample) -> Result<LossValue, LmError> {
    loss_value(model, ex, Objective::Joint)
}

pub fn write_jsonl(path: &std::path::Path, examples: &[TokenizedExample]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, ex)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn read_jsonl(path: &std::path::Path) -> std::io::Result<Vec<TokenizedExample>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(std::io::Error::other)).collect()
}
