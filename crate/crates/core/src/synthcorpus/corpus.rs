//! Corpus sampling, splitting and on-disk persistence.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::finding::{Finding, Kind, Severity};
use super::render::{render_view, Image, View};
use super::report::{render_report, ReportStyle};
use super::vqa::{gen_vqa, QaPair};
use super::CorpusError;
use crate::numcore::rng::{derive_seed, stream_rng};

pub const GRAMMAR_VERSION: &str = "cxr-grammar-1";
pub const NO_FINDING_RATE: f64 = 0.35;
pub const LATERAL_RATE: f64 = 0.15;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "meta.json";
const IMAGE_MAGIC: &[u8; 4] = b"PXR1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    pub seed: u64,
    pub view: View,
    pub split: Split,
    pub findings: Vec<Finding>,
    pub report_verbose: String,
    pub report_concise: String,
    pub vqa: Vec<QaPair>,
    pub image: Image,
}

impl StudyRecord {
    pub fn report(&self, style: ReportStyle) -> &str {
        match style {
            ReportStyle::Verbose => &self.report_verbose,
            ReportStyle::Concise => &self.report_concise,
        }
    }

    pub fn is_normal(&self) -> bool {
        self.findings.iter().all(|f| f.kind == Kind::NoFinding)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    study_id: String,
    seed: u64,
    view: View,
    split: Split,
    findings: Vec<Finding>,
    report_verbose: String,
    report_concise: String,
    vqa: Vec<QaPair>,
    grammar_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub generator_seed: u64,
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_fraction: f64,
    pub grammar_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub records: Vec<StudyRecord>,
}

/// Draws a study's findings from the documented prior.
pub fn sample_findings(rng: &mut crate::numcore::rng::Rng) -> Vec<Finding> {
    if rng.random_bool(NO_FINDING_RATE) {
        return vec![Finding::no_finding()];
    }
    let count = rng.random_range(1..=2);
    let mut kinds = Kind::PATHOLOGIES.to_vec();
    kinds.shuffle(rng);
    let mut out: Vec<Finding> = kinds[..count]
        .iter()
        .map(|&kind| {
            let side = *kind.allowed_sides().choose(rng).expect("sides");
            let severity = *Severity::GRADED.choose(rng).expect("severities");
            Finding { kind, side, severity }
        })
        .collect();
    out.sort_by_key(|f| f.kind);
    out
}

pub fn study_id(index: usize) -> String {
    format!("s{:05}", index + 1)
}

/// Generates one study from its own seed.
pub fn make_record(study_id: String, seed: u64, split: Split) -> StudyRecord {
    let mut rng = stream_rng(seed, "prior", 0);
    let findings = sample_findings(&mut rng);
    let view = if rng.random_bool(LATERAL_RATE) { View::Lateral } else { View::Frontal };
    StudyRecord {
        image: render_view(&findings, view, seed),
        report_verbose: render_report(&findings, ReportStyle::Verbose, seed),
        report_concise: render_report(&findings, ReportStyle::Concise, seed),
        vqa: gen_vqa(&findings, seed),
        study_id,
        seed,
        view,
        split,
        findings,
    }
}

impl Corpus {
    /// In-memory corpus; splits are a seeded shuffle of record indices.
    pub fn generate(n_records: usize, test_fraction: f64, seed: u64) -> Result<Corpus, CorpusError> {
        if n_records < 10 {
            return Err(CorpusError::TooSmall(n_records));
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(CorpusError::Config(format!("test_fraction {test_fraction} outside [0, 1)")));
        }
        let n_test = (n_records as f64 * test_fraction).round() as usize;
        let mut order: Vec<usize> = (0..n_records).collect();
        order.shuffle(&mut stream_rng(seed, "split", 0));
        let mut split = vec![Split::Train; n_records];
        for &i in &order[..n_test] {
            split[i] = Split::Test;
        }
        let records = (0..n_records)
            .map(|i| make_record(study_id(i), derive_seed(seed, "study", i as u64), split[i]))
            .collect();
        Ok(Corpus {
            meta: CorpusMeta {
                generator_seed: seed,
                n_records,
                n_train: n_records - n_test,
                n_test,
                test_fraction,
                grammar_version: GRAMMAR_VERSION.into(),
            },
            records,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &StudyRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn train(&self) -> impl Iterator<Item = &StudyRecord> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &StudyRecord> {
        self.split(Split::Test)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| CorpusError::io(&images, e))?;
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = ManifestLine {
                study_id: r.study_id.clone(),
                seed: r.seed,
                view: r.view,
                split: r.split,
                findings: r.findings.clone(),
                report_verbose: r.report_verbose.clone(),
                report_concise: r.report_concise.clone(),
                vqa: r.vqa.clone(),
                grammar_version: self.meta.grammar_version.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| CorpusError::parse(&path, e))?;
            w.write_all(b"\n").map_err(|e| CorpusError::io(&path, e))?;
            write_image(&images.join(format!("{}.f32", r.study_id)), &r.image)?;
        }
        w.flush().map_err(|e| CorpusError::io(&path, e))?;
        let meta_path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| CorpusError::parse(&meta_path, e))?;
        fs::write(&meta_path, meta + "\n").map_err(|e| CorpusError::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| CorpusError::io(&meta_path, e))?;
        let meta: CorpusMeta = serde_json::from_str(&text).map_err(|e| CorpusError::parse(&meta_path, e))?;
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut records = Vec::with_capacity(meta.n_records);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| CorpusError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: ManifestLine = serde_json::from_str(&line).map_err(|e| CorpusError::parse(&path, e))?;
            if m.grammar_version != meta.grammar_version {
                return Err(CorpusError::Format {
                    path: path.clone(),
                    msg: format!("grammar version {} != {}", m.grammar_version, meta.grammar_version),
                });
            }
            super::finding::validate_findings(&m.findings)?;
            let image = read_image(&dir.join("images").join(format!("{}.f32", m.study_id)))?;
            records.push(StudyRecord {
                study_id: m.study_id,
                seed: m.seed,
                view: m.view,
                split: m.split,
                findings: m.findings,
                report_verbose: m.report_verbose,
                report_concise: m.report_concise,
                vqa: m.vqa,
                image,
            });
        }
        if records.len() != meta.n_records {
            return Err(CorpusError::Format {
                path,
                msg: format!("{} records, meta says {}", records.len(), meta.n_records),
            });
        }
        Ok(Corpus { meta, records })
    }
}

/// Generates and, if `out_dir` is given, persists a corpus.
pub fn build_corpus(n_records: usize, test_fraction: f64, seed: u64, out_dir: Option<&Path>) -> Result<Corpus, CorpusError> {
    let corpus = Corpus::generate(n_records, test_fraction, seed)?;
    if let Some(dir) = out_dir {
        corpus.save(dir)?;
    }
    Ok(corpus)
}

pub fn encode_image(img: &Image) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * img.data.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&(img.height as u16).to_le_bytes());
    buf.extend_from_slice(&(img.width as u16).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image, CorpusError> {
    let bad = |msg: &str| CorpusError::Format { path: path.to_path_buf(), msg: msg.into() };
    if bytes.len() < 12 || &bytes[..4] != IMAGE_MAGIC {
        return Err(bad("missing PXR1 header"));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * h * w {
        return Err(bad(&format!("expected {} pixel bytes, found {}", 4 * h * w, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Image::new(h, w, data))
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), CorpusError> {
    fs::write(path, encode_image(img)).map_err(|e| CorpusError::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Image, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode_image(&bytes, path)
}

/// 8-bit binary PGM preview.
pub fn write_pgm(path: &Path, img: &Image) -> Result<(), CorpusError> {
    let mut buf = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf).map_err(|e| CorpusError::io(path, e))
}
