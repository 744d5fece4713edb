//! The metric stack on hand-made inputs: labeler, report metrics against a
//! shuffled baseline, probe-space FID and the VQA rubric.

use mmvq::evalsuite::{extract_labels, fid, report_metrics, vqa_accuracy, vqa_score};
use mmvq::lmcore::split_words;
use mmvq::numcore::rng::rng_from;
use mmvq::synthcorpus::{Corpus, Kind, ReportStyle};
use rand::Rng;

fn words(s: &str) -> Vec<String> {
    split_words(s).into_iter().map(str::to_string).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::generate(300, 0.2, 5)?;
    let study = corpus.records.iter().find(|r| !r.is_normal()).expect("an abnormal study");
    let report = study.report(ReportStyle::Verbose);
    println!("{report}");
    let labels = extract_labels(report);
    for k in Kind::ALL {
        println!("  {:<13} {:?}", k.name(), labels.state(k));
    }

    let refs: Vec<String> = corpus.test().map(|r| r.report(ReportStyle::Concise).to_string()).collect();
    let mut shuffled = refs.clone();
    shuffled.rotate_left(1);
    for (name, generated) in [("copy", &refs), ("shifted", &shuffled)] {
        let m = report_metrics(generated, &refs, words);
        println!(
            "{name:<8} micro-F1 {:.3} macro-AUROC {:.3} Jaccard {:.3} BLEU-4 {:.3} ROUGE-L {:.3}",
            m.f1.micro, m.auroc.macro_, m.jaccard.micro, m.bleu[3], m.rouge_l
        );
    }

    let mut rng = rng_from(2);
    let mut cloud = |shift: f64| -> Vec<Vec<f64>> { (0..500).map(|_| (0..4).map(|_| rng.random::<f64>() + shift).collect()).collect() };
    let (a, b, c) = (cloud(0.0), cloud(0.0), cloud(0.5));
    println!("FID same distribution {:.4}, shifted by 0.5 {:.4}", fid(&a, &b)?.value, fid(&a, &c)?.value);

    let items: Vec<(String, _)> = corpus
        .test()
        .flat_map(|r| r.vqa.iter())
        .map(|qa| {
            let guess = if qa.question.starts_with("Is there") { "Yes." } else { "Left." };
            (guess.to_string(), qa.facts)
        })
        .collect();
    let acc = vqa_accuracy(&items);
    println!("constant-answer VQA: all {:.3} presence {:.3} location {:.3} severity {:.3}", acc.all, acc.presence, acc.location, acc.severity);
    let qa = &study.vqa[0];
    println!("\"{}\" answered with the reference scores {}", qa.question, vqa_score(&qa.answer, &qa.facts));
    Ok(())
}
