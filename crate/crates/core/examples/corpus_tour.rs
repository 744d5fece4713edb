//! Generates a small synthetic corpus and prints a few studies.
//!
//! cargo run --example corpus_tour -- [n_records] [out_dir]

use mmvq::synthcorpus::{build_corpus, write_pgm, ReportStyle, View};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mmvq_corpus_tour"));

    let corpus = build_corpus(n, 0.2, 7, Some(&out))?;
    let laterals = corpus.records.iter().filter(|r| r.view == View::Lateral).count();
    let normal = corpus.records.iter().filter(|r| r.is_normal()).count();
    println!("{} studies ({} train, {} test), {laterals} lateral, {normal} normal", n, corpus.train().count(), corpus.test().count());

    for r in corpus.records.iter().take(3) {
        println!("\n{} [{:?}, {:?}]", r.study_id, r.view, r.split);
        for f in &r.findings {
            println!("  finding: {} {} {}", f.kind.name(), f.side.word(), f.severity.word());
        }
        println!("  verbose: {}", r.report(ReportStyle::Verbose));
        println!("  concise: {}", r.report(ReportStyle::Concise));
        for qa in r.vqa.iter().take(3) {
            println!("  Q: {}  A: {}", qa.question, qa.answer);
        }
        let pgm = out.join(format!("{}.pgm", r.study_id));
        write_pgm(&pgm, &r.image)?;
        println!("  image: {}", pgm.display());
    }
    println!("\ncorpus written to {}", out.display());
    Ok(())
}
