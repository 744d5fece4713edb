//! Trains the probe and a short-budget VQ tokenizer, then tokenizes,
//! reconstructs and scores a held-out image set.
//!
//! cargo run --release --example vq_tokenizer -- [epochs]

use mmvq::cli::pipeline::recon_auroc;
use mmvq::synthcorpus::{write_pgm, Corpus, Image};
use mmvq::vqtok::{train_probe, train_vq, ProbeTrainConfig, VqTrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let corpus = Corpus::generate(1000, 0.2, 11)?;

    let (probe, report) = train_probe(&corpus, &ProbeTrainConfig { epochs: 4, ..ProbeTrainConfig::default() })?;
    for (kind, auc) in &report.test_auroc {
        println!("probe test AUROC {kind:<13} {auc:.3}");
    }

    let cfg = VqTrainConfig { epochs, ..VqTrainConfig::default() };
    let (vq, log) = train_vq(&corpus, &cfg, Some(&probe))?;
    for e in &log.epochs {
        println!("vq epoch {}: l1 {:.4} cip {:.3} codes used {}/{}", e.epoch, e.l1, e.cip, e.used_entries, cfg.model.k_img);
    }

    let test: Vec<&Image> = corpus.test().map(|r| &r.image).take(4).collect();
    let tokens = vq.encode(&test)?;
    println!("first image -> {} tokens: {:?}...", tokens[0].0.len(), &tokens[0].0[..12]);
    let out = std::env::temp_dir().join("mmvq_vq_tokenizer");
    std::fs::create_dir_all(&out)?;
    for (i, (img, rec)) in test.iter().zip(vq.decode(&tokens)?).enumerate() {
        write_pgm(&out.join(format!("{i}_original.pgm")), img)?;
        write_pgm(&out.join(format!("{i}_decoded.pgm")), &rec)?;
    }
    println!("images in {}", out.display());

    for row in recon_auroc(&corpus, &vq, &probe)? {
        println!("{:<13} original {:.3} reconstructed {:.3} ratio {:.3}", row.kind, row.original, row.reconstructed, row.ratio);
    }
    Ok(())
}
