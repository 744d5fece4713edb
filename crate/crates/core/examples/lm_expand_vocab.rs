//! Builds the text model, appends image tokens to its vocabulary and shows
//! that text behaviour is unchanged, then decodes under both constraints.

use mmvq::instructset::{build_text_vocab, prompt_ids, tasks, C2R_INSTRUCTIONS, R2C_INSTRUCTIONS};
use mmvq::lmcore::{Constraint, LmConfig, SamplerConfig, TransformerLM};
use mmvq::synthcorpus::{Corpus, ReportStyle};
use mmvq::vqtok::ImageTokens;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = TransformerLM::<f32>::new(LmConfig::default(), build_text_vocab(), 1);
    println!("text vocabulary: {} tokens, {} parameters", text.vocab.k_text(), text.params.numel());

    let mut lm = text.clone();
    lm.expand_vocab(128, 2)?;
    println!("expanded: {} tokens ({} image), {} parameters", lm.vocab.total(), lm.vocab.k_img, lm.params.numel());

    let corpus = Corpus::generate(20, 0.2, 3)?;
    let study = &corpus.records[0];
    let ids = text.vocab.encode(study.report(ReportStyle::Concise));
    let (a, b) = (text.forward(&ids)?, lm.forward(&ids)?);
    let kt = text.vocab.k_text();
    let same = (0..ids.len()).all(|t| a.row(t).iter().zip(&b.row(t)[..kt]).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("text logits bit-identical after expansion: {same}");

    let tokens = ImageTokens((0..64).map(|i| (i * 37) % 128).collect());
    println!("image span: {}...", &mmvq::lmcore::Vocab::image_span(&tokens)[..40]);
    let back = lm.vocab.image_tokens_from_ids(&lm.vocab.ids_from_image_tokens(&tokens)?)?;
    println!("id round trip: {}", back == tokens);

    // Untrained weights, so the content is noise; the constraints still hold.
    let c2r = tasks::c2r_record(study, &tokens, ReportStyle::Concise, C2R_INSTRUCTIONS[0]);
    let g = lm.sample(&prompt_ids(&c2r, &lm.vocab)?, &SamplerConfig::greedy(12, Constraint::TextOnly), 0)?;
    println!("text-only decode: {:?} ({:?})", lm.vocab.decode(&g.ids), g.stop);
    let r2c = tasks::r2c_record(study, &tokens, ReportStyle::Concise, R2C_INSTRUCTIONS[0]);
    let g = lm.sample(&prompt_ids(&r2c, &lm.vocab)?, &SamplerConfig::greedy(67, Constraint::Image { d_z: 64 }), 0)?;
    let span = lm.vocab.image_tokens_from_ids(&g.ids[1..65])?;
    println!("image decode: {} tokens between markers, stop {:?}", span.0.len(), g.stop);
    Ok(())
}
