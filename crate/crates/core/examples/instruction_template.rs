//! Renders one prompt per task, tokenizes it with the response mask and
//! samples the stage-1 and stage-2 task mixes.

use mmvq::instructset::{
    build_example, build_text_vocab, nl_if_pairs, tasks, MixSchedule, MixStream, Stage, StudySource, TaskKind, C2R_INSTRUCTIONS,
    R2C_INSTRUCTIONS,
};
use mmvq::numcore::rng::rng_from;
use mmvq::synthcorpus::{Corpus, ReportStyle};
use mmvq::vqtok::ImageTokens;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::generate(120, 0.2, 4)?;
    let vocab = build_text_vocab().with_images(128);
    let study = &corpus.records[0];
    let tokens = ImageTokens((0..64).map(|i| (i * 11) % 128).collect());
    let nl = nl_if_pairs(corpus.train(), 1, 5);

    let records = [
        tasks::c2r_record(study, &tokens, ReportStyle::Concise, C2R_INSTRUCTIONS[3]),
        tasks::r2c_record(study, &tokens, ReportStyle::Verbose, R2C_INSTRUCTIONS[1]),
        tasks::vqa_record(study, &tokens, 0),
        nl[0].record(),
    ];
    for rec in &records {
        let ex = build_example(rec, &vocab, 320)?;
        println!("==== {} ({} tokens, {} in the loss) ====", rec.task.name(), ex.ids.len(), ex.masked_count());
        println!("{}", rec.render());
        let start = ex.response_start();
        println!("-- loss starts at token {start}: {:?}", vocab.decode(&ex.ids[start..(start + 6).min(ex.ids.len())]));
    }

    let sources: Vec<StudySource> =
        corpus.train().map(|r| StudySource { record: r.clone(), tokens: tokens.clone() }).collect();
    let schedule = MixSchedule::default();
    for stage in [Stage::One, Stage::Two] {
        let stream = MixStream::new(&sources, &nl, &schedule, stage, 9)?;
        let mut counts = [0usize; 4];
        let mut rng = rng_from(1);
        for _ in 0..5000 {
            counts[stream.draw_kind(&mut rng).mix_index()] += 1;
        }
        let shares: Vec<String> = TaskKind::MIX_ORDER
            .iter()
            .map(|k| format!("{} {:.1}%", k.name(), 100.0 * counts[k.mix_index()] as f64 / 5000.0))
            .collect();
        println!("stage {} mix over {} studies: {}", stage.number(), stream.pool_size(), shares.join(", "));
    }
    Ok(())
}
