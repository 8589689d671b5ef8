//! Generates the synthetic instructional-video corpus and curates it.
//!
//! Shows the task chains, the two observation-window rules on one video, the
//! split sizes, and writes the curated samples as a manifest.

use latent_plan::dataset::{curate_corpus, generate_corpus, read_manifest, split, write_manifest, CorpusConfig, CurationMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = CorpusConfig::default();
    let corpus = generate_corpus(&cfg)?;
    for (task, chain) in corpus.chains.iter().enumerate() {
        println!("task {task}: chain {chain:?}");
    }

    let video = &corpus.videos[0];
    let (first, last) = (video.steps[0].start, video.steps[2].start);
    for mode in [CurationMode::Pdpp, CurationMode::Kepp] {
        let (ws, wg) = mode.windows(first, last);
        println!(
            "{mode}: first action at {first}s -> start [{}, {}), last at {last}s -> goal [{}, {})",
            ws.start, ws.end, wg.start, wg.end
        );
    }

    for horizon in [3, 4] {
        let set = curate_corpus(&corpus, horizon, CurationMode::Pdpp)?;
        let (train, test) = split(&set.samples, 0.7, cfg.seed)?;
        println!("T={horizon}: {} samples, {} train / {} test", set.len(), train.len(), test.len());
    }

    let dir = std::env::temp_dir().join("latent-plan-corpus-example");
    let path = dir.join("niv_t3.manifest.json");
    let set = curate_corpus(&corpus, 3, CurationMode::Pdpp)?;
    write_manifest(&path, &set)?;
    let back = read_manifest(&path)?;
    println!("manifest round trip: {} samples from {}", back.len(), path.display());
    Ok(())
}
