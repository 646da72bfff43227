//! Collect a mixed corpus on the reach task, split it by return and round-trip it through
//! the binary format.

use adrbc::data::{load_dataset, obs_stats, save_dataset, split_by_return};
use adrbc::envs::{generate_corpus, CorpusSpec, Task};
use adrbc::Result;

fn main() -> Result<()> {
    let spec = CorpusSpec::parse("scripted-expert:5;noisy-expert(0.5):50;random:20")?;
    let mixed = generate_corpus(Task::PointMass2d, &spec, 7)?;
    println!("{} trajectories, {} transitions", mixed.trajectories().len(), mixed.num_transitions());

    let (demos, rest) = split_by_return(&mixed, 5)?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!("top-5 mean return {:.2}, rest {:.2}", mean(demos.returns()), mean(rest.returns()));

    let stats = obs_stats(&mixed)?;
    println!("observation mean {:?}", stats.mean);

    let dir = std::env::temp_dir().join("adrbc-datasets-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("mixed.adrb");
    save_dataset(&mixed, &path)?;
    let back = load_dataset(&path)?;
    println!("reloaded {} ({} bytes), identical: {}", path.display(), std::fs::metadata(&path)?.len(), back == mixed);
    Ok(())
}
