//! Generates a synthetic multi-group dataset, writes it as NDJSON, reads it
//! back and shows how far apart the groups are.

use appa::harness::{generate_dataset, load_dataset, save_dataset, GeneratorSpec};
use appa::metrics::js_reward;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("appa-synthetic-data");
    std::fs::create_dir_all(&dir)?;
    for eta in [0.0, 0.4, 0.8] {
        let spec = GeneratorSpec {
            groups: 4,
            questions: 30,
            heterogeneity: eta,
            seed: 7,
            ..Default::default()
        };
        let data = generate_dataset(&spec)?;
        let path = dir.join(format!("eta{eta}.ndjson"));
        save_dataset(&data, &path)?;
        let back = load_dataset(&path)?;
        let g = back.groups();
        let mut agreement = 0.0;
        let mut pairs = 0;
        for q in back.questions() {
            for a in 0..g.len() {
                for b in a + 1..g.len() {
                    agreement += js_reward(back.target(&g[a], &q.id).unwrap(), back.target(&g[b], &q.id).unwrap())?;
                    pairs += 1;
                }
            }
        }
        println!(
            "heterogeneity {eta}: {} questions, mean pairwise JS agreement {:.4}, written to {}",
            back.questions().len(),
            agreement / pairs as f64,
            path.display()
        );
    }
    Ok(())
}
