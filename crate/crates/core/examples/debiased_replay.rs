//! Mixed prioritised/uniform batches whose weights undo the bias.

use dpp_replay::replay::{mixed_sample, normalize_weights, WeightMode};

fn main() -> dpp_replay::Result<()> {
    let buffer_size = 50;
    let selected = [3, 17, 29, 41];
    let batch = mixed_sample(&selected, buffer_size, 10, 0.7, 42)?;
    batch.write_csv(std::io::stdout().lock())?;

    // f(i) = i: the uniform mean over the buffer is 24.5.
    let truth = (buffer_size - 1) as f64 / 2.0;
    let (mut plain, mut weighted) = (0.0, 0.0);
    let rounds = 20_000;
    for r in 0..rounds {
        let b = normalize_weights(mixed_sample(&selected, buffer_size, 10, 0.7, r)?, WeightMode::Raw);
        for e in &b.entries {
            plain += e.window_index as f64;
            weighted += e.weight * e.window_index as f64;
        }
    }
    let n = (rounds * 10) as f64;
    println!("\nuniform mean of f   {truth:.3}");
    println!("unweighted estimate {:.3}  (biased toward the selected windows)", plain / n);
    println!("weighted estimate   {:.3}", weighted / n);

    let mean_one = normalize_weights(batch, WeightMode::MeanOne);
    let w = mean_one.weights();
    println!("MEAN_ONE weights average {:.3}", w.iter().sum::<f64>() / w.len() as f64);
    Ok(())
}
