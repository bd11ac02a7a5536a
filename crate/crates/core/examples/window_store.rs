//! Episodes in, fixed-length windows with return-to-go out.

use dpp_replay::window_store::{discounted_window_return, Episode, ReplayBuffer, Transition};

fn episode(id: u64, rewards: &[f64]) -> dpp_replay::Result<Episode> {
    let n = rewards.len();
    let transitions = rewards
        .iter()
        .enumerate()
        .map(|(t, &r)| Transition {
            state: vec![t as f64 / n as f64, id as f64],
            action: vec![(t % 3) as f64],
            reward: r,
            stage_label: Some((2 * t / n) as u32),
            done: t + 1 == n,
        })
        .collect();
    Episode::new(id, transitions)
}

fn main() -> dpp_replay::Result<()> {
    let gamma = 0.9;
    // Capacity counts transitions; the oldest whole episode is evicted first.
    let mut buffer = ReplayBuffer::new(12, gamma)?;
    buffer.append_episode(episode(0, &[0.0, 0.0, 1.0, 0.0, 2.0])?)?;
    buffer.append_episode(episode(1, &[1.0, 1.0, 1.0])?)?;
    buffer.append_episode(episode(2, &[0.0, 0.0, 0.0, 5.0])?)?;
    println!("{} episodes, {} transitions", buffer.num_episodes(), buffer.len_transitions());

    let h = 3;
    println!("{} windows of length {h}", buffer.window_count(h));
    for i in 0..buffer.window_count(h) {
        let w = buffer.window_at(i, h)?;
        println!(
            "  window {i}: episode {} start {} stage {} rtg {:?} G(w) = {:.3}",
            w.episode_id,
            w.start,
            w.stage_label,
            w.rtg.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            discounted_window_return(&w, gamma)
        );
    }

    // A fourth episode pushes the first one out.
    buffer.append_episode(episode(3, &[0.0, 1.0, 0.0])?)?;
    let ids: Vec<u64> = buffer.episodes().map(|e| e.id).collect();
    println!("after eviction: episodes {ids:?}");

    let mut jsonl = Vec::new();
    buffer.write_jsonl(&mut jsonl)?;
    let restored = ReplayBuffer::read_jsonl(jsonl.as_slice(), 12, gamma)?;
    println!(
        "JSON-lines round trip: {} lines, {} windows restored",
        jsonl.iter().filter(|b| **b == b'\n').count(),
        restored.window_count(h)
    );
    Ok(())
}
