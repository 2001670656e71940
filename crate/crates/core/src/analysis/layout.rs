//! Fruchterman-Reingold force-directed layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ExtractedGraph;

pub const DEFAULT_LAYOUT_ITERATIONS: usize = 500;
const MIN_DISTANCE: f64 = 0.01;
const INITIAL_TEMPERATURE: f64 = 0.1;

/// Positions for every node of `graph`, centred on the origin and scaled so the
/// largest coordinate magnitude is 1.
///
/// Ideal edge length is `√(1/N)`. Repulsion `k²/d` acts between all pairs;
/// attraction `w·d²/k` acts along edges, with weights normalized by the
/// largest weight. Step length is capped by a temperature that cools linearly
/// to zero.
pub fn force_layout(graph: &ExtractedGraph, iterations: usize, seed: u64) -> Vec<[f64; 2]> {
    let n = graph.num_nodes();
    if n <= 1 {
        return vec![[0.0, 0.0]; n];
    }
    let max_w = graph.edge_weights.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let weight = |i: usize, j: usize| if max_w > 0.0 { graph.edge_weights[i][j] / max_w } else { 0.0 };
    let k = (1.0 / n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();

    for it in 0..iterations {
        let temperature = INITIAL_TEMPERATURE * (1.0 - it as f64 / iterations as f64);
        let mut disp = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let delta = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]];
                let dist = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt().max(MIN_DISTANCE);
                let force = k * k / dist - weight(i, j) * dist * dist / k;
                disp[i][0] += delta[0] / dist * force;
                disp[i][1] += delta[1] / dist * force;
            }
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt().max(MIN_DISTANCE);
            let step = len.min(temperature) / len;
            p[0] += d[0] * step;
            p[1] += d[1] * step;
        }
    }

    let centroid = [pos.iter().map(|p| p[0]).sum::<f64>() / n as f64, pos.iter().map(|p| p[1]).sum::<f64>() / n as f64];
    for p in &mut pos {
        p[0] -= centroid[0];
        p[1] -= centroid[1];
    }
    let scale = pos.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(0.0f64, f64::max);
    if scale > 0.0 {
        for p in &mut pos {
            p[0] /= scale;
            p[1] /= scale;
        }
    }
    pos
}
